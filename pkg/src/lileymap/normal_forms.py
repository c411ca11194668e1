"""Small systems with known bifurcation structure, used as ground truth."""
from __future__ import annotations

import numpy as np

from lileymap.solver import ContinuationProblem
from lileymap.systems import DynamicalSystem


class _Polynomial(DynamicalSystem):
    def __init__(self, active=None, **fixed):
        names = self.all_params
        self.values = dict(self.defaults)
        self.values.update(fixed)
        self.param_names = tuple(active) if active is not None else names[:1]
        self.fd_step = 1e-6

    def full(self, p) -> dict:
        vals = dict(self.values)
        vals.update(zip(self.param_names, np.asarray(p, dtype=float)))
        return vals


class Fold(_Polynomial):
    """x' = a - x^2."""

    n = 1
    all_params = ("a",)
    defaults = {"a": 0.0}

    def f(self, y, p):
        a = self.full(p)["a"]
        return np.array([a - y[0] ** 2])

    def fy(self, y, p):
        return np.array([[-2.0 * y[0]]])


class HopfPlanar(_Polynomial):
    """x' = a x - y - x r^2, y' = x + a y - y r^2 (supercritical, frequency 1)."""

    n = 2
    all_params = ("a",)
    defaults = {"a": 0.0}

    def f(self, y, p):
        a = self.full(p)["a"]
        x1, x2 = y
        r2 = x1 * x1 + x2 * x2
        return np.array([a * x1 - x2 - x1 * r2, x1 + a * x2 - x2 * r2])

    def fy(self, y, p):
        a = self.full(p)["a"]
        x1, x2 = y
        return np.array([[a - 3 * x1 * x1 - x2 * x2, -1 - 2 * x1 * x2],
                         [1 - 2 * x1 * x2, a - x1 * x1 - 3 * x2 * x2]])


class Cusp(_Polynomial):
    """x' = b1 + b2 x - x^3."""

    n = 1
    all_params = ("b1", "b2")
    defaults = {"b1": 0.0, "b2": 0.0}

    def f(self, y, p):
        v = self.full(p)
        return np.array([v["b1"] + v["b2"] * y[0] - y[0] ** 3])

    def fy(self, y, p):
        v = self.full(p)
        return np.array([[v["b2"] - 3 * y[0] ** 2]])


class Swallowtail(_Polynomial):
    """x' = b1 + b2 x + b3 x^2 - x^4 (b3 held fixed)."""

    n = 1
    all_params = ("b1", "b2", "b3")
    defaults = {"b1": 0.0, "b2": 0.0, "b3": -1.0}

    def f(self, y, p):
        v = self.full(p)
        x = y[0]
        return np.array([v["b1"] + v["b2"] * x + v["b3"] * x * x - x ** 4])

    def fy(self, y, p):
        v = self.full(p)
        x = y[0]
        return np.array([[v["b2"] + 2 * v["b3"] * x - 4 * x ** 3]])


class Bautin(_Polynomial):
    """z' = (b1 + i) z + b2 z|z|^2 - z|z|^4 in real coordinates."""

    n = 2
    all_params = ("b1", "b2")
    defaults = {"b1": 0.0, "b2": -1.0}

    def f(self, y, p):
        v = self.full(p)
        x1, x2 = y
        r2 = x1 * x1 + x2 * x2
        g = v["b1"] + v["b2"] * r2 - r2 * r2
        return np.array([g * x1 - x2, x1 + g * x2])


class BogdanovTakens(_Polynomial):
    """x' = y, y' = b1 + b2 x + x^2 + x y."""

    n = 2
    all_params = ("b1", "b2")
    defaults = {"b1": 0.0, "b2": 0.0}

    def f(self, y, p):
        v = self.full(p)
        x1, x2 = y
        return np.array([x2, v["b1"] + v["b2"] * x1 + x1 * x1 + x1 * x2])

    def fy(self, y, p):
        v = self.full(p)
        x1, x2 = y
        return np.array([[0.0, 1.0], [v["b2"] + 2 * x1 + x2, x1]])


class FoldHopf(_Polynomial):
    """x' = b1 + x^2 + s (y^2 + z^2), with (y, z) rotating at unit rate and
    damped by b2 + theta x.  The fold curve b1 = -x^2 carries a fold-Hopf
    point where b2 + theta x changes sign."""

    n = 3
    all_params = ("b1", "b2")
    defaults = {"b1": 0.0, "b2": 0.0}

    def __init__(self, active=None, s: float = -1.0, theta: float = 1.0, **fixed):
        super().__init__(active, **fixed)
        self.s = s
        self.theta = theta

    def f(self, y, p):
        v = self.full(p)
        x, u, w = y
        r2 = u * u + w * w
        g = v["b2"] + self.theta * x - r2
        return np.array([v["b1"] + x * x + self.s * r2, g * u - w, u + g * w])


class CircleProblem(ContinuationProblem):
    """Extended system x^2 + a^2 = 1, a closed solution curve."""

    labels = ("x", "a")

    def residual(self, u):
        return np.array([u[0] ** 2 + u[1] ** 2 - 1.0])

    def jacobian(self, u):
        return np.array([[2 * u[0], 2 * u[1]]])

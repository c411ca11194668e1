"""Dynamical systems as seen by the continuation machinery.

A system exposes ``f(y, p)``, ``fy(y, p)`` and ``fp(y, p)`` in *continuation
units*: a scaled state ``y`` and a vector ``p`` of active parameters.  The
Liley adapter scales the state by typical magnitudes and time by a reference
rate (a similarity transform, so eigenvalues are only rescaled), and maps
R, k to their logarithms and thalamic inputs to units of 1000/s.
"""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from lileymap import kernels
from lileymap import model as M


class DynamicalSystem:
    """Base class; subclasses provide ``f`` and optionally analytic derivatives."""

    n: int = 0
    param_names: tuple[str, ...] = ()
    # eigenvalues of fy multiplied by this give physical rates (1/s)
    rate_unit: float = 1.0
    fd_step: float = 1e-6

    def f(self, y, p) -> np.ndarray:
        raise NotImplementedError

    def fy(self, y, p) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.empty((self.n, self.n))
        for j in range(self.n):
            h = self.fd_step * max(1.0, abs(y[j]))
            e = np.zeros(self.n)
            e[j] = h
            out[:, j] = (self.f(y + e, p) - self.f(y - e, p)) / (2 * h)
        return out

    def fp(self, y, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        out = np.empty((self.n, p.size))
        for j in range(p.size):
            h = self.fd_step * max(1.0, abs(p[j]))
            e = np.zeros(p.size)
            e[j] = h
            out[:, j] = (self.f(y, p + e) - self.f(y, p - e)) / (2 * h)
        return out

    def flow(self, y, p, t: float, nsteps: int, variational: bool = True):
        """RK4 flow over time ``t``: (y(t), monodromy or None, max of y[0]).

        Generic and slow; the Liley adapter overrides it with compiled kernels.
        """
        y = np.array(y, dtype=float)
        dt = t / nsteps
        M = np.eye(self.n) if variational else None
        top = y[0]
        for _ in range(nsteps):
            k1 = self.f(y, p)
            k2 = self.f(y + 0.5 * dt * k1, p)
            k3 = self.f(y + 0.5 * dt * k2, p)
            k4 = self.f(y + dt * k3, p)
            if variational:
                K1 = self.fy(y, p) @ M
                K2 = self.fy(y + 0.5 * dt * k1, p) @ (M + 0.5 * dt * K1)
                K3 = self.fy(y + 0.5 * dt * k2, p) @ (M + 0.5 * dt * K2)
                K4 = self.fy(y + dt * k3, p) @ (M + dt * K3)
                M = M + dt / 6.0 * (K1 + 2 * K2 + 2 * K3 + K4)
            y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            top = max(top, y[0])
        return y, M, top

    def first_component(self, y) -> float:
        """The observable plotted for orbits (h_e for the cortex model)."""
        return float(y[0])

    # multilinear forms through differences of the Jacobian
    def bilinear(self, y, p, u, v, h: float = 1e-4) -> np.ndarray:
        """B(u, v) = D^2 f[u, v]."""
        u = np.asarray(u, dtype=float)
        return (self.fy(y + h * u, p) - self.fy(y - h * u, p)) @ v / (2 * h)

    def trilinear_diag(self, y, p, u, w, h: float = 1e-4) -> np.ndarray:
        """C(u, u, w) = D^3 f[u, u, w]."""
        u = np.asarray(u, dtype=float)
        return (self.fy(y + h * u, p) - 2 * self.fy(y, p) + self.fy(y - h * u, p)) @ w / h**2


_LOG_AXES = ("R", "k")
_INPUT_UNIT = 1000.0  # thalamic inputs are continued in units of 1000/s


class LileySystem(DynamicalSystem):
    """The 14-dimensional Liley system with chosen active parameters.

    ``active`` is a subset of ("R", "k", "p_ee", "p_ei").  Inactive values
    come from ``params`` and ``base`` (the modulation).
    """

    n = M.N_STATE

    def __init__(self, params: M.ParameterSet, active: Sequence[str] = ("R",),
                 base: M.Modulation = M.BASELINE, omega_ref: float = 100.0):
        for name in active:
            if name not in M.ACTIVE_PARAMETERS:
                raise ValueError(f"unknown active parameter {name!r}")
        self.params = params
        self.base = base
        self.param_names = tuple(active)
        self.omega_ref = float(omega_ref)
        self.rate_unit = self.omega_ref
        self.xs = M.state_scales(params, base)
        self._cache_key = None
        self._cache_c = None

    # ---- parameter mapping
    def to_units(self, name: str, value: float) -> float:
        if name in _LOG_AXES:
            return math.log(value)
        return value / _INPUT_UNIT

    def from_units(self, name: str, value: float) -> float:
        if name in _LOG_AXES:
            return math.exp(value)
        return value * _INPUT_UNIT

    def p_from(self, **values) -> np.ndarray:
        """Active-parameter vector from physical values (defaults from the base)."""
        out = []
        for name in self.param_names:
            if name in values:
                v = values[name]
            elif name in _LOG_AXES:
                v = getattr(self.base, name)
            else:
                v = getattr(self.params, name)
            out.append(self.to_units(name, v))
        return np.array(out)

    def physical(self, p) -> tuple[M.ParameterSet, M.Modulation]:
        R, k = self.base.R, self.base.k
        changes = {}
        for name, value in zip(self.param_names, np.asarray(p, dtype=float)):
            v = self.from_units(name, float(value))
            if name == "R":
                R = v
            elif name == "k":
                k = v
            else:
                changes[name] = v
        params = replace(self.params, **changes) if changes else self.params
        return params, M.Modulation(R, k)

    def physical_values(self, p) -> dict[str, float]:
        return {n: self.from_units(n, float(v)) for n, v in zip(self.param_names, p)}

    def _coef(self, p) -> np.ndarray:
        key = tuple(np.asarray(p, dtype=float).tolist())
        if key != self._cache_key:
            params, m = self.physical(p)
            self._cache_c = M.pack_coefficients(params, m)
            self._cache_key = key
        return self._cache_c

    # ---- state mapping
    def scales(self, p=None) -> np.ndarray:
        """State scales at active parameters ``p``.

        Inhibitory synaptic variables grow in proportion to R (and R*k for
        the inhibitory-inhibitory pair), so their scales follow those factors;
        this keeps scaled states bounded along branches spanning decades of R.
        """
        if p is None:
            return self.xs
        d = self.xs.copy()
        rk = self._log_factors(p)
        d[4:6] *= math.exp(rk[0])
        d[8:10] *= math.exp(rk[0] + rk[1])
        return d

    def _log_factors(self, p) -> tuple[float, float]:
        """log(R/R0), log(k/k0) for the active-parameter vector."""
        lr = lk = 0.0
        for name, value in zip(self.param_names, np.asarray(p, dtype=float)):
            if name == "R":
                lr = value - math.log(self.base.R)
            elif name == "k":
                lk = value - math.log(self.base.k)
        return lr, lk

    def to_state(self, y, p=None) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.scales(p)

    def from_state(self, x, p=None) -> np.ndarray:
        return np.asarray(x, dtype=float) / self.scales(p)

    # ---- dynamics in continuation units
    def f(self, y, p) -> np.ndarray:
        d = self.scales(p)
        x = np.ascontiguousarray(np.asarray(y, dtype=float) * d)
        # a diverging corrector can underflow a scale to zero; the non-finite
        # residual is rejected by Newton
        with np.errstate(divide="ignore", invalid="ignore"):
            return kernels.rhs(x, self._coef(p)) / (d * self.omega_ref)

    def fy(self, y, p) -> np.ndarray:
        d = self.scales(p)
        x = np.ascontiguousarray(np.asarray(y, dtype=float) * d)
        J = kernels.jac(x, self._coef(p))
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            return J * (d[None, :] / (d[:, None] * self.omega_ref))

    def fp(self, y, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        d = self.scales(p)
        x = np.ascontiguousarray(np.asarray(y, dtype=float) * d)
        params, m = self.physical(p)
        raw = M.parameter_jacobian(x, params, m, self.param_names)
        for j, name in enumerate(self.param_names):
            if name in _LOG_AXES:
                raw[:, j] *= getattr(m, name)
            else:
                raw[:, j] *= _INPUT_UNIT
        out = raw / (d * self.omega_ref)[:, None]
        if any(name in _LOG_AXES for name in self.param_names):
            c = self._coef(p)
            J = kernels.jac(x, c)
            fx = kernels.rhs(x, c)
            for j, name in enumerate(self.param_names):
                if name not in _LOG_AXES:
                    continue
                e = np.zeros(self.n)
                e[8:10] = 1.0
                if name == "R":
                    e[4:6] = 1.0
                # derivative of the scaling itself: x = D(p) y with dD/dp = D e
                out[:, j] += (J @ (e * x) - e * fx) / (d * self.omega_ref)
        return out

    def flow(self, y, p, t: float, nsteps: int, variational: bool = True):
        """Flow over scaled time ``t``; the maximum is h_e in mV."""
        d = self.scales(p)
        x = np.ascontiguousarray(np.asarray(y, dtype=float) * d)
        c = self._coef(p)
        dt = t / (nsteps * self.omega_ref)
        if variational:
            xt, Mx, hmax, _ = kernels.integrate_variational(x, c, dt, nsteps)
            Mt = Mx * (d[None, :] / d[:, None])
        else:
            xt, samples = kernels.integrate(x, c, dt, nsteps, 1)
            Mt = None
            hmax = float(samples[:, 0].max())
        return np.asarray(xt) / d, Mt, float(hmax)

    def first_component(self, y) -> float:
        return float(y[0] * self.xs[0])

    def physical_eigenvalues(self, y, p) -> np.ndarray:
        return np.linalg.eigvals(self.fy(y, p)) * self.omega_ref

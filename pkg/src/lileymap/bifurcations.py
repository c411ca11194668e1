"""Codimension-one and -two bifurcations, curve continuation and periodic orbits.

Every routine works on a :class:`~lileymap.systems.DynamicalSystem`, so the
normal forms in :mod:`lileymap.normal_forms` exercise exactly the code that
runs on the cortex model.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from lileymap import model as M
from lileymap import solver as S
from lileymap.systems import DynamicalSystem, LileySystem

log = logging.getLogger(__name__)

KINDS = ("SaddleNode", "Hopf", "Cusp", "BogdanovTakens", "FoldHopf", "GeneralizedHopf",
         "FoldOfCycles")

# thresholds in scaled (continuation) units
ZERO_EIG = 1e-6
MIN_FREQUENCY = 1e-4
TANGENCY_DISTANCE = 1e-4


class InitializationFailure(ValueError):
    pass


class IllConditioned(RuntimeError):
    pass


class ShootingDivergence(RuntimeError):
    def __init__(self, message: str, last_point=None):
        super().__init__(message)
        self.last_point = last_point


@dataclass
class BifurcationPoint:
    """A located bifurcation with its defining diagnostics.

    ``location`` holds physical parameter values, ``state`` the physical
    state vector, and ``u`` the point in continuation units.
    """

    kind: str
    location: dict
    state: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    u: np.ndarray | None = None
    index: int | None = None

    def to_json(self) -> dict:
        return {"kind": self.kind, "location": dict(self.location),
                "state": np.asarray(self.state).tolist(),
                "diagnostics": _jsonable(self.diagnostics),
                "index": self.index}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.complexfloating):
        return [float(obj.real), float(obj.imag)]
    return obj


def _physical(system: DynamicalSystem, y, p) -> tuple[dict, np.ndarray]:
    if hasattr(system, "physical_values"):
        loc = system.physical_values(p)
        state = system.to_state(y, p)
    else:
        loc = {n: float(v) for n, v in zip(system.param_names, p)}
        state = np.array(y, dtype=float)
    return loc, state


def _complex_pairs(eigs, min_im: float = MIN_FREQUENCY * 1e-2):
    return eigs[eigs.imag > min_im]


def hopf_test(eigs) -> float:
    """Product of real parts over complex pairs; changes sign when a pair crosses."""
    pairs = _complex_pairs(np.asarray(eigs))
    return float(np.prod(pairs.real)) if pairs.size else 1.0


def _nearest_pair(eigs):
    pairs = _complex_pairs(np.asarray(eigs))
    if not pairs.size:
        return None
    return pairs[np.argmin(np.abs(pairs.real))]


# ---------------------------------------------------------------- equilibrium branches

def equilibrium_branch(system: DynamicalSystem, y0, p0, config: S.ContinuationConfig,
                       both: bool = True) -> S.Branch:
    """One-parameter equilibrium branch with eigenvalues at every point."""
    prob = S.EquilibriumProblem(system)
    start = np.concatenate([np.asarray(y0, dtype=float), np.atleast_1d(p0).astype(float)])
    br = S.continue_branch(prob, start, config, both=both,
                           eigen=lambda u: np.linalg.eigvals(system.fy(u[:-1], u[-1:])))
    br.problem = prob
    br.meta["kind"] = "equilibrium"
    br.meta["param_names"] = list(system.param_names)
    return br


def liley_branch(params: M.ParameterSet, axis: str = "R", base: M.Modulation = M.BASELINE,
                 window: tuple[float, float] = (1e-4, 1e4), x0=None,
                 config: S.ContinuationConfig | None = None) -> S.Branch:
    """Equilibrium branch of the cortex model in R (or k, p_ee, p_ei).

    Starts from the equilibrium reached from the default initial condition.
    """
    system = LileySystem(params, (axis,), base)
    if x0 is None:
        x0 = S.solve_equilibrium(params, base)
    p0 = system.p_from()
    lo, hi = (system.to_units(axis, w) for w in window)
    cfg = config or S.ContinuationConfig()
    cfg = S.ContinuationConfig(cfg.initial_step, cfg.min_step, cfg.max_step, cfg.tol,
                               cfg.max_newton, cfg.max_points, [(M.N_STATE, lo, hi)])
    return equilibrium_branch(system, system.from_state(x0, p0), p0, cfg)


def _eigen_data(branch: S.Branch, system: DynamicalSystem):
    if not branch.eigen_data:
        n = system.n
        branch.eigen_data = [np.linalg.eigvals(system.fy(u[:n], u[-len(system.param_names):]))
                             for u in branch.u]
    return branch.eigen_data


def detect_codim1(branch: S.Branch, system: DynamicalSystem | None = None) -> list[BifurcationPoint]:
    """Saddle-nodes and Hopf points along an equilibrium branch.

    Fold: the sign of det(f_y) (the product of real eigenvalues) changes.
    Hopf: the number of unstable complex eigenvalues changes by two.
    Each is sharpened by root finding on its test function along the curve.
    """
    prob = getattr(branch, "problem", None)
    system = system or prob.system
    prob = prob or S.EquilibriumProblem(system)
    n = system.n
    eigs = _eigen_data(branch, system)
    out: list[BifurcationPoint] = []

    def det_test(u):
        return float(np.linalg.det(system.fy(u[:n], u[n:])))

    def hopf_fn(u):
        return hopf_test(np.linalg.eigvals(system.fy(u[:n], u[n:])))

    for i in range(len(branch) - 1):
        ea, eb = eigs[i], eigs[i + 1]
        ua, ub, ta = branch.u[i], branch.u[i + 1], branch.tangents[i]
        if np.sign(np.prod(ea).real) != np.sign(np.prod(eb).real):
            try:
                u = S.locate_zero(prob, ua, ta, ub, det_test)
            except (ValueError, S.NonConvergence):
                u = None
            if u is not None:
                ev = np.linalg.eigvals(system.fy(u[:n], u[n:]))
                crit = ev[np.argmin(np.abs(ev))]
                loc, state = _physical(system, u[:n], u[n:])
                out.append(BifurcationPoint("SaddleNode", loc, state,
                                            {"eigenvalue": crit * system.rate_unit,
                                             "scaled_eigenvalue": crit}, u, i))
        ca = int(np.sum(_complex_pairs(ea).real > 0))
        cb = int(np.sum(_complex_pairs(eb).real > 0))
        if ca != cb:
            try:
                u = S.locate_zero(prob, ua, ta, ub, hopf_fn)
            except (ValueError, S.NonConvergence):
                continue
            ev = np.linalg.eigvals(system.fy(u[:n], u[n:]))
            pair = _nearest_pair(ev)
            if pair is None or abs(pair.real) > ZERO_EIG or pair.imag < MIN_FREQUENCY:
                continue  # a pair splitting on the real axis, not a crossing
            loc, state = _physical(system, u[:n], u[n:])
            out.append(BifurcationPoint("Hopf", loc, state,
                                        {"eigenvalue": pair * system.rate_unit,
                                         "angular_frequency": pair.imag * system.rate_unit,
                                         "scaled_eigenvalue": pair}, u, i))
    branch.events = out
    return out


# ---------------------------------------------------------------- fold curves

class FoldCurveProblem(S.ContinuationProblem):
    """f(y, p) = 0 with a bordered singularity condition g(y, p) = 0.

    Unknowns are (y, p1, p2).  The borders are refreshed to the current
    null vectors after every accepted point.
    """

    def __init__(self, system: DynamicalSystem, u0, eps: float = 1e-6):
        if len(system.param_names) != 2:
            raise ValueError("fold curves need two active parameters")
        self.system = system
        self.n = system.n
        self.eps = eps
        self.labels = tuple(f"y{i}" for i in range(self.n)) + tuple(system.param_names)
        A = system.fy(u0[:self.n], u0[self.n:])
        U, _, Vt = np.linalg.svd(A)
        self.b = U[:, -1].copy()
        self.c = Vt[-1].copy()

    def _bordered(self, A):
        n = self.n
        Mb = np.zeros((n + 1, n + 1))
        Mb[:n, :n] = A
        Mb[:n, n] = self.b
        Mb[n, :n] = self.c
        e = np.zeros(n + 1)
        e[n] = 1.0
        sol = np.linalg.solve(Mb, e)
        solt = np.linalg.solve(Mb.T, e)
        return sol[:n], solt[:n], sol[n]

    def residual(self, u):
        y, p = u[:self.n], u[self.n:]
        A = self.system.fy(y, p)
        _, _, g = self._bordered(A)
        return np.append(self.system.f(y, p), g)

    def jacobian(self, u):
        sys, n = self.system, self.n
        y, p = u[:n], u[n:]
        A = sys.fy(y, p)
        v, w, _ = self._bordered(A)
        h = self.eps / max(np.linalg.norm(v), 1e-300)
        yp, ym = y + h * v, y - h * v
        gy = -(w @ (sys.fy(yp, p) - sys.fy(ym, p))) / (2 * h)
        gp = -(w @ (sys.fp(yp, p) - sys.fp(ym, p))) / (2 * h)
        top = np.hstack([A, sys.fp(y, p)])
        return np.vstack([top, np.concatenate([gy, gp])[None, :]])

    def accept(self, u):
        v, w = self.null_vectors(u)
        self.c = v
        self.b = w

    def null_vectors(self, u, ref=None):
        """Unit right/left null vectors of f_y oriented to the current borders."""
        A = self.system.fy(u[:self.n], u[self.n:])
        U, _, Vt = np.linalg.svd(A)
        v, w = Vt[-1], U[:, -1]
        rv, rw = (self.c, self.b) if ref is None else ref
        if v @ rv < 0:
            v = -v
        if w @ rw < 0:
            w = -w
        return v, w


def fold_tests(system: DynamicalSystem, u, v, w) -> dict:
    """Test functions along a fold curve at point ``u`` with unit null vectors."""
    n = system.n
    y, p = u[:n], u[n:]
    eigs = np.linalg.eigvals(system.fy(y, p))
    rest = np.delete(eigs, np.argmin(np.abs(eigs)))
    return {
        "cusp": float(w @ system.bilinear(y, p, v, v)) / 2.0,
        "bt": float(w @ v),
        "fold_hopf": hopf_test(rest),
        "eigs": eigs,
    }


def _curve_config(config: S.ContinuationConfig | None, window) -> S.ContinuationConfig:
    cfg = config or S.ContinuationConfig()
    return S.ContinuationConfig(cfg.initial_step, cfg.min_step, cfg.max_step, cfg.tol,
                                cfg.max_newton, cfg.max_points, list(window or cfg.window),
                                cfg.closed_loop_dot)


def continue_fold_curve(system: DynamicalSystem, start, window=(),
                        config: S.ContinuationConfig | None = None,
                        detect: bool = True) -> S.Branch:
    """Trace a fold curve in two parameters and attach codim-2 events.

    ``start`` is a fold point (y, p1, p2) in continuation units, or a
    SaddleNode :class:`BifurcationPoint` whose ``u`` holds (y, p1) with the
    second parameter taken from ``system``'s defaults.  ``window`` entries
    are (index, lo, hi) in continuation units; parameter indices are n, n+1.
    """
    n = system.n
    u0 = _start_vector(system, start)
    A = system.fy(u0[:n], u0[n:])
    smin = np.linalg.svd(A, compute_uv=False)[-1]
    if not np.all(np.isfinite(u0)) or smin > 1e-4 * max(1.0, np.linalg.norm(A)) \
            or np.max(np.abs(system.f(u0[:n], u0[n:]))) > 1e-6:
        raise InitializationFailure("start point does not satisfy the fold condition")
    prob = FoldCurveProblem(system, u0)
    cfg = _curve_config(config, window)
    branch = S.continue_branch(prob, u0, cfg)
    branch.problem = prob
    branch.meta["kind"] = "fold"
    branch.meta["param_names"] = list(system.param_names)
    if detect:
        annotate_fold_curve(branch, system)
    return branch


def _start_vector(system, start) -> np.ndarray:
    n = system.n
    if isinstance(start, BifurcationPoint):
        u = np.asarray(start.u, dtype=float)
        y = u[:n]
        if hasattr(system, "p_from"):
            p = system.p_from(**start.location)
        else:
            vals = dict(getattr(system, "values", {}))
            vals.update(start.location)
            p = np.array([vals[name] for name in system.param_names])
        return np.concatenate([y, p])
    return np.asarray(start, dtype=float)


def annotate_fold_curve(branch: S.Branch, system: DynamicalSystem) -> None:
    """Evaluate null vectors and test functions at every point of a fold curve."""
    prob = branch.problem
    ref = None
    data = []
    for u in branch.u:
        if ref is None:
            A = system.fy(u[:system.n], u[system.n:])
            U, _, Vt = np.linalg.svd(A)
            ref = (Vt[-1], U[:, -1])
        v, w = prob.null_vectors(u, ref)
        ref = (v, w)
        tests = fold_tests(system, u, v, w)
        tests["v"], tests["w"] = v, w
        data.append(tests)
    branch.eigen_data = [d["eigs"] for d in data]
    branch.meta["fold_tests"] = data
    events = detect_cusp(branch, system) + detect_bt(branch, system) + detect_fold_hopf(branch, system)
    branch.events = sorted(events, key=lambda e: e.index)


def _locate_on_fold(branch, system, i, key):
    prob = branch.problem
    d = branch.meta["fold_tests"]
    ref = (d[i]["v"], d[i]["w"])
    ua, ub, ta = branch.u[i], branch.u[i + 1], branch.tangents[i]
    prob.c, prob.b = ref

    def test(u):
        v, w = prob.null_vectors(u, ref)
        return fold_tests(system, u, v, w)[key]

    return S.locate_zero(prob, ua, ta, ub, test)


def _param_tangent(branch: S.Branch, i: int, npar: int = 2) -> np.ndarray:
    t = branch.tangents[i][-npar:]
    return t / max(np.linalg.norm(t), 1e-300)


def detect_cusp(branch: S.Branch, system: DynamicalSystem | None = None) -> list[BifurcationPoint]:
    """Cusps: the quadratic fold coefficient changes sign along the curve.

    Cross-check: near a cusp the curve reverses in the parameter plane, so
    parameter-space tangents on either side point against each other.
    """
    system = system or branch.problem.system
    if "fold_tests" not in branch.meta:
        annotate_fold_curve(branch, system)
        return [e for e in branch.events if e.kind == "Cusp"]
    d = branch.meta["fold_tests"]
    out = []
    n = system.n
    for i in range(len(branch) - 1):
        if np.sign(d[i]["cusp"]) == np.sign(d[i + 1]["cusp"]):
            continue
        try:
            u = _locate_on_fold(branch, system, i, "cusp")
        except (ValueError, S.NonConvergence, np.linalg.LinAlgError):
            continue
        lo, hi = max(i - 2, 0), min(i + 3, len(branch) - 1)
        reversal = float(_param_tangent(branch, lo) @ _param_tangent(branch, hi))
        loc, state = _physical(system, u[:n], u[n:])
        out.append(BifurcationPoint("Cusp", loc, state,
                                    {"tangent_reversal": reversal, "geometric_check": reversal < 0},
                                    u, i))
    return out


def detect_bt(branch: S.Branch, system: DynamicalSystem | None = None) -> list[BifurcationPoint]:
    """Bogdanov-Takens points on a fold curve (w.v changes sign) or at the
    zero-frequency end of a Hopf curve."""
    system = system or branch.problem.system
    n = system.n
    if branch.meta.get("kind") == "hopf":
        return [e for e in branch.events if e.kind == "BogdanovTakens"]
    d = branch.meta["fold_tests"]
    out = []
    for i in range(len(branch) - 1):
        if np.sign(d[i]["bt"]) == np.sign(d[i + 1]["bt"]):
            continue
        try:
            u = _locate_on_fold(branch, system, i, "bt")
        except (ValueError, S.NonConvergence, np.linalg.LinAlgError):
            continue
        ev = np.linalg.eigvals(system.fy(u[:n], u[n:]))
        small = np.sort(np.abs(ev))[:2]
        loc, state = _physical(system, u[:n], u[n:])
        out.append(BifurcationPoint("BogdanovTakens", loc, state,
                                    {"two_smallest_moduli": small * system.rate_unit,
                                     "scaled_two_smallest": small}, u, i))
    return out


def detect_fold_hopf(branch: S.Branch, system: DynamicalSystem | None = None) -> list[BifurcationPoint]:
    """Fold-Hopf points: a complex pair crosses the axis along a fold curve."""
    system = system or branch.problem.system
    n = system.n
    d = branch.meta["fold_tests"]
    out = []
    for i in range(len(branch) - 1):
        ea, eb = d[i]["eigs"], d[i + 1]["eigs"]
        ra = np.delete(ea, np.argmin(np.abs(ea)))
        rb = np.delete(eb, np.argmin(np.abs(eb)))
        if int(np.sum(_complex_pairs(ra).real > 0)) == int(np.sum(_complex_pairs(rb).real > 0)):
            continue
        try:
            u = _locate_on_fold(branch, system, i, "fold_hopf")
        except (ValueError, S.NonConvergence, np.linalg.LinAlgError):
            continue
        ev = np.linalg.eigvals(system.fy(u[:n], u[n:]))
        zero = ev[np.argmin(np.abs(ev))]
        pair = _nearest_pair(np.delete(ev, np.argmin(np.abs(ev))))
        if pair is None or abs(pair.real) > 10 * ZERO_EIG or pair.imag < MIN_FREQUENCY:
            continue
        # tie-break against a nearby Bogdanov-Takens point: keep the better residual
        if abs(pair.real) > abs(zero) + np.sort(np.abs(ev))[1]:
            continue
        loc, state = _physical(system, u[:n], u[n:])
        out.append(BifurcationPoint("FoldHopf", loc, state,
                                    {"zero_eigenvalue": zero * system.rate_unit,
                                     "eigenvalue": pair * system.rate_unit,
                                     "angular_frequency": pair.imag * system.rate_unit,
                                     "scaled_eigenvalue": pair},
                                    u, i))
    return out


# ---------------------------------------------------------------- Hopf curves

class HopfCurveProblem(S.ContinuationProblem):
    """f = 0, (A^2 + kappa I) v = 0, <v, v0> = 1, <v, A v0> = 0.

    Unknowns (y, v, kappa, p1, p2); kappa is the squared Hopf frequency in
    scaled units, so the curve ends where kappa reaches 0.
    """

    def __init__(self, system: DynamicalSystem, u0):
        if len(system.param_names) != 2:
            raise ValueError("Hopf curves need two active parameters")
        self.system = system
        self.n = system.n
        n = self.n
        self.labels = (tuple(f"y{i}" for i in range(n)) + tuple(f"v{i}" for i in range(n))
                       + ("kappa",) + tuple(system.param_names))
        self.accept(u0)

    def split(self, u):
        n = self.n
        return u[:n], u[n:2 * n], u[2 * n], u[2 * n + 1:]

    def residual(self, u):
        y, v, kappa, p = self.split(u)
        A = self.system.fy(y, p)
        Av = A @ v
        return np.concatenate([self.system.f(y, p), A @ Av + kappa * v,
                               [v @ self.v0 - 1.0, v @ self.Av0]])

    def jacobian(self, u):
        n = self.n
        y, v, kappa, p = self.split(u)
        sys = self.system
        A = sys.fy(y, p)
        J = np.zeros((2 * n + 2, 2 * n + 3))
        J[:n, :n] = A
        J[:n, 2 * n + 1:] = sys.fp(y, p)
        J[n:2 * n, n:2 * n] = A @ A + kappa * np.eye(n)
        J[n:2 * n, 2 * n] = v
        Av = A @ v
        # derivative of A(z)^2 v along each y and p direction
        for j in range(n + len(p)):
            if j < n:
                h = 1e-6 * max(1.0, abs(y[j]))
                e = np.zeros(n)
                e[j] = h
                Ap, Am = sys.fy(y + e, p), sys.fy(y - e, p)
                col = j
            else:
                h = 1e-6 * max(1.0, abs(p[j - n]))
                e = np.zeros(len(p))
                e[j - n] = h
                Ap, Am = sys.fy(y, p + e), sys.fy(y, p - e)
                col = 2 * n + 1 + (j - n)
            dA = (Ap - Am) / (2 * h)
            J[n:2 * n, col] = dA @ Av + A @ (dA @ v)
        J[2 * n, n:2 * n] = self.v0
        J[2 * n + 1, n:2 * n] = self.Av0
        return J

    def accept(self, u):
        # the phase vector is A v with its v component removed, so the
        # accepted point satisfies both normalisations exactly
        y, v, _, p = self.split(u)
        self.v0 = v / (v @ v)
        w = self.system.fy(y, p) @ self.v0
        self.Av0 = w - (w @ v) * self.v0


def hopf_start(system: DynamicalSystem, y, p) -> np.ndarray:
    """Initial Hopf-curve vector from an equilibrium with an imaginary pair."""
    A = system.fy(y, p)
    w, V = np.linalg.eig(A)
    cand = np.where(w.imag > MIN_FREQUENCY * 1e-2)[0]
    if not cand.size:
        raise InitializationFailure("no complex pair at the start point")
    j = cand[np.argmin(np.abs(w[cand].real))]
    if abs(w[j].real) > 1e-4 * max(1.0, abs(w[j])):
        raise InitializationFailure("start point does not satisfy the Hopf condition")
    q = _orthogonal_phase(V[:, j])
    v = q.real / np.linalg.norm(q.real)
    return np.concatenate([y, v, [w[j].imag ** 2], p])


def _orthogonal_phase(q):
    """Rotate a complex vector so its real and imaginary parts are orthogonal,
    with the real part the longer one."""
    a, b = q.real, q.imag
    theta = 0.5 * math.atan2(-2 * (a @ b), a @ a - b @ b)
    q = q * np.exp(1j * theta)
    if np.linalg.norm(q.real) < np.linalg.norm(q.imag):
        q = q * 1j
    return q


def continue_hopf_curve(system: DynamicalSystem, start, window=(),
                        config: S.ContinuationConfig | None = None,
                        lyapunov: bool = True) -> S.Branch:
    """Trace a Hopf curve in two parameters with BT, fold-Hopf and GH events.

    ``start`` is a Hopf :class:`BifurcationPoint` or (y, p1, p2).  The curve
    stops where the frequency reaches zero (a Bogdanov-Takens point).
    ``window`` indices refer to the parameter columns as for fold curves
    (n, n+1) and are shifted internally.
    """
    n = system.n
    u = _start_vector(system, start)
    u0 = hopf_start(system, u[:n], u[n:])
    prob = HopfCurveProblem(system, u0)
    shift = [(idx + n + 1 if idx >= n else idx, lo, hi) for idx, lo, hi in (window or ())]
    # frequency must stay positive; the lower bound makes the BT end a window exit
    shift.append((2 * n, 0.0, np.inf))
    cfg = _curve_config(config, shift)
    branch = S.continue_branch(prob, u0, cfg)
    branch.problem = prob
    branch.meta["kind"] = "hopf"
    branch.meta["param_names"] = list(system.param_names)
    annotate_hopf_curve(branch, system, lyapunov=lyapunov)
    return branch


def annotate_hopf_curve(branch: S.Branch, system: DynamicalSystem, lyapunov: bool = True) -> None:
    n = system.n
    prob = branch.problem
    eigs, dets, l1s = [], [], []
    for u in branch.u:
        y, _, kappa, p = prob.split(u)
        A = system.fy(y, p)
        eigs.append(np.linalg.eigvals(A))
        dets.append(float(np.linalg.det(A)))
        if lyapunov and kappa > 1e-10:
            try:
                l1s.append(lyapunov_coefficient(system, y, p))
            except IllConditioned:
                l1s.append(float("nan"))
        else:
            l1s.append(float("nan"))
    branch.eigen_data = eigs
    branch.meta["det"] = dets
    branch.meta["l1"] = l1s
    branch.meta["angular_frequency"] = [math.sqrt(max(k, 0.0)) * system.rate_unit
                                for k in branch.u[:, 2 * n]]
    events: list[BifurcationPoint] = []
    # zero frequency: the window clamp put the end point exactly on kappa = 0
    for end, idx in ((0, 0), (-1, len(branch) - 1)):
        u = branch.u[end]
        if abs(u[2 * n]) < 1e-8:
            y, _, _, p = prob.split(u)
            loc, state = _physical(system, y, p)
            ev = np.linalg.eigvals(system.fy(y, p))
            events.append(BifurcationPoint("BogdanovTakens", loc, state,
                                           {"kappa": float(u[2 * n]),
                                            "two_smallest_moduli": np.sort(np.abs(ev))[:2] * system.rate_unit},
                                           _hopf_to_plain(prob, u), idx))
    for i in range(len(branch) - 1):
        ua, ub, ta = branch.u[i], branch.u[i + 1], branch.tangents[i]
        if np.sign(dets[i]) != np.sign(dets[i + 1]):
            try:
                prob.accept(ua)
                u = S.locate_zero(prob, ua, ta, ub,
                                  lambda z: float(np.linalg.det(system.fy(*_yp(prob, z)))))
            except (ValueError, S.NonConvergence, np.linalg.LinAlgError):
                u = None
            if u is not None:
                y, _, kappa, p = prob.split(u)
                if kappa > MIN_FREQUENCY ** 2:
                    loc, state = _physical(system, y, p)
                    ev = np.linalg.eigvals(system.fy(y, p))
                    events.append(BifurcationPoint("FoldHopf", loc, state,
                                                   {"zero_eigenvalue": ev[np.argmin(np.abs(ev))] * system.rate_unit,
                                                    "angular_frequency": math.sqrt(kappa) * system.rate_unit},
                                                   _hopf_to_plain(prob, u), i))
        la, lb = l1s[i], l1s[i + 1]
        if lyapunov and np.isfinite(la) and np.isfinite(lb) and np.sign(la) != np.sign(lb):
            try:
                prob.accept(ua)
                u = S.locate_zero(prob, ua, ta, ub,
                                  lambda z: lyapunov_coefficient(system, *_yp(prob, z)), xtol=1e-8)
            except (ValueError, S.NonConvergence, np.linalg.LinAlgError, IllConditioned):
                continue
            y, _, kappa, p = prob.split(u)
            # l1 also changes sign through the pole at a fold-Hopf point
            if not abs(lyapunov_coefficient(system, y, p)) < min(abs(la), abs(lb)):
                continue
            loc, state = _physical(system, y, p)
            events.append(BifurcationPoint("GeneralizedHopf", loc, state,
                                           {"angular_frequency": math.sqrt(max(kappa, 0)) * system.rate_unit,
                                            "l1_left": la, "l1_right": lb},
                                           _hopf_to_plain(prob, u), i))
    if len(branch):
        prob.accept(branch.u[-1])
    branch.events = sorted(events, key=lambda e: e.index)


def _yp(prob: HopfCurveProblem, u):
    y, _, _, p = prob.split(u)
    return y, p


def _hopf_to_plain(prob: HopfCurveProblem, u) -> np.ndarray:
    y, _, _, p = prob.split(u)
    return np.concatenate([y, p])


def detect_gh(branch: S.Branch, system: DynamicalSystem | None = None) -> list[BifurcationPoint]:
    """Generalized Hopf points (first Lyapunov coefficient changes sign)."""
    if branch.meta.get("kind") != "hopf":
        raise ValueError("detect_gh needs a Hopf curve")
    return [e for e in branch.events if e.kind == "GeneralizedHopf"]


# ---------------------------------------------------------------- Lyapunov coefficient

def _bilinear_c(system, y, p, u, v, h):
    """B(u, v) for complex u, v via real and imaginary parts."""
    u = np.asarray(u)
    if np.iscomplexobj(u):
        return system.bilinear(y, p, u.real, v, h) + 1j * system.bilinear(y, p, u.imag, v, h)
    return system.bilinear(y, p, u, v, h)


def lyapunov_coefficient(system: DynamicalSystem, y, p, h: float = 1e-4) -> float:
    """First Lyapunov coefficient at a Hopf equilibrium, in scaled units.

    Projection formula with multilinear forms from central differences of
    the Jacobian.  Negative means supercritical.
    """
    n = system.n
    A = system.fy(y, p)
    w, V = np.linalg.eig(A)
    cand = np.where(w.imag > 0)[0]
    if not cand.size:
        raise IllConditioned("no complex pair")
    j = cand[np.argmin(np.abs(w[cand].real))]
    omega = w[j].imag
    if omega < MIN_FREQUENCY * 1e-1:
        raise IllConditioned("Hopf frequency too small")
    q = V[:, j] / np.linalg.norm(V[:, j])
    wl, U = np.linalg.eig(A.T)
    jl = np.argmin(np.abs(wl + 1j * omega))
    pv = U[:, jl]
    denom = np.vdot(pv, q)
    if abs(denom) < 1e-12:
        raise IllConditioned("adjoint eigenvector orthogonal to the eigenvector")
    pv = pv / np.conj(denom)  # now <p, q> = conj(p).q = 1
    qb = np.conj(q)
    a, b = q.real, q.imag
    # C(q, q, qbar) by polarisation of the diagonal third derivative
    C = (system.trilinear_diag(y, p, a, qb, h) - system.trilinear_diag(y, p, b, qb, h)
         + 0.5j * (system.trilinear_diag(y, p, a + b, qb, h)
                   - system.trilinear_diag(y, p, a - b, qb, h)))
    Bqqb = _bilinear_c(system, y, p, q, qb, h)
    Bqq = _bilinear_c(system, y, p, q, q, h)
    try:
        s1 = np.linalg.solve(A, Bqqb)
        s2 = np.linalg.solve(2j * omega * np.eye(n) - A, Bqq)
    except np.linalg.LinAlgError as exc:
        raise IllConditioned(str(exc)) from exc
    val = (np.vdot(pv, C) - 2 * np.vdot(pv, _bilinear_c(system, y, p, q, s1, h))
           + np.vdot(pv, _bilinear_c(system, y, p, qb, s2, h)))
    return float(val.real / (2 * omega))


def first_lyapunov_coeff(pt: BifurcationPoint, system: DynamicalSystem) -> float:
    """l1 at a located Hopf point (sign gives sub/supercritical)."""
    n = system.n
    u = np.asarray(pt.u, dtype=float)
    if pt.kind != "Hopf":
        raise ValueError("first_lyapunov_coeff needs a Hopf point")
    return lyapunov_coefficient(system, u[:n], _params_of(system, pt, u))


def _params_of(system, pt, u):
    n = system.n
    if u.size == n + len(system.param_names):
        return u[n:]
    return _start_vector(system, pt)[n:]


# ---------------------------------------------------------------- periodic orbits

class ShootingProblem(S.ContinuationProblem):
    """Multiple shooting for a periodic orbit with period and one parameter free.

    Unknowns (X_0 .. X_{m-1}, T, p); equations: segment matching plus an
    anchoring phase condition <X_0 - X_ref, f(X_ref)> = 0.
    """

    def __init__(self, system: DynamicalSystem, segments: int = 4, steps: int = 100):
        if len(system.param_names) != 1:
            raise ValueError("cycle continuation needs one active parameter")
        self.system = system
        self.n = system.n
        self.m = segments
        self.steps = steps
        self.labels = tuple(f"X{s}_{i}" for s in range(segments) for i in range(self.n)) + ("T", "p")
        self.x_ref = None
        self.f_ref = None
        self._cache = {}

    def split(self, u):
        n, m = self.n, self.m
        return u[:n * m].reshape(m, n), u[n * m], u[n * m + 1:]

    def _flows(self, u, variational):
        key = (u.tobytes(), variational)
        if key in self._cache:
            return self._cache[key]
        X, T, p = self.split(u)
        res = [self.system.flow(X[s], p, T / self.m, self.steps, variational) for s in range(self.m)]
        self._cache = {key: res}
        return res

    def matching(self, u) -> np.ndarray:
        X, T, p = self.split(u)
        flows = self._flows(u, False)
        return np.concatenate([flows[s][0] - X[(s + 1) % self.m] for s in range(self.m)])

    def residual(self, u):
        X, _, _ = self.split(u)
        return np.append(self.matching(u), (X[0] - self.x_ref) @ self.f_ref)

    def jacobian(self, u):
        n, m = self.n, self.m
        X, T, p = self.split(u)
        flows = self._flows(u, True)
        J = np.zeros((n * m + 1, n * m + 2))
        for s in range(m):
            r = slice(s * n, (s + 1) * n)
            J[r, s * n:(s + 1) * n] = flows[s][1]
            nxt = (s + 1) % m
            J[r, nxt * n:(nxt + 1) * n] -= np.eye(n)
            J[r, n * m] = self.system.f(flows[s][0], p) / m
        hp = 1e-6 * max(1.0, abs(p[0]))
        for s in range(m):
            up = self.system.flow(X[s], p + hp, T / m, self.steps, False)[0]
            um = self.system.flow(X[s], p - hp, T / m, self.steps, False)[0]
            J[s * n:(s + 1) * n, n * m + 1] = (up - um) / (2 * hp)
        J[n * m, :n] = self.f_ref
        return J

    def set_anchor(self, u):
        X, _, p = self.split(u)
        self.x_ref = X[0].copy()
        fr = self.system.f(self.x_ref, p)
        self.f_ref = fr / max(np.linalg.norm(fr), 1e-300)

    def accept(self, u):
        self.set_anchor(u)

    def monodromy(self, u) -> np.ndarray:
        flows = self._flows(u, True)
        Mt = np.eye(self.n)
        for s in range(self.m):
            Mt = flows[s][1] @ Mt
        return Mt

    def orbit_max(self, u) -> float:
        flows = self._flows(u, False)
        return max(fl[2] for fl in flows)


def trivial_multiplier_index(mults) -> int:
    return int(np.argmin(np.abs(np.asarray(mults) - 1.0)))


ALPHA_PERIODS = (1.0 / 13.0, 1.0 / 8.0)   # s


@dataclass
class CycleBranch:
    """Periodic orbits along one parameter, with Floquet data.

    Arrays are per point: ``states`` (initial state, physical units),
    ``periods`` (s for the cortex model), ``params`` (physical), ``max_h_e``.
    """

    states: np.ndarray
    periods: np.ndarray
    params: np.ndarray
    multipliers: list
    stable: np.ndarray
    max_h_e: np.ndarray
    closure_error: np.ndarray
    param_name: str
    events: list = field(default_factory=list)
    status: dict = field(default_factory=dict)
    branch: S.Branch | None = None

    def __len__(self) -> int:
        return len(self.periods)

    @property
    def alpha_band(self) -> np.ndarray:
        """Points whose period lies in the alpha band, 1/13 to 1/8 s."""
        return (self.periods >= ALPHA_PERIODS[0]) & (self.periods <= ALPHA_PERIODS[1])

    def to_csv(self) -> str:
        lead = [float(np.max(np.abs(np.delete(mu, trivial_multiplier_index(mu))))) if len(mu) > 1 else 0.0
                for mu in self.multipliers]
        lines = [f"{self.param_name},period,max_h_e,stable,leading_multiplier,closure_error"]
        for i in range(len(self)):
            lines.append(f"{float(self.params[i])!r},{float(self.periods[i])!r},{float(self.max_h_e[i])!r},"
                         f"{int(self.stable[i])},{lead[i]!r},{self.closure_error[i]!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {"param_name": self.param_name, "states": self.states.tolist(),
                "periods": self.periods.tolist(), "params": self.params.tolist(),
                "multipliers": [[[float(z.real), float(z.imag)] for z in mu] for mu in self.multipliers],
                "stable": [bool(s) for s in self.stable], "max_h_e": self.max_h_e.tolist(),
                "closure_error": self.closure_error.tolist(),
                "events": [e.to_json() for e in self.events], "status": self.status}


def _time_unit(system) -> float:
    return 1.0 / system.rate_unit


def cycle_point(prob: ShootingProblem, u) -> dict:
    mults = np.linalg.eigvals(prob.monodromy(u))
    j = trivial_multiplier_index(mults)
    rest = np.delete(mults, j)
    return {"multipliers": mults, "stable": bool(np.all(np.abs(rest) < 1.0)),
            "max": prob.orbit_max(u), "closure": float(np.max(np.abs(prob.matching(u))))}


def initial_cycle(system: DynamicalSystem, y_eq, p_eq, amplitude: float,
                  segments: int = 4, steps: int = 100, tol: float = 1e-10) -> tuple[ShootingProblem, np.ndarray]:
    """Small orbit near a Hopf equilibrium with prescribed projected amplitude."""
    n = system.n
    A = system.fy(y_eq, p_eq)
    w, V = np.linalg.eig(A)
    cand = np.where(w.imag > 0)[0]
    if not cand.size:
        raise InitializationFailure("no complex pair at the Hopf point")
    j = cand[np.argmin(np.abs(w[cand].real))]
    omega = w[j].imag
    q = _orthogonal_phase(V[:, j])
    q = q / np.linalg.norm(q.real)
    T = 2 * math.pi / omega
    prob = ShootingProblem(system, segments, steps)
    X = [y_eq + amplitude * (q * np.exp(1j * omega * T * s / segments)).real for s in range(segments)]
    u0 = np.concatenate([np.concatenate(X), [T], np.atleast_1d(p_eq)])
    a_dir, b_dir = q.real / np.linalg.norm(q.real), q.imag / max(np.linalg.norm(q.imag), 1e-300)

    def res(u):
        Xs, _, _ = prob.split(u)
        d = Xs[0] - y_eq
        return np.concatenate([prob.matching(u), [d @ b_dir, d @ a_dir - amplitude * (q.real @ a_dir)]])

    def jac(u):
        prob.x_ref = y_eq
        prob.f_ref = b_dir
        J = prob.jacobian(u)
        J[-1, :] = 0.0
        J[-1, :n] = b_dir
        row = np.zeros(u.size)
        row[:n] = a_dir
        return np.vstack([J, row])

    u, _, _ = S.newton(res, jac, u0, tol=tol, max_iter=30)
    prob.set_anchor(u)
    return prob, u


def solve_cycle(prob: ShootingProblem, u_guess, tol: float = 1e-10) -> np.ndarray:
    """Orbit at the fixed parameter value in ``u_guess``."""
    prob.set_anchor(u_guess)
    k = u_guess.size - 1
    grad = np.zeros(u_guess.size)
    grad[k] = 1.0
    u, _ = S.correct(prob, u_guess, lambda v: v[k] - u_guess[k], grad, tol, 30)
    return u


def continue_periodic_orbit(system: DynamicalSystem, hopf: BifurcationPoint,
                            config: S.ContinuationConfig | None = None,
                            amplitude: float = 1e-2, segments: int = 4, steps: int | None = None,
                            ) -> CycleBranch:
    """Continue the cycle family born at a Hopf point.

    The orbit is initialised from the critical eigenvector at two small
    amplitudes; the secant between them orients the continuation away from
    the equilibrium.  Folds of cycles are located where the branch turns
    back in the parameter.
    """
    n = system.n
    u_h = np.asarray(hopf.u, dtype=float)
    y_eq, p_eq = u_h[:n], _params_of(system, hopf, u_h)
    if steps is None:
        steps = 100 if not isinstance(system, LileySystem) else _liley_steps(system, y_eq, p_eq, segments)
    try:
        prob, u1 = initial_cycle(system, y_eq, p_eq, amplitude, segments, steps)
        _, u2 = initial_cycle(system, y_eq, p_eq, 2 * amplitude, segments, steps)
    except S.NonConvergence as exc:
        raise ShootingDivergence(f"could not initialise the cycle: {exc}") from exc
    cfg = config or S.ContinuationConfig(initial_step=amplitude, max_step=0.2, max_points=200)
    prob.set_anchor(u2)
    try:
        br = S.continue_branch(prob, u2, cfg, direction=u2 - u1, both=False)
    except S.StepCollapse as exc:
        raise ShootingDivergence(str(exc), last_point=u2) from exc
    br.problem = prob
    pts = [cycle_point(prob, u) for u in br.u]
    events = []
    tp = br.tangents[:, -1]
    for i in range(len(br) - 1):
        if np.sign(tp[i]) != np.sign(tp[i + 1]) and tp[i] != 0:
            ta = br.tangents[i]
            try:
                u = S.locate_zero(prob, br.u[i], ta, br.u[i + 1],
                                  lambda z, t=ta: S._tangent(prob.jacobian(z), t)[-1], xtol=1e-10)
            except (ValueError, S.NonConvergence):
                continue
            X, T, p = prob.split(u)
            loc, state = _physical(system, X[0], p)
            events.append(BifurcationPoint("FoldOfCycles", loc, state,
                                           {"period": T * _time_unit(system),
                                            "multipliers": cycle_point(prob, u)["multipliers"]}, u, i))
    name = system.param_names[0]
    states, periods, params = [], [], []
    for u in br.u:
        X, T, p = prob.split(u)
        loc, state = _physical(system, X[0], p)
        states.append(state)
        periods.append(T * _time_unit(system))
        params.append(loc[name])
    return CycleBranch(np.array(states), np.array(periods), np.array(params),
                       [d["multipliers"] for d in pts], np.array([d["stable"] for d in pts]),
                       np.array([d["max"] for d in pts]), np.array([d["closure"] for d in pts]),
                       name, events, dict(br.status), br)


def _liley_steps(system: LileySystem, y, p, segments) -> int:
    params, m = system.physical(p)
    A = system.fy(y, p)
    w = np.linalg.eigvals(A)
    cand = w[w.imag > 0]
    omega = cand[np.argmin(np.abs(cand.real))].imag if cand.size else 1.0
    period = 2 * math.pi / omega / system.omega_ref
    fastest = max(params.gamma_ee, params.gamma_ei, params.gamma_ie, params.gamma_ii,
                  params.omega, 1 / params.tau_e, 1 / params.tau_i)
    # RK4 at dt = 0.02 / fastest rate, and an allowance for the period growing
    return max(50, int(math.ceil(2 * period * fastest / 0.02 / segments)))


# ---------------------------------------------------------------- equilibria census

def equilibria(params: M.ParameterSet, m: M.Modulation, starts: int = 100,
               tol: float = 1e-9) -> list[np.ndarray]:
    """Distinct equilibria by multi-start Newton from a grid of membrane potentials.

    Starts fill the admissible (h_e, h_i) box; each is completed to a full
    state with the steady synaptic and axonal inputs and polished by Newton
    on the 14-dimensional system.
    """
    side = int(math.ceil(math.sqrt(starts)))
    lo_e = params.h_eq_ie + 0.5
    hi_e = min(params.h_eq_ee - 0.5, params.mu_e + 6 * params.sigma_e)
    lo_i = params.h_eq_ii + 0.5
    hi_i = min(params.h_eq_ei - 0.5, params.mu_i + 6 * params.sigma_i)
    found: list[np.ndarray] = []
    count = 0
    for he in np.linspace(lo_e, hi_e, side):
        for hi in np.linspace(lo_i, hi_i, side):
            if count >= starts:
                break
            count += 1
            guess = M.steady_inputs(he, hi, params, m)
            try:
                x = S.solve_equilibrium(params, m, guess, tol=tol, max_iter=60, fallback=False)
            except S.NonConvergence:
                continue
            if not np.all(np.isfinite(x)):
                continue
            if all(abs(x[0] - z[0]) > 1e-6 or abs(x[1] - z[1]) > 1e-6 for z in found):
                found.append(x)
    found.sort(key=lambda z: z[0])
    return found

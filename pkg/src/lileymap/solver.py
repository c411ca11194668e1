"""Root finding, pseudo-arclength continuation and eigen diagnostics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import brentq

from lileymap import kernels
from lileymap import model as M
from lileymap.systems import DynamicalSystem, LileySystem

log = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class ConvergenceFailure(RuntimeError):
    pass


class StepCollapse(RuntimeError):
    def __init__(self, message: str, branch: "Branch | None" = None):
        super().__init__(message)
        self.branch = branch


# ---------------------------------------------------------------- eigenvalues

def eigen_spectrum(matrix, check: bool = True) -> np.ndarray:
    """All eigenvalues of a real square matrix, sorted by decreasing real part."""
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.all(np.isfinite(A)):
        raise ConvergenceFailure("eigen_spectrum needs a finite square matrix")
    try:
        if check:
            w, V = np.linalg.eig(A)
        else:
            w = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    if check:
        scale = max(np.linalg.norm(A, 2), np.finfo(float).tiny)
        res = np.linalg.norm(A @ V - V * w, axis=0) / np.maximum(np.linalg.norm(V, axis=0), 1e-300)
        if np.any(res > 1e-8 * scale):
            raise ConvergenceFailure(f"eigenpair residual {res.max():.2e} exceeds 1e-8*|A|")
    order = np.lexsort((-w.imag, -w.real))
    return w[order]


def is_stable(J) -> bool:
    return bool(np.max(np.linalg.eigvals(np.asarray(J, dtype=float)).real) < 0)


def count_unstable(eigs) -> int:
    return int(np.sum(np.real(eigs) > 0))


# ---------------------------------------------------------------- Newton

def newton(residual: Callable, jacobian: Callable, u0, tol: float = 1e-9, max_iter: int = 20,
           damped: bool = True) -> tuple[np.ndarray, int, float]:
    """Damped Newton on a square system; returns (u, iterations, max-norm residual).

    Damping uses the natural monotonicity test: a trial step is accepted when
    the simplified Newton correction at the trial point (same factorisation)
    is shorter than the current correction.  The test is invariant under
    rescaling of the equations, which matters for bordered systems whose
    rows have very different sizes.  Otherwise the step is halved.
    """
    u = np.array(u0, dtype=float)
    r = residual(u)
    norm = float(np.max(np.abs(r)))
    for it in range(1, max_iter + 1):
        try:
            lu = lu_factor(jacobian(u), check_finite=True)
            du = lu_solve(lu, -r)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NonConvergence(f"singular Newton matrix: {exc}", norm) from exc
        if not np.all(np.isfinite(du)):
            raise NonConvergence("non-finite Newton step", norm)
        dnorm = float(np.linalg.norm(du))
        lam = 1.0
        while True:
            trial = u + lam * du
            try:
                r_trial = residual(trial)
                finite = bool(np.all(np.isfinite(r_trial)))
            except (M.InvalidParameters, OverflowError, FloatingPointError):
                # the trial left the parameter domain (e.g. exp overflow)
                r_trial, finite = None, False
            if not damped and finite:
                break
            if finite:
                dbar = float(np.linalg.norm(lu_solve(lu, -r_trial)))
                if dbar <= (1.0 - 0.25 * lam) * dnorm or dnorm <= tol:
                    break
            if lam < 1e-3:
                if finite:
                    break
                raise NonConvergence("residual became non-finite", norm)
            lam *= 0.5
        u, r = trial, r_trial
        norm = float(np.max(np.abs(r)))
        if norm <= tol and lam * dnorm <= 1e-6 * max(1.0, float(np.max(np.abs(u)))):
            return u, it, norm
    if norm <= tol:
        return u, max_iter, norm
    raise NonConvergence(f"Newton did not converge in {max_iter} iterations", norm)


# ---------------------------------------------------------------- equilibria

def equilibrium_residual_norm(params: M.ParameterSet, m: M.Modulation, x) -> float:
    """Residual of rhs in the scaled norm used by every solver tolerance."""
    sys = LileySystem(params, (), m)
    return float(np.max(np.abs(sys.f(sys.from_state(x), np.empty(0)))))


def _integration_step(params: M.ParameterSet, m: M.Modulation) -> float:
    fastest = max(params.gamma_ee, params.gamma_ei, params.gamma_ie, params.gamma_ii,
                  params.omega, 1.0 / params.tau_e, 1.0 / params.tau_i)
    return 0.1 / fastest


def relax(params: M.ParameterSet, m: M.Modulation, x0, duration: float = 5.0,
          target: float = 1e-5) -> np.ndarray:
    """Integrate forward until the scaled residual drops below ``target``."""
    c = M.pack_coefficients(params, m)
    dt = _integration_step(params, m)
    chunk = max(int(0.25 / dt), 1)
    x = np.ascontiguousarray(x0, dtype=float)
    t = 0.0
    while t < duration:
        x, _ = kernels.integrate(x, c, dt, chunk, 0)
        t += chunk * dt
        if not np.all(np.isfinite(x)):
            raise NonConvergence("time integration diverged")
        if equilibrium_residual_norm(params, m, x) < target:
            break
    return x


def solve_equilibrium(params: M.ParameterSet, m: M.Modulation = M.BASELINE, guess=None,
                      tol: float = 1e-9, max_iter: int = 50, prefer_stable: bool = False,
                      method: str = "newton", fallback: bool = True) -> np.ndarray:
    """Equilibrium of the full system by damped Newton with an integration fallback.

    The default guess is h_e = h_i = -70 mV with all other variables zero.
    ``method="integrate"`` relaxes by time integration first and then polishes
    with Newton (the fallback path).  With ``prefer_stable`` an unstable
    Newton result triggers the fallback too.
    """
    x0 = M.initial_state() if guess is None else np.asarray(guess, dtype=float)
    sys = LileySystem(params, (), m)
    p = np.empty(0)

    def polish(x):
        y, _, _ = newton(lambda y: sys.f(y, p), lambda y: sys.fy(y, p), sys.from_state(x),
                         tol=tol, max_iter=max_iter)
        return sys.to_state(y)

    if method == "newton":
        try:
            x = polish(x0)
            if not prefer_stable or is_stable(M.jacobian(x, params, m)):
                return x
        except NonConvergence as exc:
            if not fallback:
                raise
            log.debug("Newton from guess failed: %s", exc)
    elif method != "integrate":
        raise ValueError(f"unknown method {method!r}")
    try:
        x = relax(params, m, x0)
        return polish(x)
    except NonConvergence:
        raise
    except FloatingPointError as exc:  # pragma: no cover
        raise NonConvergence(str(exc)) from exc


# ---------------------------------------------------------------- continuation

@dataclass
class ContinuationConfig:
    initial_step: float = 1e-2
    min_step: float = 1e-8
    max_step: float = 0.1
    tol: float = 1e-9
    max_newton: int = 8
    max_points: int = 2000
    # (component index, lower, upper) in continuation units
    window: Sequence[tuple[int, float, float]] = ()
    closed_loop_dot: float = 0.99

    def __post_init__(self):
        if not (0 < self.min_step <= self.initial_step <= self.max_step):
            raise ValueError("need 0 < min_step <= initial_step <= max_step")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")

    def halved(self) -> "ContinuationConfig":
        """Same configuration with every tolerance and step bound halved."""
        return ContinuationConfig(self.initial_step / 2, self.min_step / 2, self.max_step / 2,
                                  self.tol / 2, self.max_newton, self.max_points * 2,
                                  self.window, self.closed_loop_dot)


class ContinuationProblem:
    """Underdetermined system H(u) = 0 with N equations in N + 1 unknowns."""

    labels: tuple[str, ...] = ()

    def residual(self, u) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, u) -> np.ndarray:
        """N x (N+1) derivative; default is central differences."""
        u = np.asarray(u, dtype=float)
        r0 = self.residual(u)
        out = np.empty((r0.size, u.size))
        for j in range(u.size):
            h = 1e-7 * max(1.0, abs(u[j]))
            e = np.zeros(u.size)
            e[j] = h
            out[:, j] = (self.residual(u + e) - self.residual(u - e)) / (2 * h)
        return out

    def accept(self, u) -> None:
        """Hook run after every accepted point (e.g. to refresh bordering vectors)."""

    def point_data(self, u) -> Any:
        return None


@dataclass
class Branch:
    """Ordered solution curve produced by :func:`continue_branch`."""

    u: np.ndarray
    tangents: np.ndarray
    arclength: np.ndarray
    labels: tuple[str, ...] = ()
    eigen_data: list = field(default_factory=list)
    events: list = field(default_factory=list)
    status: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    # the problem that produced the branch (not serialised)
    problem: Any = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return self.u.shape[0]

    def column(self, label: str) -> np.ndarray:
        return self.u[:, self.labels.index(label)]


def _tangent(J: np.ndarray, prev: np.ndarray | None) -> np.ndarray:
    n1 = J.shape[1]
    if prev is None:
        # null vector from the SVD
        _, _, vt = np.linalg.svd(J)
        t = vt[-1]
    else:
        A = np.vstack([J, prev[None, :]])
        rhs = np.zeros(n1)
        rhs[-1] = 1.0
        try:
            t = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            _, _, vt = np.linalg.svd(J)
            t = vt[-1]
    t = t / np.linalg.norm(t)
    if prev is not None and t @ prev < 0:
        t = -t
    return t


def correct(problem: ContinuationProblem, u_guess, constraint: Callable, constraint_grad,
            tol: float, max_iter: int) -> tuple[np.ndarray, int]:
    """Newton on H(u) = 0 plus one scalar constraint."""
    def res(u):
        return np.append(problem.residual(u), constraint(u))

    def jac(u):
        g = constraint_grad(u) if callable(constraint_grad) else constraint_grad
        return np.vstack([problem.jacobian(u), g])

    u, its, _ = newton(res, jac, u_guess, tol=tol, max_iter=max_iter)
    return u, its


def _outside(u, window) -> tuple[int, float] | None:
    for idx, lo, hi in window:
        if u[idx] < lo:
            return idx, lo
        if u[idx] > hi:
            return idx, hi
    return None


def _trace(problem, u0, t0, config: ContinuationConfig, start_tangent):
    """One direction of pseudo-arclength continuation."""
    points, tangents = [u0], [t0]
    u, t = u0, t0
    h = config.initial_step
    status = "max_points"
    eff_max = 0.95 * config.max_step
    while len(points) < config.max_points:
        h = min(h, eff_max)
        u_pred = u + h * t
        try:
            u_new, its = correct(problem, u_pred, lambda v, up=u_pred, tt=t: tt @ (v - up), t,
                                 config.tol, config.max_newton)
            ok = True
        except NonConvergence:
            ok = False
        if ok:
            dist = np.linalg.norm(u_new - u)
            try:
                t_new = _tangent(problem.jacobian(u_new), t)
            except np.linalg.LinAlgError:
                ok = False
            else:
                ok = dist <= config.max_step and t_new @ t > 0.9 and dist > 0.1 * h
        if not ok:
            h *= 0.5
            if h < config.min_step:
                status = "step_collapse"
                break
            continue
        exit_info = _outside(u_new, config.window)
        if exit_info is not None:
            idx, bound = exit_info
            try:
                frac = (bound - u[idx]) / (u_new[idx] - u[idx])
                guess = u + frac * (u_new - u)
                grad = np.zeros(u.size)
                grad[idx] = 1.0
                u_b, _ = correct(problem, guess, lambda v: v[idx] - bound, grad,
                                 config.tol, config.max_newton)
                points.append(u_b)
                tangents.append(_tangent(problem.jacobian(u_b), t))
                problem.accept(u_b)
            except (NonConvergence, np.linalg.LinAlgError):
                pass
            status = "window_exit"
            break
        points.append(u_new)
        tangents.append(t_new)
        problem.accept(u_new)
        # closed loop: back near the start, moving the same way
        if len(points) > 3 and np.linalg.norm(u_new - u0) < max(h, np.linalg.norm(u_new - u)) * 1.01 \
                and t_new @ start_tangent > config.closed_loop_dot:
            status = "closed_loop"
            break
        u, t = u_new, t_new
        if its <= 2:
            h = min(h * 1.5, eff_max)
        elif its >= 5:
            h *= 0.6
    return points, tangents, status


def continue_branch(problem: ContinuationProblem, start, config: ContinuationConfig,
                    direction=None, both: bool = True, eigen: Callable | None = None) -> Branch:
    """Pseudo-arclength continuation from ``start`` in both directions.

    ``direction`` (a vector in u-space) orients the first tangent; by default
    the sign is chosen so the last component (usually a parameter) increases.
    The backward half is reversed and prepended, so the branch passes
    through ``start``.  ``eigen`` maps a point to its eigen data.
    """
    u0 = np.asarray(start, dtype=float)
    # polish the start on the hyperplane orthogonal to the initial tangent
    J0 = problem.jacobian(u0)
    t0 = _tangent(J0, None)
    if direction is not None:
        if t0 @ np.asarray(direction, dtype=float) < 0:
            t0 = -t0
    elif t0[-1] < 0:
        t0 = -t0
    r0 = float(np.max(np.abs(problem.residual(u0))))
    if r0 > config.tol:
        u0, _ = correct(problem, u0, lambda v, a=u0.copy(), tt=t0: tt @ (v - a), t0,
                        config.tol, config.max_newton * 2)
        t0 = _tangent(problem.jacobian(u0), t0)
    problem.accept(u0)
    fwd, fwd_t, st_f = _trace(problem, u0, t0, config, t0)
    status = {"forward": st_f}
    if both and st_f != "closed_loop":
        problem.accept(u0)
        bwd, bwd_t, st_b = _trace(problem, u0, -t0, config, -t0)
        status["backward"] = st_b
        pts = bwd[:0:-1] + fwd
        tans = [-t for t in bwd_t[:0:-1]] + fwd_t
    else:
        pts, tans = fwd, fwd_t
    U = np.array(pts)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(U, axis=0), axis=1))])
    branch = Branch(U, np.array(tans), s, tuple(problem.labels), status=status)
    if eigen is not None:
        branch.eigen_data = [eigen(u) for u in U]
    if "step_collapse" in status.values() and len(U) < 2:
        raise StepCollapse("continuation could not take a single step", branch)
    return branch


def point_at(problem: ContinuationProblem, ua, ta, s: float, tol: float, max_iter: int = 12) -> np.ndarray:
    """Corrected point at pseudo-arclength ``s`` along tangent ``ta`` from ``ua``."""
    guess = ua + s * ta
    u, _ = correct(problem, guess, lambda v: ta @ (v - ua) - s, ta, tol, max_iter)
    return u


def locate_zero(problem: ContinuationProblem, ua, ta, ub, test: Callable, tol: float = 1e-9,
                xtol: float = 1e-12) -> np.ndarray:
    """Sharpen a sign change of ``test`` between consecutive branch points."""
    ua = np.asarray(ua, dtype=float)
    ta = np.asarray(ta, dtype=float)
    sb = float(ta @ (np.asarray(ub) - ua))
    fa = test(ua)
    fb = test(np.asarray(ub))
    if fa == 0:
        return ua
    if fb == 0:
        return np.asarray(ub, dtype=float)
    if np.sign(fa) == np.sign(fb):
        raise ValueError("test function does not change sign on the interval")
    cache = {}

    def g(s):
        u = point_at(problem, ua, ta, s, tol)
        cache[s] = u
        return test(u)

    s_star = brentq(g, 0.0, sb, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return cache.get(s_star, point_at(problem, ua, ta, s_star, tol))


def branch_to_csv(branch: Branch, columns: dict[str, np.ndarray] | None = None) -> str:
    """Plain CSV with arclength, every u component and optional extra columns."""
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    extra = columns or {}
    labels = list(branch.labels) or [f"u{i}" for i in range(branch.u.shape[1])]
    w.writerow(["arclength", *labels, *extra.keys()])
    for i in range(len(branch)):
        row = [repr(float(branch.arclength[i]))] + [repr(float(v)) for v in branch.u[i]]
        row += [v[i] if isinstance(v[i], str) else repr(float(v[i])) for v in extra.values()]
        w.writerow(row)
    return buf.getvalue()


def branch_to_json(branch: Branch) -> dict:
    return {
        "labels": list(branch.labels),
        "u": branch.u.tolist(),
        "tangents": branch.tangents.tolist(),
        "arclength": branch.arclength.tolist(),
        "status": branch.status,
        "meta": branch.meta,
    }


def branch_from_json(data: dict) -> Branch:
    return Branch(np.array(data["u"]), np.array(data["tangents"]), np.array(data["arclength"]),
                  tuple(data["labels"]), status=data.get("status", {}), meta=data.get("meta", {}))


# ---------------------------------------------------------------- equilibrium branches

class EquilibriumProblem(ContinuationProblem):
    """f(y, p) = 0 with exactly one active parameter."""

    def __init__(self, system: DynamicalSystem, fixed_p=None):
        if len(system.param_names) != 1:
            raise ValueError("equilibrium continuation needs one active parameter")
        self.system = system
        self.labels = tuple(f"y{i}" for i in range(system.n)) + tuple(system.param_names)

    def split(self, u):
        return u[:-1], u[-1:]

    def residual(self, u):
        y, p = self.split(u)
        return self.system.f(y, p)

    def jacobian(self, u):
        y, p = self.split(u)
        return np.hstack([self.system.fy(y, p), self.system.fp(y, p)])

    def eigenvalues(self, u) -> np.ndarray:
        y, p = self.split(u)
        return np.linalg.eigvals(self.system.fy(y, p)) * self.system.rate_unit

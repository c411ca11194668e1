"""Two-parameter portraits in (R, k) and the fold-topology family classifier.

A portrait is built from the equilibrium reached at R = k = 1: the one-
parameter slice in R locates saddle-nodes and Hopf points, which seed fold
and Hopf curves in (log R, log k).  Fold curves that never cross the k = 1
slice are seeded from a grid scan of the reduced equilibrium map
(h_e, h_i) -> (R, k), whose critical set is exactly the fold set.

A family label follows from the cusp census per fold curve: {0,0} or {2,0}
is F1, {1,1} is F2, anything else is Indeterminate.
"""
from __future__ import annotations

import concurrent.futures as cf
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from lileymap import bifurcations as B
from lileymap import model as M
from lileymap import solver as S
from lileymap.systems import LileySystem

log = logging.getLogger(__name__)

F1, F2, INDETERMINATE = "F1", "F2", "Indeterminate"


class PortraitIncomplete(RuntimeError):
    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class Window:
    """Rectangle in (R, k)."""

    R_min: float
    R_max: float
    k_min: float
    k_max: float

    def contains(self, R, k) -> np.ndarray:
        R, k = np.asarray(R), np.asarray(k)
        return (R >= self.R_min) & (R <= self.R_max) & (k >= self.k_min) & (k <= self.k_max)

    def log_bounds(self) -> list[tuple[int, float, float]]:
        """Window entries for fold-curve continuation (parameter columns 14, 15)."""
        n = M.N_STATE
        return [(n, math.log(self.R_min), math.log(self.R_max)),
                (n + 1, math.log(self.k_min), math.log(self.k_max))]

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.R_min, self.R_max, self.k_min, self.k_max)


PHYSIOLOGICAL = Window(*M.PHYSIOLOGICAL_WINDOW)


def nested_windows(cap: float, growth: float = 2.0, start: Window = PHYSIOLOGICAL) -> list[Window]:
    """The physiological rectangle expanded by ``growth`` per side until every
    side reaches the cap (R, k <= cap and >= 1/cap)."""
    out = [start]
    lo, hi = 1.0 / cap, cap
    while True:
        w = out[-1]
        nxt = Window(max(w.R_min / growth, lo), min(w.R_max * growth, hi),
                     max(w.k_min / growth, lo), min(w.k_max * growth, hi))
        if nxt == w:
            return out
        out.append(nxt)


@dataclass
class ClassifierConfig:
    window_cap: float = 1e6
    growth: float = 2.0
    # cusps closer than this (log R, log k max-distance) cancel in pairs
    cusp_resolution: float = 0.05
    seed_grid: int = 40
    continuation: S.ContinuationConfig = field(
        default_factory=lambda: S.ContinuationConfig(max_step=0.25, max_points=4000))
    hopf_curves: bool = False

    def halved(self) -> "ClassifierConfig":
        return replace(self, continuation=self.continuation.halved())

    def as_dict(self) -> dict:
        c = self.continuation
        return {"window_cap": self.window_cap, "growth": self.growth,
                "cusp_resolution": self.cusp_resolution, "seed_grid": self.seed_grid,
                "hopf_curves": self.hopf_curves,
                "continuation": {"initial_step": c.initial_step, "min_step": c.min_step,
                                 "max_step": c.max_step, "tol": c.tol, "max_newton": c.max_newton,
                                 "max_points": c.max_points}}


@dataclass
class FoldCurve:
    branch: S.Branch
    seed: str
    cusps: list
    events: list

    def params(self) -> np.ndarray:
        """(R, k) along the curve."""
        return np.exp(self.branch.u[:, M.N_STATE:])

    def potentials(self, system: LileySystem) -> np.ndarray:
        return np.array([system.to_state(u[:M.N_STATE], u[M.N_STATE:])[:2] for u in self.branch.u])


@dataclass
class Portrait:
    params: M.ParameterSet
    window: Window
    slice_branch: S.Branch
    slice_events: list
    fold_curves: list
    hopf_curves: list
    inventory: list
    status: dict


def _system(params: M.ParameterSet) -> LileySystem:
    return LileySystem(params, ("R", "k"), M.BASELINE)


def polyline_distance(point: np.ndarray, poly: np.ndarray) -> float:
    """Euclidean distance from a point to a polyline."""
    if len(poly) == 1:
        return float(np.linalg.norm(poly[0] - point))
    a, b = poly[:-1], poly[1:]
    d = b - a
    L2 = np.maximum(np.sum(d * d, axis=1), 1e-300)
    t = np.clip(np.sum((point - a) * d, axis=1) / L2, 0.0, 1.0)
    return float(np.min(np.linalg.norm(a + t[:, None] * d - point, axis=1)))


def _covered(point_h: np.ndarray, curves: Sequence[np.ndarray], tol: float) -> bool:
    """True when the (h_e, h_i) point lies within ``tol`` mV of a traced curve."""
    return any(hs.size and polyline_distance(point_h, hs) < tol for hs in curves)


def grid_fold_seeds(params: M.ParameterSet, window: Window, n: int = 40) -> list[tuple[float, float, int]]:
    """Approximate fold points from sign changes of det D(log R, log k)/D(h_e, h_i).

    Returns (h_e, h_i, axis) where axis 1 means h_i is held at the grid line.
    """
    he = np.linspace(params.h_eq_ie + 0.05, params.h_eq_ee - 0.05, n)
    hi = np.linspace(params.h_eq_ii + 0.05, params.h_eq_ei - 0.05, n)
    HE, HI = np.meshgrid(he, hi)
    with np.errstate(all="ignore"):
        R, k = M.modulation_at(HE, HI, params)
        lR, lk = np.log(R), np.log(k)
        det = (np.gradient(lR, he, axis=1) * np.gradient(lk, hi, axis=0)
               - np.gradient(lR, hi, axis=0) * np.gradient(lk, he, axis=1))
    inside = window.contains(R, k) & np.isfinite(det)
    seeds = []
    for i in range(n):
        for j in range(n - 1):
            if inside[i, j] and inside[i, j + 1] and np.sign(det[i, j]) != np.sign(det[i, j + 1]):
                a, b = det[i, j], det[i, j + 1]
                t = a / (a - b)
                seeds.append((he[j] + t * (he[j + 1] - he[j]), hi[i], 1))
    for j in range(n):
        for i in range(n - 1):
            if inside[i, j] and inside[i + 1, j] and np.sign(det[i, j]) != np.sign(det[i + 1, j]):
                a, b = det[i, j], det[i + 1, j]
                t = a / (a - b)
                seeds.append((he[j], hi[i] + t * (hi[i + 1] - hi[i]), 0))
    return seeds


def polish_fold_seed(system: LileySystem, h_e: float, h_i: float, axis: int,
                     tol: float = 1e-9) -> np.ndarray | None:
    """Newton onto the 14-dimensional fold system with one potential held fixed."""
    params = system.params
    with np.errstate(all="ignore"):
        R, k = M.modulation_at(h_e, h_i, params)
    if not (np.isfinite(R) and np.isfinite(k)):
        return None
    m = M.Modulation(float(R), float(k))
    p = system.p_from(R=m.R, k=m.k)
    y = system.from_state(M.steady_inputs(h_e, h_i, params, m), p)
    u0 = np.concatenate([y, p])
    prob = B.FoldCurveProblem(system, u0)
    grad = np.zeros(u0.size)
    grad[axis] = 1.0
    target = u0[axis]
    try:
        u, _ = S.correct(prob, u0, lambda v: v[axis] - target, grad, tol, 20)
    except (S.NonConvergence, np.linalg.LinAlgError):
        return None
    return u


def _cancel_micro_pairs(cusps: list, resolution: float) -> list:
    """Remove adjacent cusp pairs closer than ``resolution`` in log parameters.

    Such pairs are unresolved swallowtail micro-structure: a step-size
    dependent artefact of where continuation happens to sample.
    """
    out = list(cusps)
    changed = True
    while changed:
        changed = False
        for i in range(len(out) - 1):
            a, b = out[i], out[i + 1]
            d = max(abs(math.log(a.location["R"] / b.location["R"])),
                    abs(math.log(a.location["k"] / b.location["k"])))
            if d < resolution:
                del out[i:i + 2]
                changed = True
                break
    return out


def trace_fold_curve(system: LileySystem, start, window: Window,
                     config: S.ContinuationConfig) -> S.Branch:
    return B.continue_fold_curve(system, start, window.log_bounds(), config)


def build_portrait(params: M.ParameterSet, window: Window | None = None,
                   config: ClassifierConfig | None = None) -> Portrait:
    """Fold (and optionally Hopf) curves in (R, k) with their codim-2 points."""
    cfg = config or ClassifierConfig()
    window = window or nested_windows(cfg.window_cap, cfg.growth)[-1]
    system = _system(params)
    status: dict = {"curves": []}
    x0 = S.solve_equilibrium(params, M.BASELINE)
    slice_cfg = S.ContinuationConfig(cfg.continuation.initial_step, cfg.continuation.min_step,
                                     cfg.continuation.max_step, cfg.continuation.tol,
                                     cfg.continuation.max_newton, cfg.continuation.max_points)
    sl = B.liley_branch(params, "R", M.BASELINE, (window.R_min, window.R_max), x0, slice_cfg)
    events = B.detect_codim1(sl)
    status["slice"] = dict(sl.status)
    folds = [e for e in events if e.kind == "SaddleNode"]
    status["slice_saddle_nodes"] = len(folds)
    curves: list[FoldCurve] = []
    traced_h: list[np.ndarray] = []
    spacing = max((params.h_eq_ee - params.h_eq_ie), (params.h_eq_ei - params.h_eq_ii)) / cfg.seed_grid

    def trace(start, label):
        try:
            br = trace_fold_curve(system, start, window, cfg.continuation)
        except (S.StepCollapse, B.InitializationFailure, S.NonConvergence) as exc:
            status["curves"].append({"seed": label, "error": str(exc)})
            return
        cusps = [e for e in br.events if e.kind == "Cusp"]
        fc = FoldCurve(br, label, cusps, [e for e in br.events])
        curves.append(fc)
        traced_h.append(fc.potentials(system))
        status["curves"].append({"seed": label, "points": len(br), "termination": dict(br.status),
                                 "mean_step": float(np.mean(np.diff(br.arclength))) if len(br) > 1 else 0.0})

    for e in folds:
        h = e.state[:2]
        if _covered(h, traced_h, 0.05):
            continue
        trace(e, "slice")
    for h_e, h_i, axis in grid_fold_seeds(params, window, cfg.seed_grid):
        if _covered(np.array([h_e, h_i]), traced_h, 1.5 * spacing):
            continue
        u = polish_fold_seed(system, h_e, h_i, axis, cfg.continuation.tol)
        if u is None or not np.all(window.contains(*np.exp(u[M.N_STATE:]))):
            continue
        h = system.to_state(u[:M.N_STATE], u[M.N_STATE:])[:2]
        if _covered(h, traced_h, 0.05):
            continue
        trace(u, "grid")
    if not curves:
        raise PortraitIncomplete("no fold curve found in the window",
                                 Portrait(params, window, sl, events, [], [], [], status))
    hopf_curves = []
    if cfg.hopf_curves:
        for e in events:
            if e.kind != "Hopf":
                continue
            if any(_on_hopf_curve(e, hc, system) for hc in hopf_curves):
                continue
            try:
                hopf_curves.append(B.continue_hopf_curve(system, e, window.log_bounds(),
                                                         cfg.continuation))
            except (S.StepCollapse, B.InitializationFailure, S.NonConvergence) as exc:
                status.setdefault("hopf_errors", []).append(str(exc))
    inventory = _inventory(curves, hopf_curves, window)
    return Portrait(params, window, sl, events, curves, hopf_curves, inventory, status)


def _on_hopf_curve(pt: B.BifurcationPoint, hc: S.Branch, system: LileySystem) -> bool:
    n = M.N_STATE
    h = pt.state[:2]
    pts = np.array([system.to_state(u[:n], u[2 * n + 1:])[:2] for u in hc.u])
    return bool(np.min(np.max(np.abs(pts - h), axis=1)) < 0.05)


def _inventory(curves, hopf_curves, window: Window) -> list:
    inv = []
    for fc in curves:
        inv.extend(fc.events)
    for hc in hopf_curves:
        inv.extend(e for e in hc.events if e.kind == "GeneralizedHopf")
    # a BT or fold-Hopf point sits on two fold curves only if traced twice; dedupe
    out = []
    for e in inv:
        if not window.contains(e.location["R"], e.location["k"]):
            continue
        if any(o.kind == e.kind and abs(o.location["R"] / e.location["R"] - 1) < 1e-6
               and abs(o.location["k"] / e.location["k"] - 1) < 1e-6 for o in out):
            continue
        out.append(e)
    return out


@dataclass
class FamilyReport:
    label: str
    cusp_census: list
    fold_branch_count: int
    codim2_inventory: list
    window: tuple
    wall_time: float = 0.0
    raw_census: list = field(default_factory=list)
    window_censuses: list = field(default_factory=list)
    stable_from: int | None = None
    diagnostics: dict = field(default_factory=dict)
    cause: str | None = None
    # the traced portrait, kept in-process only (not serialised)
    portrait: Portrait | None = field(default=None, repr=False, compare=False)

    @property
    def failed(self) -> bool:
        """True when the set could not be processed (as opposed to an unmatched census)."""
        return self.label == INDETERMINATE and bool(self.cause) and not self.cause.startswith("census")

    def to_json(self, timing: bool = False) -> dict:
        out = {
            "label": self.label,
            "cusp_census": self.cusp_census,
            "raw_census": self.raw_census,
            "fold_branch_count": self.fold_branch_count,
            "codim2_inventory": [_inventory_entry(e) for e in self.codim2_inventory],
            "window": list(self.window),
            "window_censuses": self.window_censuses,
            "stable_from": self.stable_from,
            "diagnostics": B._jsonable(self.diagnostics),
            "cause": self.cause,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out


def _inventory_entry(e) -> dict:
    if isinstance(e, dict):
        return e
    return {"kind": e.kind, "R": e.location["R"], "k": e.location["k"],
            "h_e": float(e.state[0]), "h_i": float(e.state[1])}


def label_from_census(census: Sequence[int]) -> str:
    c = sorted(census, reverse=True)
    if c in ([0, 0], [2, 0]):
        return F1
    if c == [1, 1]:
        return F2
    return INDETERMINATE


def census(curves: Sequence[FoldCurve], window: Window, resolution: float) -> tuple[list, list]:
    """(resolved, raw) cusp counts per fold curve meeting ``window``."""
    resolved, raw = [], []
    for fc in curves:
        R, k = fc.params().T
        if not np.any(window.contains(R, k)):
            continue
        inside = [c for c in fc.cusps if window.contains(c.location["R"], c.location["k"])]
        raw.append(len(inside))
        resolved.append(len(_cancel_micro_pairs(inside, resolution)))
    order = np.argsort(raw)[::-1]
    return sorted(resolved, reverse=True), [raw[i] for i in order]


def classify_family(params: M.ParameterSet, window: Window | None = None,
                    config: ClassifierConfig | None = None) -> FamilyReport:
    """F1/F2 label from the cusp census on fold curves.

    The census is taken in each of the nested windows; the label is the one
    of the largest window, and ``stable_from`` records the first window from
    which the census no longer changed.
    """
    cfg = config or ClassifierConfig()
    t0 = time.perf_counter()
    windows = nested_windows(cfg.window_cap, cfg.growth)
    if window is not None:
        windows = [w for w in windows if w.R_max <= window.R_max and w.k_max <= window.k_max] or [window]
        if windows[-1] != window:
            windows.append(window)
    big = windows[-1]
    try:
        portrait = build_portrait(params, big, cfg)
    except PortraitIncomplete as exc:
        return FamilyReport(INDETERMINATE, [], 0, [], big.as_tuple(),
                            time.perf_counter() - t0, cause=f"PortraitIncomplete: {exc}")
    except (S.NonConvergence, S.StepCollapse, np.linalg.LinAlgError, FloatingPointError,
            M.InvalidParameters, OverflowError) as exc:
        return FamilyReport(INDETERMINATE, [], 0, [], big.as_tuple(),
                            time.perf_counter() - t0, cause=f"{type(exc).__name__}: {exc}")
    per_window = [census(portrait.fold_curves, w, cfg.cusp_resolution)[0] for w in windows]
    final, raw = census(portrait.fold_curves, big, cfg.cusp_resolution)
    stable = len(per_window) - 1
    while stable > 0 and per_window[stable - 1] == final:
        stable -= 1
    label = label_from_census(final)
    diag = {
        "curves": portrait.status["curves"],
        "slice": portrait.status.get("slice"),
        "slice_events": [{"kind": e.kind, "R": e.location["R"]} for e in portrait.slice_events],
    }
    return FamilyReport(label, final, len(final), portrait.inventory, big.as_tuple(),
                        time.perf_counter() - t0, raw, per_window, stable, diag,
                        None if label != INDETERMINATE else f"census {final} matches no family",
                        portrait)


# ---------------------------------------------------------------- sweeps

@dataclass
class MetamorphosisScan:
    axis: str
    samples: list          # (value, label), sorted by value
    transitions: list      # (lo, hi, label_lo, label_hi)
    resolution: float
    flagged: list = field(default_factory=list)   # values with Indeterminate labels

    def to_json(self) -> dict:
        return {"axis": self.axis, "samples": [[v, lab] for v, lab in self.samples],
                "transitions": [list(t) for t in self.transitions],
                "resolution": self.resolution, "flagged": self.flagged}


def metamorphosis_sweep(params: M.ParameterSet, axis: str = "p_ei",
                        value_range: tuple[float, float] = (0.0, 26000.0),
                        resolution: float = 100.0, coarse: int = 14,
                        config: ClassifierConfig | None = None) -> MetamorphosisScan:
    """Classify along one thalamic input and bracket every label change.

    A coarse grid of ``coarse`` samples is refined by bisection between
    neighbouring samples with different (determinate) labels until the
    bracket is no wider than ``resolution``.
    """
    if axis not in ("p_ei", "p_ee"):
        raise ValueError(f"axis must be p_ei or p_ee, not {axis!r}")
    lo, hi = float(value_range[0]), float(value_range[1])
    if hi < lo:
        raise ValueError("empty range")
    cfg = config or ClassifierConfig()
    cache: dict[float, str] = {}

    def label(v):
        if v not in cache:
            cache[v] = classify_family(replace(params, **{axis: v}), config=cfg).label
        return cache[v]

    grid = [lo] if hi == lo else list(np.linspace(lo, hi, max(coarse, 2)))
    for v in grid:
        label(float(v))
    transitions = []
    known = [(v, lab) for v, lab in sorted(cache.items()) if lab != INDETERMINATE]
    for (va, la), (vb, lb) in zip(known, known[1:]):
        if la == lb:
            continue
        a, b = va, vb
        while b - a > resolution:
            mid = 0.5 * (a + b)
            lm = label(mid)
            if lm == la:
                a = mid
            elif lm == lb:
                b = mid
            else:
                # an indeterminate stretch (e.g. census [2, 2]) separates the
                # families; close in on it from both ends instead
                a = _edge(label, a, mid, la, resolution)
                b = _edge(label, b, mid, lb, resolution)
                break
        transitions.append((a, b, la, lb))
    samples = sorted(cache.items())
    flagged = [v for v, lab in samples if lab == INDETERMINATE]
    return MetamorphosisScan(axis, samples, transitions, resolution, flagged)


def _edge(label, keep: float, other: float, lab: str, resolution: float) -> float:
    """Bisect between ``keep`` (labelled ``lab``) and ``other`` (not) to the
    last value still labelled ``lab``."""
    while abs(other - keep) > resolution:
        mid = 0.5 * (keep + other)
        if label(mid) == lab:
            keep = mid
        else:
            other = mid
    return keep


def bt_annihilation_scan(params: M.ParameterSet, axis: str = "p_ei",
                         value_range: tuple[float, float] = (0.0, 26000.0),
                         resolution: float = 100.0, coarse: int = 14,
                         config: ClassifierConfig | None = None) -> dict:
    """Counts of Bogdanov-Takens and generalized Hopf points along an input axis.

    Changes in either count are bracketed by bisection to ``resolution``.
    """
    cfg = replace(config or ClassifierConfig(), hopf_curves=True)
    cache: dict[float, tuple[int, int]] = {}

    def counts(v):
        if v not in cache:
            try:
                pr = build_portrait(replace(params, **{axis: v}), config=cfg)
                kinds = [e.kind for e in pr.inventory]
                cache[v] = (kinds.count("BogdanovTakens"), kinds.count("GeneralizedHopf"))
            except (PortraitIncomplete, S.NonConvergence, S.StepCollapse):
                cache[v] = (-1, -1)
        return cache[v]

    lo, hi = value_range
    for v in ([lo] if hi == lo else np.linspace(lo, hi, max(coarse, 2))):
        counts(float(v))
    changes = []
    for which, name in ((0, "bt"), (1, "gh")):
        pts = [(v, c[which]) for v, c in sorted(cache.items()) if c[which] >= 0]
        for (va, ca), (vb, cb) in zip(pts, pts[1:]):
            if ca == cb:
                continue
            a, b = va, vb
            while b - a > resolution:
                mid = 0.5 * (a + b)
                cm = counts(mid)[which]
                if cm == ca:
                    a = mid
                elif cm == cb:
                    b = mid
                else:
                    break
            changes.append({"count": name, "lo": a, "hi": b, "from": ca, "to": cb})
    return {"axis": axis, "samples": [[v, c[0], c[1]] for v, c in sorted(cache.items())],
            "changes": changes, "resolution": resolution}


# ---------------------------------------------------------------- batches

def _classify_one(args):
    params, cfg = args
    t0 = time.perf_counter()
    try:
        rep = classify_family(params, config=cfg)
    except Exception as exc:  # isolate any per-set failure
        rep = FamilyReport(INDETERMINATE, [], 0, [], (), cause=f"{type(exc).__name__}: {exc}")
    rep.wall_time = time.perf_counter() - t0
    rep.portrait = None
    return rep


def batch_classify(sets: Sequence[M.ParameterSet], workers: int | None = None,
                   config: ClassifierConfig | None = None) -> tuple[list[FamilyReport], dict]:
    """Classify many sets; output order equals input order.

    ``workers`` defaults to the CPU count; 1 runs in-process.
    """
    cfg = config or ClassifierConfig()
    workers = workers or os.cpu_count() or 1
    jobs = [(p, cfg) for p in sets]
    if workers == 1 or len(jobs) <= 1:
        reports = [_classify_one(j) for j in jobs]
    else:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_classify_one, jobs))
    return reports, summarize(reports)


def summarize(reports: Iterable[FamilyReport]) -> dict:
    reports = list(reports)
    n = len(reports)
    counts = {F1: 0, F2: 0, INDETERMINATE: 0}
    for r in reports:
        counts[r.label] = counts.get(r.label, 0) + 1
    times = [r.wall_time for r in reports]
    return {
        "count": n,
        "labels": counts,
        "proportions": {k: (v / n if n else 0.0) for k, v in counts.items()},
        "mean_wall_time": float(np.mean(times)) if times else 0.0,
        "failures": sum(1 for r in reports if r.failed),
    }

"""Command-line pipeline: sample, classify, sweep, spectrum, stats, diagram.

Every command writes its outputs atomically (temporary file, then rename)
and leaves a ``<output>.manifest.json`` next to the primary output with the
resolved configuration, inputs, outputs, code version and stage timings.

Exit codes: 0 success, 1 usage error, 2 some sets failed, 3 everything failed.
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import configparser
import csv
import io
import json
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from lileymap import __version__, kernels
from lileymap import atlas as A
from lileymap import bifurcations as B
from lileymap import model as M
from lileymap import solver as S
from lileymap import spectra as P
from lileymap import stats as T

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_FAILED = 0, 1, 2, 3
WORKERS_ENV = "LILEYMAP_WORKERS"
FORMAT_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------- files

def atomic_write(path: str | Path, text: str) -> None:
    """Write ``text`` to ``path`` via a sibling temporary file and rename."""
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def manifest_path(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def write_manifest(out: str | Path, command: str, config: dict, inputs: Sequence[str],
                   outputs: Sequence[str], timings: dict) -> Path:
    doc = {
        "format_version": FORMAT_VERSION,
        "subcommand": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "code_version": __version__,
        "kernels": kernels.IMPLEMENTATION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timings": timings,
    }
    path = manifest_path(out)
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_parameter_sets(path: str | Path) -> list[M.ParameterSet]:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        doc = json.loads(text)
        items = doc if isinstance(doc, list) else [doc]
        return [M.ParameterSet.from_mapping(d) for d in items]
    return M.from_csv(text)


def read_jsonl(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def jsonl(records: Sequence[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


# ---------------------------------------------------------------- configuration

def load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        if not Path(path).exists():
            raise UsageError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
    return cp


def setting(args, cp: configparser.ConfigParser, section: str, name: str, default, conv=float):
    """Flag value if given, else config value, else ``default``."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if cp.has_option(section, name):
        return conv(cp.get(section, name))
    return default


def resolve_workers(args, cp: configparser.ConfigParser, section: str) -> int:
    if getattr(args, "workers", None) is not None:
        w = args.workers
    elif os.environ.get(WORKERS_ENV):
        try:
            w = int(os.environ[WORKERS_ENV])
        except ValueError as exc:
            raise UsageError(f"{WORKERS_ENV} must be an integer") from exc
    elif cp.has_option(section, "workers"):
        w = cp.getint(section, "workers")
    else:
        w = os.cpu_count() or 1
    if w < 1:
        raise UsageError("workers must be at least 1")
    return w


def classifier_config(args, cp: configparser.ConfigParser) -> A.ClassifierConfig:
    base = A.ClassifierConfig()
    c = base.continuation
    cont = S.ContinuationConfig(
        initial_step=setting(args, cp, "classify", "initial_step", c.initial_step),
        min_step=setting(args, cp, "classify", "min_step", c.min_step),
        max_step=setting(args, cp, "classify", "max_step", c.max_step),
        tol=setting(args, cp, "classify", "tol", c.tol),
        max_newton=int(setting(args, cp, "classify", "max_newton", c.max_newton, int)),
        max_points=int(setting(args, cp, "classify", "max_points", c.max_points, int)),
    )
    cfg = A.ClassifierConfig(
        window_cap=setting(args, cp, "classify", "window_cap", base.window_cap),
        growth=setting(args, cp, "classify", "growth", base.growth),
        cusp_resolution=setting(args, cp, "classify", "cusp_resolution", base.cusp_resolution),
        seed_grid=int(setting(args, cp, "classify", "seed_grid", base.seed_grid, int)),
        continuation=cont,
    )
    if getattr(args, "halve_tolerances", False):
        cfg = cfg.halved()
    return cfg


def parse_pair(text: str, what: str) -> tuple[float, float]:
    try:
        a, b = (float(t) for t in text.split(","))
    except ValueError as exc:
        raise UsageError(f"{what} must be two comma-separated numbers, got {text!r}") from exc
    return a, b


# ---------------------------------------------------------------- parallel map

def pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-stable map; in-process for one worker."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with cf.ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _exit_code(n_failed: int, n_total: int) -> int:
    if n_total and n_failed == n_total:
        return EXIT_FAILED
    return EXIT_PARTIAL if n_failed else EXIT_OK


# ---------------------------------------------------------------- sample

def cmd_sample(args, cp) -> int:
    seed = int(setting(args, cp, "sample", "seed", 0, int))
    count = int(setting(args, cp, "sample", "count", 100, int))
    if count < 1:
        raise UsageError("--count must be at least 1")
    t0 = time.perf_counter()
    try:
        sets = M.sample_parameters(seed, count)
    except M.SamplingFailure as exc:
        print(f"sampling failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    atomic_write(args.out, M.to_csv(sets))
    write_manifest(args.out, "sample", {"seed": seed, "count": count}, [], [args.out],
                   {"sample": time.perf_counter() - t0})
    return EXIT_OK


# ---------------------------------------------------------------- classify

def _curve_rows(report: A.FamilyReport, params: M.ParameterSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["curve", "kind", "R", "k", "h_e", "h_i"])
    portrait = report.portrait
    if portrait is not None:
        system = A._system(params)
        for i, fc in enumerate(portrait.fold_curves):
            rk = fc.params()
            h = fc.potentials(system)
            for (R, k), (he, hi) in zip(rk, h):
                w.writerow([i, "sn", repr(float(R)), repr(float(k)), repr(float(he)), repr(float(hi))])
        for e in portrait.inventory:
            w.writerow(["", e.kind, repr(e.location["R"]), repr(e.location["k"]),
                        repr(float(e.state[0])), repr(float(e.state[1]))])
    return buf.getvalue()


def _classify_task(job):
    index, params, cfg, curve_dir = job
    t0 = time.perf_counter()
    try:
        rep = A.classify_family(params, config=cfg)
    except Exception as exc:  # one bad set never aborts the batch
        rep = A.FamilyReport(A.INDETERMINATE, [], 0, [], (), cause=f"{type(exc).__name__}: {exc}")
    rep.wall_time = time.perf_counter() - t0
    if curve_dir:
        atomic_write(Path(curve_dir) / f"set{index:05d}_curves.csv", _curve_rows(rep, params))
    rep.portrait = None
    return rep


def cmd_classify(args, cp) -> int:
    sets = read_parameter_sets(args.input)
    workers = resolve_workers(args, cp, "classify")
    cfg = classifier_config(args, cp)
    t0 = time.perf_counter()
    jobs = [(i, p, cfg, args.emit_curves) for i, p in enumerate(sets)]
    reports = pool_map(_classify_task, jobs, workers)
    elapsed = time.perf_counter() - t0
    records = [{"index": i, **r.to_json(timing=args.timing)} for i, r in enumerate(reports)]
    atomic_write(args.out, jsonl(records))
    summary = A.summarize(reports)
    summary["workers"] = workers
    summary["manifest"] = manifest_path(args.out).name
    summary_path = args.summary or str(args.out) + ".summary.json"
    atomic_write(summary_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    outputs = [args.out, summary_path] + ([args.emit_curves] if args.emit_curves else [])
    write_manifest(args.out, "classify", {"classifier": cfg.as_dict(), "workers": workers,
                                          "timing_in_output": bool(args.timing)},
                   [args.input], outputs, {"classify": elapsed,
                                           "mean_per_set": summary["mean_wall_time"]})
    return _exit_code(summary["failures"], len(reports))


# ---------------------------------------------------------------- sweep

def _sweep_task(job):
    index, params, axis, rng, resolution, coarse, cfg = job
    try:
        scan = A.metamorphosis_sweep(params, axis, rng, resolution, coarse, cfg)
        return {"index": index, **scan.to_json()}
    except Exception as exc:
        return {"index": index, "axis": axis, "error": f"{type(exc).__name__}: {exc}"}


def cmd_sweep(args, cp) -> int:
    if args.axis not in ("p_ei", "p_ee"):
        raise UsageError(f"--axis must be p_ei or p_ee, not {args.axis!r}")
    rng = parse_pair(args.range, "--range") if args.range else (
        setting(args, cp, "sweep", "range_lo", 0.0), setting(args, cp, "sweep", "range_hi", 26000.0))
    if rng[1] < rng[0]:
        raise UsageError("--range must be ascending")
    resolution = setting(args, cp, "sweep", "resolution", 100.0)
    coarse = int(setting(args, cp, "sweep", "coarse", 14, int))
    if resolution <= 0 or coarse < 2:
        raise UsageError("--resolution must be positive and --coarse at least 2")
    sets = read_parameter_sets(args.input)
    workers = resolve_workers(args, cp, "sweep")
    cfg = classifier_config(args, cp)
    t0 = time.perf_counter()
    jobs = [(i, p, args.axis, rng, resolution, coarse, cfg) for i, p in enumerate(sets)]
    records = pool_map(_sweep_task, jobs, workers)
    atomic_write(args.out, jsonl(records))
    ok = [r for r in records if "error" not in r]
    summary = {
        "axis": args.axis, "count": len(records), "failures": len(records) - len(ok),
        "transition_incidence": (sum(1 for r in ok if r["transitions"]) / len(ok)) if ok else 0.0,
        "directions": _direction_counts(ok),
        "manifest": manifest_path(args.out).name,
    }
    summary_path = str(args.out) + ".summary.json"
    atomic_write(summary_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(args.out, "sweep", {"axis": args.axis, "range": list(rng), "resolution": resolution,
                                       "coarse": coarse, "classifier": cfg.as_dict(), "workers": workers},
                   [args.input], [args.out, summary_path], {"sweep": time.perf_counter() - t0})
    return _exit_code(summary["failures"], len(records))


def _direction_counts(records: list[dict]) -> dict:
    out: dict[str, int] = {}
    for r in records:
        for _, _, la, lb in r["transitions"]:
            key = f"{la}->{lb} (increasing {r['axis']})"
            out[key] = out.get(key, 0) + 1
    return out


# ---------------------------------------------------------------- spectrum

def _transform_from(text: str):
    if text in ("identity", "none"):
        return P.identity, "identity"
    a, b = parse_pair(text, "--transform")
    if a <= 0 or b <= 0:
        raise UsageError("--transform factors must be positive")
    return P.AnestheticTransform(a, b), f"{a!r},{b!r}"


def _spectrum_task(job):
    index, params, transform, band, n_freq, noise, equilibrium, spec_dir = job
    try:
        r = P.power_ratio(params, transform, band=band, n_freq=n_freq, noise_density=noise,
                          equilibrium=equilibrium)
        if spec_dir:
            x = P.select_equilibrium(params, M.BASELINE, equilibrium)
            res = P.power_spectrum(P.linearize(params, M.BASELINE, x), band, n_freq, noise)
            atomic_write(Path(spec_dir) / f"set{index:05d}_spectrum.csv", res.to_csv())
        return {"index": index, "ratio": r.ratio, "biphasic": r.biphasic,
                "baseline_power": r.baseline_power, "transformed_power": r.transformed_power}
    except Exception as exc:
        return {"index": index, "error": f"{type(exc).__name__}: {exc}"}


def cmd_spectrum(args, cp) -> int:
    transform, tname = _transform_from(args.transform or ",".join(
        str(setting(args, cp, "spectrum", k, d)) for k, d in (("a", 1.0), ("b", 1.5))))
    band = parse_pair(args.band, "--band") if args.band else (
        setting(args, cp, "spectrum", "band_lo", P.DEFAULT_BAND[0]),
        setting(args, cp, "spectrum", "band_hi", P.DEFAULT_BAND[1]))
    if not band[1] > band[0] >= 0:
        raise UsageError("--band must be an ascending pair of non-negative frequencies")
    n_freq = int(setting(args, cp, "spectrum", "n_freq", P.DEFAULT_N_FREQ, int))
    noise = setting(args, cp, "spectrum", "noise_density", 1.0)
    if n_freq < 2 or noise <= 0:
        raise UsageError("--n-freq must be >= 2 and --noise-density positive")
    sets = read_parameter_sets(args.input)
    workers = resolve_workers(args, cp, "spectrum")
    t0 = time.perf_counter()
    jobs = [(i, p, transform, band, n_freq, noise, args.equilibrium, args.spectra_dir)
            for i, p in enumerate(sets)]
    records = pool_map(_spectrum_task, jobs, workers)
    atomic_write(args.out, jsonl(records))
    outputs = [args.out]
    ratios = [r["ratio"] for r in records if "error" not in r]
    if args.fig6:
        if ratios:
            atomic_write(args.fig6, T.ratio_histogram(ratios).to_csv())
            outputs.append(args.fig6)
        else:
            print("no ratios to histogram", file=sys.stderr)
    if args.spectra_dir:
        outputs.append(args.spectra_dir)
    failed = len(records) - len(ratios)
    write_manifest(args.out, "spectrum", {"transform": tname, "band": list(band), "n_freq": n_freq,
                                          "noise_density": noise, "equilibrium": args.equilibrium,
                                          "biphasic_threshold": P.BIPHASIC_THRESHOLD,
                                          "workers": workers},
                   [args.input], outputs, {"spectrum": time.perf_counter() - t0})
    return _exit_code(failed, len(records))


# ---------------------------------------------------------------- stats

TAIL_THRESHOLDS = ((0.7, "<="), (1.0, ">="), (P.BIPHASIC_THRESHOLD, ">="))


def cmd_stats(args, cp) -> int:
    sets = read_parameter_sets(args.params)
    reports = read_jsonl(args.reports)
    labels = {r.get("index", i): r["label"] for i, r in enumerate(reports)}
    if len(labels) != len(sets):
        raise UsageError(f"{len(reports)} reports for {len(sets)} parameter sets")
    fam = {lab: [sets[i] for i in sorted(labels) if labels[i] == lab] for lab in (A.F1, A.F2)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    written = []

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "parameter", "bin_lo", "bin_hi", "freq"])
    for lab, group in fam.items():
        if not group:
            continue
        for name in M.PARAMETER_NAMES:
            h = T.histogram([getattr(p, name) for p in group], name)
            for i in range(len(h.freq)):
                w.writerow([lab, name, repr(float(h.bin_edges[i])), repr(float(h.bin_edges[i + 1])),
                            repr(float(h.freq[i]))])
    atomic_write(out / "histograms.csv", buf.getvalue())
    written.append(out / "histograms.csv")

    if fam[A.F1] and fam[A.F2]:
        table = T.dissimilarity_table(fam[A.F1], fam[A.F2])
        atomic_write(out / "dir_table.csv",
                     "parameter,d_ir\n" + "".join(f"{n},{float(d)!r}\n" for n, d in table))
        written.append(out / "dir_table.csv")
    else:
        print("d_IR table skipped: need sets of both families", file=sys.stderr)

    if len(sets) >= 2:
        res = T.pca(T.parameter_table(sets))
        atomic_write(out / "pca.csv", "component,fraction\n" + "".join(
            f"{i + 1},{float(f)!r}\n" for i, f in enumerate(res.fractions)))
        written.append(out / "pca.csv")

    if args.ratios:
        ratio_of = {r["index"]: r["ratio"] for r in read_jsonl(args.ratios) if "ratio" in r}
        rows = ["family,threshold,side,probability,count"]
        for lab in (A.F1, A.F2):
            vals = [ratio_of[i] for i in sorted(labels) if labels[i] == lab and i in ratio_of]
            for thr, side in TAIL_THRESHOLDS:
                prob = T.tail_probability(vals, thr, side) if vals else float("nan")
                rows.append(f"{lab},{float(thr)!r},{side},{float(prob)!r},{len(vals)}")
        atomic_write(out / "tails.csv", "\n".join(rows) + "\n")
        written.append(out / "tails.csv")

    write_manifest(out / "histograms.csv", "stats",
                   {"bins": T.N_BINS, "gamma_ii_cap": T.GAMMA_II_CAP,
                    "reversal_cap": T.INHIBITORY_REVERSAL_CAP, "pca": "correlation matrix",
                    "log_base": 2, "tails": [list(t) for t in TAIL_THRESHOLDS]},
                   [args.params, args.reports] + ([args.ratios] if args.ratios else []),
                   written, {"stats": time.perf_counter() - t0})
    return EXIT_OK


# ---------------------------------------------------------------- diagram

COLORS = {"equilibrium": "#2ca02c", "stable": "#1f4fbf", "unstable": "#d62728",
          "sn": "#000000", "hb": "#7f3fbf", "rect": "#888888"}


def svg_plot(series: list[dict], xlabel: str, ylabel: str, logx: bool = True,
             logy: bool = False, width: int = 640, height: int = 480) -> str:
    """Minimal byte-deterministic SVG line/marker plot.

    Each series: {"xy": (n, 2) array, "color": str, "dash": bool, "marker": bool}.
    """
    def tx(v, log):
        return np.log10(v) if log else v

    pts = [np.column_stack([tx(s["xy"][:, 0], logx), tx(s["xy"][:, 1], logy)])
           for s in series if len(s["xy"])]
    allp = np.vstack(pts) if pts else np.zeros((1, 2))
    allp = allp[np.all(np.isfinite(allp), axis=1)]
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    m = 50

    def px(p):
        return (m + (p[:, 0] - lo[0]) / span[0] * (width - 2 * m),
                height - m - (p[:, 1] - lo[1]) / span[1] * (height - 2 * m))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" '
           'fill="none" stroke="#000000" stroke-width="1"/>']
    for s, p in zip([s for s in series if len(s["xy"])], pts):
        x, y = px(p)
        ok = np.isfinite(x) & np.isfinite(y)
        if s.get("marker"):
            for a, b in zip(x[ok], y[ok]):
                out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{s["color"]}"/>')
        else:
            coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x[ok], y[ok]))
            dash = ' stroke-dasharray="4,3"' if s.get("dash") else ""
            out.append(f'<polyline points="{coords}" fill="none" stroke="{s["color"]}" '
                       f'stroke-width="1.5"{dash}/>')
    xl = f"log10 {xlabel}" if logx else xlabel
    yl = f"log10 {ylabel}" if logy else ylabel
    out.append(f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" '
               f'font-size="12">{xl} [{lo[0]:.3g}, {hi[0]:.3g}]</text>')
    out.append(f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 14 {height / 2:.0f})">{yl} [{lo[1]:.3g}, {hi[1]:.3g}]</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal index runs of constant ``mask`` (inclusive overlap at joins)."""
    runs, start = [], 0
    for i in range(1, len(mask) + 1):
        if i == len(mask) or mask[i] != mask[start]:
            runs.append((start, min(i, len(mask) - 1)))
            start = i
    return runs


def diagram_1par(params: M.ParameterSet, k: float, out: Path, svg: bool,
                 cycles: bool = True) -> list[Path]:
    base = M.Modulation(1.0, k)
    br = B.liley_branch(params, "R", base)
    events = B.detect_codim1(br)
    system = br.problem.system
    n = M.N_STATE
    R = np.exp(br.u[:, n])
    h = np.array([system.to_state(u[:n], u[n:])[0] for u in br.u])
    stable = np.array([bool(np.all(np.real(ev) < 0)) for ev in B._eigen_data(br, system)])
    lines = ["R,h_e,stable"] + [f"{float(r)!r},{float(v)!r},{int(s)}" for r, v, s in zip(R, h, stable)]
    files = []
    eq_path = out / "equilibria.csv"
    atomic_write(eq_path, "\n".join(lines) + "\n")
    files.append(eq_path)
    ev_lines = ["kind,R,h_e,frequency_hz,l1"]
    for e in events:
        f = e.diagnostics.get("angular_frequency")
        ev_lines.append(f"{e.kind},{float(e.location['R'])!r},{float(e.state[0])!r},"
                        f"{'' if f is None else repr(float(f) / (2 * np.pi))},"
                        f"{e.diagnostics.get('l1', '')}")
    ev_path = out / "events.csv"
    atomic_write(ev_path, "\n".join(ev_lines) + "\n")
    files.append(ev_path)
    series = []
    for a, b in _runs(stable):
        series.append({"xy": np.column_stack([R[a:b + 1], h[a:b + 1]]),
                       "color": COLORS["equilibrium"], "dash": not stable[a]})
    if cycles:
        for j, e in enumerate(ev for ev in events if ev.kind == "Hopf"):
            try:
                cb = B.continue_periodic_orbit(system, e, S.ContinuationConfig(
                    initial_step=1e-2, max_step=0.2, max_points=150))
            except (B.ShootingDivergence, S.NonConvergence) as exc:
                print(f"cycle branch from Hopf {j} failed: {exc}", file=sys.stderr)
                continue
            path = out / f"cycles_{j}.csv"
            atomic_write(path, _cycle_csv(cb))
            files.append(path)
            for a, b in _runs(cb.stable):
                series.append({"xy": np.column_stack([cb.params[a:b + 1], cb.max_h_e[a:b + 1]]),
                               "color": COLORS["stable" if cb.stable[a] else "unstable"]})
    series.append({"xy": np.array([[e.location["R"], e.state[0]] for e in events]).reshape(-1, 2),
                   "color": "#000000", "marker": True})
    if svg:
        path = out / "diagram_1par.svg"
        atomic_write(path, svg_plot(series, "R", "h_e (mV)"))
        files.append(path)
    return files


def _cycle_csv(cb: B.CycleBranch) -> str:
    lines = ["R,period_s,max_h_e,stable,alpha_band"]
    for i in range(len(cb)):
        lines.append(f"{float(cb.params[i])!r},{float(cb.periods[i])!r},{float(cb.max_h_e[i])!r},"
                     f"{int(cb.stable[i])},{int(cb.alpha_band[i])}")
    return "\n".join(lines) + "\n"


def diagram_2par(params: M.ParameterSet, out: Path, svg: bool,
                 window: A.Window | None = None) -> list[Path]:
    cfg = replace(A.ClassifierConfig(), hopf_curves=True)
    portrait = A.build_portrait(params, window or A.nested_windows(1e2)[-1], cfg)
    system = A._system(params)
    n = M.N_STATE
    rows = ["curve,kind,R,k"]
    series = []
    for i, fc in enumerate(portrait.fold_curves):
        rk = fc.params()
        rows += [f"{i},sn,{float(R)!r},{float(k)!r}" for R, k in rk]
        series.append({"xy": rk, "color": COLORS["sn"]})
    for j, hc in enumerate(portrait.hopf_curves):
        rk = np.array([[system.physical_values(u[2 * n + 1:])[nm] for nm in ("R", "k")] for u in hc.u])
        rows += [f"{len(portrait.fold_curves) + j},hb,{float(R)!r},{float(k)!r}" for R, k in rk]
        series.append({"xy": rk, "color": COLORS["hb"]})
    w = A.PHYSIOLOGICAL
    rect = np.array([[w.R_min, w.k_min], [w.R_max, w.k_min], [w.R_max, w.k_max],
                     [w.R_min, w.k_max], [w.R_min, w.k_min]])
    rows += [f",rect,{float(R)!r},{float(k)!r}" for R, k in rect]
    series.append({"xy": rect, "color": COLORS["rect"], "dash": True})
    curve_path = out / "curves_2par.csv"
    atomic_write(curve_path, "\n".join(rows) + "\n")
    mk = ["kind,R,k,h_e,h_i"] + [f"{e.kind},{float(e.location['R'])!r},{float(e.location['k'])!r},"
                                 f"{float(e.state[0])!r},{float(e.state[1])!r}" for e in portrait.inventory]
    mk_path = out / "markers_2par.csv"
    atomic_write(mk_path, "\n".join(mk) + "\n")
    files = [curve_path, mk_path]
    if portrait.inventory:
        series.append({"xy": np.array([[e.location["R"], e.location["k"]] for e in portrait.inventory]),
                       "color": "#000000", "marker": True})
    if svg:
        path = out / "diagram_2par.svg"
        atomic_write(path, svg_plot(series, "R", "k", logx=True, logy=True))
        files.append(path)
    return files


def cmd_diagram(args, cp) -> int:
    sets = read_parameter_sets(args.set)
    if not 0 <= args.index < len(sets):
        raise UsageError(f"--index {args.index} out of range for {len(sets)} sets")
    if args.k <= 0:
        raise UsageError("--k must be positive")
    params = sets[args.index]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        if args.mode == "1par":
            files = diagram_1par(params, args.k, out, args.svg, not args.no_cycles)
        else:
            files = diagram_2par(params, out, args.svg)
    except (S.NonConvergence, S.StepCollapse, A.PortraitIncomplete, M.InvalidParameters) as exc:
        print(f"diagram failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    write_manifest(files[0], "diagram", {"mode": args.mode, "k": args.k, "index": args.index,
                                         "svg": bool(args.svg)},
                   [args.set], files, {"diagram": time.perf_counter() - t0})
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lileymap", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="INI file with [sample]/[classify]/[sweep]/[spectrum] sections")
    ap.add_argument("--version", action="version", version=f"lileymap {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", help="draw plausibility-filtered parameter sets")
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--out", required=True)

    def classifier_flags(q):
        q.add_argument("--workers", type=int, help=f"worker processes (else ${WORKERS_ENV})")
        q.add_argument("--window-cap", dest="window_cap", type=float)
        q.add_argument("--tol", type=float)
        q.add_argument("--max-step", dest="max_step", type=float)
        q.add_argument("--halve-tolerances", dest="halve_tolerances", action="store_true")

    p = sub.add_parser("classify", help="label parameter sets F1/F2")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.add_argument("--emit-curves", dest="emit_curves", metavar="DIR")
    p.add_argument("--timing", action="store_true", help="include per-set wall time in the JSONL")
    classifier_flags(p)

    p = sub.add_parser("sweep", help="bracket family changes along a thalamic input")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--axis", required=True)
    p.add_argument("--range", help="lo,hi in 1/s (default 0,26000)")
    p.add_argument("--resolution", type=float)
    p.add_argument("--coarse", type=int)
    p.add_argument("--out", required=True)
    classifier_flags(p)

    p = sub.add_parser("spectrum", help="power ratios under a PSP transform")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--transform", help="'a,b' or 'identity' (default 1.0,1.5)")
    p.add_argument("--band", help="f_lo,f_hi in Hz (default 0,100)")
    p.add_argument("--n-freq", dest="n_freq", type=int)
    p.add_argument("--noise-density", dest="noise_density", type=float)
    p.add_argument("--equilibrium", choices=("initial", "stable"), default="initial")
    p.add_argument("--fig6", metavar="CSV", help="write a 250-bin ratio histogram over 0-4")
    p.add_argument("--spectra-dir", dest="spectra_dir", metavar="DIR")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("stats", help="family histograms, d_IR, PCA and tails")
    p.add_argument("--reports", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--ratios")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("diagram", help="one- or two-parameter bifurcation diagram data")
    p.add_argument("--set", required=True, help="parameter CSV/JSON")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--mode", choices=("1par", "2par"), default="1par")
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--no-cycles", dest="no_cycles", action="store_true")
    p.add_argument("--out", required=True, metavar="DIR")
    return ap


COMMANDS = {"sample": cmd_sample, "classify": cmd_classify, "sweep": cmd_sweep,
            "spectrum": cmd_spectrum, "stats": cmd_stats, "diagram": cmd_diagram}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cp = load_config(args.config)
        return COMMANDS[args.command](args, cp)
    except UsageError as exc:
        print(f"lileymap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, M.InvalidParameters) as exc:
        print(f"lileymap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

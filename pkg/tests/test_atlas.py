import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

import oracles as O
from lileymap import atlas as A
from lileymap import bifurcations as B
from lileymap import model as M
from lileymap import solver as S

BOX = A.Window(1e-2, 1e2, 1e-2, 1e2)


# -------------------------------------------------------------- synthetic geometry

def synthetic_curve(log_r, log_k):
    """A fold curve from a polyline in (log R, log k); cusps where it reverses."""
    img = np.column_stack([log_r, log_k])
    d = np.diff(img, axis=0)
    turns = np.where(np.sum(d[1:] * d[:-1], axis=1) < 0)[0] + 1
    cusps = [B.BifurcationPoint("Cusp", {"R": math.exp(img[i, 0]), "k": math.exp(img[i, 1])},
                                np.zeros(M.N_STATE)) for i in turns]
    u = np.column_stack([np.zeros((len(img), M.N_STATE)), img])
    return A.FoldCurve(SimpleNamespace(u=u), "synthetic", cusps, cusps)


s = np.linspace(-2.0, 2.0, 401)


def parallel_lines():
    x = np.linspace(-6, 6, 200)
    return [synthetic_curve(x, x + 1.0), synthetic_curve(x, x - 1.0)]


def v_and_lambda():
    return [synthetic_curve(1.0 + s ** 2, s ** 3), synthetic_curve(-1.0 - s ** 2, -(s ** 3))]


def swallowtail_plus_line():
    # velocity (3(s^2-1), s(s^2-1)) vanishes at s = +-1: two cusps on one branch
    one = synthetic_curve(s ** 3 - 3 * s, s ** 4 / 4 - s ** 2 / 2 + 2.0)
    x = np.linspace(-6, 6, 200)
    return [one, synthetic_curve(x, x - 3.0)]


@pytest.mark.parametrize("geometry,label,census", [
    (parallel_lines, A.F1, [0, 0]),
    (v_and_lambda, A.F2, [1, 1]),
    (swallowtail_plus_line, A.F1, [2, 0]),
])
def test_synthetic_geometries(geometry, label, census):
    resolved, raw = A.census(geometry(), BOX, 0.05)
    assert resolved == census and raw == census
    assert A.label_from_census(resolved) == label


@pytest.mark.parametrize("census,label", [
    ([0, 0], A.F1), ([2, 0], A.F1), ([0, 2], A.F1), ([1, 1], A.F2),
    ([1], A.INDETERMINATE), ([2], A.INDETERMINATE), ([1, 0, 0], A.INDETERMINATE),
    ([2, 2], A.INDETERMINATE), ([], A.INDETERMINATE), ([3, 1], A.INDETERMINATE),
])
def test_label_rule(census, label):
    assert A.label_from_census(census) == label


def test_curves_and_cusps_outside_window_are_ignored():
    curves = v_and_lambda()
    far = synthetic_curve(20 + s ** 2, 20 + s ** 3)
    resolved, _ = A.census(curves + [far], BOX, 0.05)
    assert resolved == [1, 1]
    small = A.Window(math.exp(0.5), 1e2, 1e-2, 1e2)   # keeps the V, drops its partner
    assert A.census(curves, small, 0.05)[0] == [1]


def test_micro_pairs_cancel_but_resolved_pairs_survive():
    t = np.linspace(-1, 1, 4001)
    for eps, expect in ((0.01, 0), (0.3, 2)):
        # swallowtail section with cusps at t = +-eps, 4 eps^3 apart in log R
        r = t ** 3 - 3 * eps ** 2 * t
        k = t ** 4 / 4 - eps ** 2 * t ** 2 / 2
        fc = synthetic_curve(r, k)
        assert len(fc.cusps) == 2
        resolved, raw = A.census([fc], A.Window(0.1, 10, 0.1, 10), 0.05)
        assert raw == [2] and resolved == [expect]


# -------------------------------------------------------------- windows

def test_nested_windows_double_until_cap():
    ws = A.nested_windows(1e4)
    assert ws[0] == A.PHYSIOLOGICAL
    for a, b in zip(ws, ws[1:]):
        assert b.R_min <= a.R_min and b.R_max >= a.R_max and b.k_min <= a.k_min and b.k_max >= a.k_max
        assert b != a
    assert ws[-1].as_tuple() == (1e-4, 1e4, 1e-4, 1e4)


def test_window_log_bounds_target_parameter_columns():
    (c1, lo1, hi1), (c2, lo2, hi2) = BOX.log_bounds()
    assert (c1, c2) == (M.N_STATE, M.N_STATE + 1)
    assert (lo1, hi1) == pytest.approx((math.log(1e-2), math.log(1e2)))


# -------------------------------------------------------------- error contract

def test_portrait_without_folds_is_incomplete(batch, monkeypatch):
    monkeypatch.setattr(B, "detect_codim1", lambda br, system=None: [])
    monkeypatch.setattr(A, "grid_fold_seeds", lambda *a, **k: [])
    with pytest.raises(A.PortraitIncomplete) as exc:
        A.build_portrait(batch[0])
    assert exc.value.partial is not None
    assert exc.value.partial.status["slice_saddle_nodes"] == 0
    rep = A.classify_family(batch[0])
    assert rep.label == A.INDETERMINATE and rep.cause.startswith("PortraitIncomplete")
    assert rep.failed


def test_batch_isolates_a_failing_set(batch, monkeypatch):
    real = A.classify_family

    def flaky(params, window=None, config=None):
        if params is batch[1]:
            raise RuntimeError("boom")
        return real(params, window, config)

    monkeypatch.setattr(A, "classify_family", flaky)
    reports, summary = A.batch_classify(batch[:3], workers=1)
    assert [r.failed for r in reports] == [False, True, False]
    assert "boom" in reports[1].cause and summary["failures"] == 1


# -------------------------------------------------------------- real sets

def test_batch_matches_oracle_census(batch, batch_reports):
    reports, _ = batch_reports
    W = A.nested_windows(A.ClassifierConfig().window_cap)[-1]
    for p, rep in zip(batch, reports):
        assert rep.cusp_census == O.oracle_census(p, W)
        assert rep.label == O.oracle_label(rep.cusp_census)


def test_summary_is_consistent(batch_reports):
    reports, summary = batch_reports
    assert summary["count"] == len(reports)
    for lab, n in summary["labels"].items():
        assert n == sum(r.label == lab for r in reports)
        assert summary["proportions"][lab] == n / len(reports)
    assert summary["mean_wall_time"] == pytest.approx(np.mean([r.wall_time for r in reports]))


def test_indeterminate_only_for_unmatched_census(batch_reports):
    for r in batch_reports[0]:
        if r.label == A.INDETERMINATE:
            assert r.cause.startswith("census") and r.cusp_census not in ([0, 0], [2, 0], [1, 1])


def test_base_slice_has_saddle_nodes(batch_reports):
    for r in batch_reports[0]:
        kinds = [e["kind"] for e in r.diagnostics["slice_events"]]
        assert kinds.count("SaddleNode") >= 1


def test_missing_slice_hopf_is_genuine(batch, batch_reports):
    # sets whose k = 1 slice has no Hopf point: the dense scan agrees
    checked = 0
    for p, r in zip(batch, batch_reports[0]):
        if any(e["kind"] == "Hopf" for e in r.diagnostics["slice_events"]) or checked == 2:
            continue
        x = S.solve_equilibrium(p)
        scan = O.slice_scan(p, start=(x[0], x[1]))
        W = r.window
        assert not [e for e in O.scan_events(scan, (W[0], W[1]), start=(x[0], x[1]))
                    if e[0] == "Hopf"]
        checked += 1
    assert checked == 2


def crossings_k1(fc):
    lk = fc.branch.u[:, M.N_STATE + 1]
    lr = fc.branch.u[:, M.N_STATE]
    out = []
    for i in np.where(np.sign(lk[:-1]) != np.sign(lk[1:]))[0]:
        t = lk[i] / (lk[i] - lk[i + 1])
        out.append(math.exp(lr[i] + t * (lr[i + 1] - lr[i])))
    return out


def test_slice_consistency(batch, batch_reports):
    """F1: slice folds on distinct branches; F2: each on a one-cusp branch."""
    seen = {A.F1: 0, A.F2: 0}
    for p, r in zip(batch, batch_reports[0]):
        if r.label == A.INDETERMINATE or seen[r.label] >= 3:
            continue
        P = A.build_portrait(p)
        W = P.window
        owners = []
        for e in P.slice_events:
            if e.kind != "SaddleNode":
                continue
            hits = [j for j, fc in enumerate(P.fold_curves)
                    if any(abs(math.log(R / e.location["R"])) < 1e-3 for R in crossings_k1(fc))]
            assert len(hits) == 1
            owners.append(hits[0])
        if r.label == A.F1 and len(owners) == 2:
            assert owners[0] != owners[1]
        if r.label == A.F2:
            for j in owners:
                inside = [c for c in P.fold_curves[j].cusps
                          if W.contains(c.location["R"], c.location["k"])]
                assert len(inside) == 1
        seen[r.label] += 1
    assert seen == {A.F1: 3, A.F2: 3}


def test_classification_is_deterministic(few):
    for p in few[:3]:
        a, b = A.classify_family(p), A.classify_family(p)
        assert a.to_json() == b.to_json()


def test_report_json_excludes_timing_unless_asked(few):
    r = A.classify_family(few[0])
    assert "wall_time" not in r.to_json()
    assert r.to_json(timing=True)["wall_time"] == r.wall_time


def test_inventory_inside_window_and_unique(few):
    P = A.build_portrait(few[0], config=A.ClassifierConfig(hopf_curves=True))
    for i, e in enumerate(P.inventory):
        assert P.window.contains(e.location["R"], e.location["k"])
        for o in P.inventory[:i]:
            assert not (o.kind == e.kind and o.location == e.location)


# -------------------------------------------------------------- sweeps

def fake_labels(monkeypatch, rule):
    calls = []

    def classify(params, window=None, config=None):
        calls.append(params.p_ei)
        return SimpleNamespace(label=rule(params.p_ei, params.p_ee))

    monkeypatch.setattr(A, "classify_family", classify)
    return calls


def test_sweep_brackets_transition_to_resolution(batch, monkeypatch):
    fake_labels(monkeypatch, lambda ei, ee: A.F2 if ei < 6850 else A.F1)
    scan = A.metamorphosis_sweep(batch[0], "p_ei", resolution=100)
    assert len(scan.transitions) == 1
    lo, hi, la, lb = scan.transitions[0]
    assert (la, lb) == (A.F2, A.F1) and lo < 6850 <= hi and hi - lo <= 100
    # piecewise constancy: sample labels only change across the bracket
    for v, lab in scan.samples:
        assert lab == (A.F2 if v <= lo else A.F1)


def test_sweep_closes_in_on_indeterminate_stretch(batch, monkeypatch):
    rule = lambda ei, ee: A.F2 if ei < 6000 else (A.INDETERMINATE if ei < 7000 else A.F1)
    fake_labels(monkeypatch, rule)
    scan = A.metamorphosis_sweep(batch[0], "p_ei", resolution=100)
    ((lo, hi, la, lb),) = scan.transitions
    assert (la, lb) == (A.F2, A.F1)
    assert 5900 <= lo < 6000 and 7000 <= hi <= 7100
    assert scan.flagged and all(6000 <= v < 7000 for v in scan.flagged)


def test_sweep_indeterminate_samples_are_flagged(batch, monkeypatch):
    fake_labels(monkeypatch, lambda ei, ee: A.INDETERMINATE if 9000 < ei < 11000 else A.F1)
    scan = A.metamorphosis_sweep(batch[0], "p_ei")
    assert scan.transitions == [] and scan.flagged == [10000.0]


def test_sweep_zero_width_range(batch, monkeypatch):
    calls = fake_labels(monkeypatch, lambda ei, ee: A.F1)
    scan = A.metamorphosis_sweep(batch[0], "p_ei", value_range=(5000, 5000))
    assert calls == [5000.0] and scan.samples == [(5000.0, A.F1)] and scan.transitions == []


@pytest.mark.parametrize("axis,rng_", [("p_xx", (0, 1)), ("p_ei", (10, 0))])
def test_sweep_rejects_bad_arguments(batch, axis, rng_):
    with pytest.raises(ValueError):
        A.metamorphosis_sweep(batch[0], axis, rng_)


def test_bt_scan_refinement_is_consistent(batch):
    # set 4 loses a Bogdanov-Takens point between 7,000 and 8,000 /s
    coarse = A.bt_annihilation_scan(batch[4], value_range=(7000, 8000), coarse=3, resolution=200)
    fine = A.bt_annihilation_scan(batch[4], value_range=(7000, 8000), coarse=3, resolution=100)
    (c,), (f,) = [x for x in coarse["changes"] if x["count"] == "bt"], \
                 [x for x in fine["changes"] if x["count"] == "bt"]
    assert c["from"] - c["to"] == f["from"] - f["to"] == 1
    assert c["lo"] <= f["lo"] < f["hi"] <= c["hi"] and f["hi"] - f["lo"] <= 100

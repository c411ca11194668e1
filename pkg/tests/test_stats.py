import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from lileymap import model as M
from lileymap import stats as T

# sqrt of the information radius of (0.5, 0.5) and (1, 0), evaluated by hand
# as the mean Kullback-Leibler divergence to the midpoint (0.75, 0.25)
HALF_VS_DELTA = 0.5579230452841438


def kl_form(g, h):
    g, h = np.asarray(g, float), np.asarray(h, float)
    a = (g + h) / 2
    kl = lambda p: sum(pi * math.log2(pi / ai) for pi, ai in zip(p, a) if pi > 0)
    return math.sqrt(0.5 * kl(g) + 0.5 * kl(h))


# -------------------------------------------------------------- histograms

def test_constant_values_fill_one_bin():
    h = T.histogram(np.full(37, 0.05), "tau_e")
    assert np.count_nonzero(h.freq) == 1 and h.freq.max() == 1.0
    assert len(h.freq) == 20 and len(h.bin_edges) == 21


def test_gamma_ii_cap_counts_in_top_bin():
    h = T.histogram([500.0, 30.0], "gamma_ii")
    assert h.bin_edges[-1] == 120.0 and h.bin_edges[0] == M.PARAMETER_RANGES["gamma_ii"][0]
    assert h.counts[-1] == 1 and h.n_overflow == 1 and h.overflow == "top"


def test_inhibitory_reversal_cap():
    for name in ("h_eq_ie", "h_eq_ii"):
        h = T.histogram([-80.0, -65.0], name)
        assert h.bin_edges[-1] == -65.0 and h.counts[-1] == 1
        with pytest.raises(ValueError):
            T.histogram([-60.0], name)


def test_uniform_law_of_large_numbers():
    lo, hi = M.PARAMETER_RANGES["tau_e"]
    v = np.random.default_rng(7).uniform(lo, hi, 10 ** 6)
    h = T.histogram(v, "tau_e")
    assert np.max(np.abs(h.freq - 0.05)) <= 0.001


def test_histogram_normalised(batch):
    for name in M.PARAMETER_NAMES:
        h = T.histogram([getattr(p, name) for p in batch], name)
        assert abs(h.freq.sum() - 1) <= 1e-12


def test_empty_input():
    with pytest.raises(T.EmptyInput):
        T.histogram([], "tau_e")
    with pytest.raises(T.EmptyInput):
        T.tail_probability([], 0.0)


def test_merge_equals_histogram_of_union(rng):
    lo, hi = M.PARAMETER_RANGES["sigma_e"]
    a, b = rng.uniform(lo, hi, 300), rng.uniform(lo, hi, 1700)
    m = T.merge(T.histogram(a, "sigma_e"), T.histogram(b, "sigma_e"))
    u = T.histogram(np.concatenate([a, b]), "sigma_e")
    assert np.array_equal(m.counts, u.counts)
    np.testing.assert_allclose(m.freq, u.freq, rtol=0, atol=1e-15)
    assert abs(m.freq.sum() - 1) <= 1e-12


def test_ratio_histogram_bins():
    h = T.ratio_histogram([0.5, 0.77, 9.0])
    assert len(h.freq) == 250 and h.bin_edges[0] == 0.0 and h.bin_edges[-1] == 4.0
    assert h.counts[-1] == 1


def test_histogram_csv():
    rows = T.histogram([0.05], "tau_e").to_csv().splitlines()
    assert rows[0] == "bin_lo,bin_hi,count,freq" and len(rows) == 21


# -------------------------------------------------------------- d_IR

def test_identical_distributions_zero():
    g = np.array([0.1, 0.2, 0.3, 0.4])
    assert T.information_radius_distance(g, g.copy()) == 0.0


def test_disjoint_deltas_one():
    for k, l in ((0, 1), (0, 19), (7, 3)):
        g, h = np.zeros(20), np.zeros(20)
        g[k], h[l] = 1, 1
        assert T.information_radius_distance(g, h) == 1.0


def test_half_versus_delta():
    d = T.information_radius_distance([0.5, 0.5], [1.0, 0.0])
    assert d == pytest.approx(HALF_VS_DELTA, rel=1e-14)
    assert kl_form([0.5, 0.5], [1.0, 0.0]) == pytest.approx(HALF_VS_DELTA, rel=1e-14)


def random_hist(rng, n=20):
    w = rng.exponential(size=n) * (rng.random(n) < 0.7)
    if w.sum() == 0:
        w[0] = 1
    return w / w.sum()


def test_metric_properties(rng):
    d = T.information_radius_distance
    for _ in range(100):
        g, h, q = random_hist(rng), random_hist(rng), random_hist(rng)
        assert d(g, h) == d(h, g)
        assert 0 <= d(g, h) <= 1
        assert d(g, q) <= d(g, h) + d(h, q) + 1e-12
        assert d(g, h) == pytest.approx(kl_form(g, h), rel=1e-9, abs=1e-12)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=12), st.data())
@settings(max_examples=60, deadline=None)
def test_symmetry_property(a, data):
    b = data.draw(st.lists(st.floats(0, 1), min_size=len(a), max_size=len(a)))
    if sum(a) == 0 or sum(b) == 0:
        return
    g, h = np.array(a) / sum(a), np.array(b) / sum(b)
    assert T.information_radius_distance(g, h) == T.information_radius_distance(h, g)


def test_bin_mismatch():
    a = T.histogram([0.05], "tau_e")
    b = T.histogram([0.05], "tau_e", n=10)
    with pytest.raises(T.BinMismatch):
        T.information_radius_distance(a, b)
    with pytest.raises(T.BinMismatch):
        T.information_radius_distance([0.5, 0.5], [1.0])
    with pytest.raises(T.BinMismatch):
        T.information_radius_distance(a, a.freq)


def test_dissimilarity_table_sorted(batch):
    rows = T.dissimilarity_table(batch[:25], batch[25:])
    assert len(rows) == 32
    values = [v for _, v in rows]
    assert values == sorted(values, reverse=True)
    assert T.dissimilarity_table(batch, batch)[0][1] == 0.0


# -------------------------------------------------------------- PCA

def test_rank_one_data():
    t = np.linspace(0, 1, 50)
    X = np.column_stack([t, 2 * t + 1, -3 * t])
    res = T.pca(X)
    assert res.fractions[0] == pytest.approx(1.0, abs=1e-12)


def test_fractions_match_correlation_eigenvalues(batch):
    X = T.parameter_table(batch)
    res = T.pca(X)
    keep = X[:, res.columns]
    ev = np.sort(np.linalg.eigvalsh(np.corrcoef(keep, rowvar=False)))[::-1]
    np.testing.assert_allclose(res.fractions[:len(ev)], (ev / ev.sum())[:len(res.fractions)],
                               rtol=0, atol=1e-10)
    assert abs(res.fractions.sum() - 1) <= 1e-10
    assert np.all(np.diff(res.fractions) <= 1e-15)
    np.testing.assert_allclose(res.components @ res.components.T, np.eye(len(res.components)),
                               atol=1e-10)


def test_rotation_invariance(rng):
    X = rng.standard_normal((80, 6)) @ rng.standard_normal((6, 6))
    Z = (X - X.mean(0)) / X.std(0, ddof=1)
    Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    a = T.pca(Z, standardize=False).fractions
    b = T.pca(Z @ Q, standardize=False).fractions
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)


def test_zero_variance_column_dropped(rng):
    X = np.column_stack([rng.standard_normal(20), np.full(20, 3.0), rng.standard_normal(20)])
    with pytest.warns(T.DegenerateData):
        res = T.pca(X)
    assert res.columns == [0, 2] and res.dropped == [1]


def test_pca_needs_two_rows():
    with pytest.raises(ValueError):
        T.pca(np.ones((1, 3)))


# -------------------------------------------------------------- tails

def test_tail_below_minimum():
    assert T.tail_probability([1.0, 2.0, 3.0], 0.0, ">=") == 1.0
    assert T.tail_probability([1.0, 2.0, 3.0], 0.0, "<=") == 0.0


def test_tail_at_median():
    v = np.random.default_rng(3).permutation(np.arange(11.0))
    assert T.tail_probability(v, 5.0, "<=") == (11 + 1) / (2 * 11)


def test_tail_matches_normal():
    n = 200_000
    v = np.random.default_rng(11).normal(0.77, 0.09, n)
    p = norm.cdf(0.7, 0.77, 0.09)
    assert abs(T.tail_probability(v, 0.7) - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_tail_side_validation():
    with pytest.raises(ValueError):
        T.tail_probability([1.0], 0.5, "<")

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from lileymap import bifurcations as B
from lileymap import model as M
from lileymap import solver as S
from lileymap import spectra as P


def scalar_system(a):
    return P.LinearSystem(np.array([[-a]]), np.array([1.0]), np.array([1.0]))


# -------------------------------------------------------------- linearisation

def test_state_matrix_is_the_model_jacobian(few):
    for p in few:
        x = S.solve_equilibrium(p)
        sys_ = P.linearize(p)
        assert np.array_equal(sys_.A, M.jacobian(x, p))
        assert np.array_equal(sys_.equilibrium, x)


def test_input_column_follows_channels(few):
    p = few[0]
    b = P.linearize(p).B
    assert np.flatnonzero(b).tolist() == [M.I_EE + 1]
    assert b[M.I_EE + 1] == pytest.approx(math.e * p.Gamma_ee * p.gamma_ee, rel=1e-14)
    both = P.linearize(p, channels=("p_ee", "p_ei")).B
    assert np.flatnonzero(both).tolist() == [M.I_EE + 1, M.I_EI + 1]


def test_small_step_response_matches_linear_prediction(few):
    for p in few[:3]:
        sys_ = P.linearize(p)
        x0 = sys_.equilibrium
        dp = 1e-3 * p.p_ee
        q = replace(p, p_ee=p.p_ee + dp)
        T = 0.05
        sol = solve_ivp(lambda t, x: M.rhs(x, q), (0, T), x0, method="Radau",
                        rtol=1e-11, atol=1e-12 * np.abs(x0).max(), t_eval=np.linspace(0, T, 51)[1:])
        nonlinear = sol.y[0] - x0[0]
        linear = np.array([sys_.C @ np.linalg.solve(sys_.A, (expm(sys_.A * t) - np.eye(14)) @ sys_.B)
                           for t in sol.t]) * dp
        assert np.max(np.abs(nonlinear - linear)) <= 0.01 * np.max(np.abs(linear))


def test_unstable_equilibrium_rejected(batch):
    p = batch[4]
    br = B.liley_branch(p, "R", window=(0.05, 20.0))
    lo, hi = sorted(e.location["R"] for e in B.detect_codim1(br) if e.kind == "SaddleNode")
    m = M.Modulation(math.sqrt(lo * hi), 1.0)
    found = B.equilibria(p, m)
    unstable = [x for x in found if not S.is_stable(M.jacobian(x, p, m))]
    assert unstable
    with pytest.raises(P.UnstableEquilibrium):
        P.linearize(p, m, unstable[0])


# -------------------------------------------------------------- spectra

def test_first_order_low_pass_closed_form():
    a, F = 30.0, 400.0
    res = P.power_spectrum(scalar_system(a), (0, F), 200_001)
    w = 2 * np.pi * res.frequencies
    np.testing.assert_allclose(res.density, 1 / (a ** 2 + w ** 2), rtol=1e-12)
    exact = math.atan(2 * math.pi * F / a) / (2 * math.pi * a)
    assert res.total_power == pytest.approx(exact, rel=1e-8)
    # over all f >= 0 the one-sided density integrates to the variance 1/(4a)
    assert P.lyapunov_variance(scalar_system(a)) == pytest.approx(1 / (4 * a), rel=1e-14)


def test_density_positive_and_even(few):
    sys_ = P.linearize(few[0])
    f = np.linspace(0.1, 200, 500)
    Hp, Hm = P.transfer(sys_, f), P.transfer(sys_, -f)
    assert np.all(np.abs(Hp) ** 2 > 0)
    np.testing.assert_allclose(np.abs(Hm) ** 2, np.abs(Hp) ** 2, rtol=1e-12)


def test_total_power_is_the_integrated_density(few):
    r = P.power_spectrum(P.linearize(few[1]))
    assert r.total_power == pytest.approx(np.trapezoid(r.density, r.frequencies), rel=1e-3)
    assert len(r.frequencies) == 4096 and r.band == (0.0, 100.0)


def test_integration_matches_lyapunov(batch):
    for p in batch[:5]:
        sys_ = P.linearize(p)
        wide = P.power_spectrum(sys_, (0.0, 2e4), 2 ** 17).total_power
        assert wide == pytest.approx(P.lyapunov_variance(sys_), rel=1e-2)


def test_noise_density_scales_power_linearly(few):
    sys_ = P.linearize(few[2])
    one = P.power_spectrum(sys_).total_power
    assert P.power_spectrum(sys_, noise_density=2.0).total_power == 2 * one
    assert P.lyapunov_variance(sys_, 2.0) == pytest.approx(2 * P.lyapunov_variance(sys_), rel=1e-12)


def test_spectrum_rejects_bad_grid(few):
    sys_ = P.linearize(few[0])
    for band, n in (((0, 100), 1), ((50, 50), 10)):
        with pytest.raises(ValueError):
            P.power_spectrum(sys_, band, n)


def test_spectrum_csv(few):
    text = P.power_spectrum(P.linearize(few[0]), n_freq=8).to_csv().splitlines()
    assert text[0] == "frequency_hz,density_mv2_per_hz" and len(text) == 9


# -------------------------------------------------------------- ratios

def test_identity_ratio_exactly_one(batch):
    for p in batch[:10]:
        r = P.power_ratio(p, P.identity)
        assert r.ratio == 1.0 and not r.biphasic


def test_biphasic_flag_follows_threshold(batch):
    ratios = []
    for p in batch[:20]:
        try:
            r = P.power_ratio(p)
        except P.UnstableEquilibrium:
            continue
        assert r.biphasic == (r.ratio > 1.4)
        ratios.append(r.ratio)
        lo = P.power_ratio(p, threshold=r.ratio * (1 - 1e-9))
        hi = P.power_ratio(p, threshold=r.ratio)
        assert lo.biphasic and not hi.biphasic
    assert len(ratios) >= 15


@pytest.mark.parametrize("c", [1e-3, 0.5, 7.0, 1e4])
def test_ratio_independent_of_noise_scale(few, c):
    p = few[3]
    assert P.power_ratio(p, noise_density=c).ratio == pytest.approx(P.power_ratio(p).ratio, rel=1e-12)


def test_transform_scales_inhibitory_psp_only(few):
    p = few[0]
    q = P.AnestheticTransform(2.0, 3.0)(p)
    changed = {n for n in M.PARAMETER_NAMES if getattr(q, n) != getattr(p, n)}
    assert changed == {"Gamma_ie", "Gamma_ii", "gamma_ie", "gamma_ii"}
    assert q.Gamma_ie == 2 * p.Gamma_ie and q.gamma_ii == p.gamma_ii / 3
    assert P.AnestheticTransform(1.0, 1.0)(p) == p


def test_ratio_metadata_records_settings(few):
    meta = P.power_ratio(few[0]).meta
    assert meta["band"] == [0.0, 100.0] and meta["n_freq"] == 4096 and meta["channels"] == ["p_ee"]


# -------------------------------------------------------------- simulation

def test_noise_free_run_stays_at_equilibrium(few):
    p = few[0]
    x = S.solve_equilibrium(p)
    _, h = P.simulate_stochastic(p, noise_density=0.0, duration=0.5, dt=1e-5)
    assert np.max(np.abs(h - x[0])) <= 1e-9


def test_simulation_deterministic_per_seed(few):
    p = few[1]
    a = P.simulate_stochastic(p, duration=0.2, seed=5)[1]
    b = P.simulate_stochastic(p, duration=0.2, seed=5)[1]
    c = P.simulate_stochastic(p, duration=0.2, seed=6)[1]
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_simulation_requires_resolved_step(few):
    p = few[0]
    with pytest.raises(ValueError):
        P.simulate_stochastic(p, dt=1.0 / P.fastest_rate(p))


def test_simulation_reports_blow_up(few):
    with pytest.raises(P.BlowUp) as exc:
        P.simulate_stochastic(few[0], noise_density=1e12, duration=0.5, bound=100.0)
    assert 0 < exc.value.time <= 0.5


def welch_agreement(p, seed=1, duration=200.0):
    """Fraction of Welch bins in (2, 100) Hz inside the chi-square 95% band."""
    from scipy.stats import chi2

    sys_ = P.linearize(p)
    N0 = 0.01 / P.lyapunov_variance(sys_)
    dt = min(1e-5, 0.1 / P.fastest_rate(p))
    t, h = P.simulate_stochastic(p, noise_density=N0, duration=duration + 1, dt=dt, seed=seed,
                                 sample_every=10)
    f, pw, K = P.welch_density(h[t > 1], 1 / (dt * 10), segments=100)
    lin = np.abs(P.transfer(sys_, f)) ** 2 * N0
    band = (f > 2) & (f < 100)
    q = pw[band] / lin[band]
    lo, hi = chi2.ppf([0.025, 0.975], 2 * K) / (2 * K)
    return float(np.mean((q > lo) & (q < hi))), float(np.mean(q)), int(band.sum())

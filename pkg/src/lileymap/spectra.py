"""Noise-driven power spectra of the linearised cortex model.

Conventions: ``noise_density`` N0 is the one-sided power spectral density of
the white noise added to the thalamic input (units (1/s)^2/Hz).  The output
density is G(f) = |C (2 pi i f I - A)^-1 B|^2 N0 (mV^2/Hz), so its integral
over f >= 0 equals the stationary variance C P C^T, where P solves
A P + P A^T + (N0/2) B B^T = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_continuous_lyapunov
from scipy.signal import spectrogram, welch

from lileymap import kernels
from lileymap import model as M
from lileymap import solver as S

DEFAULT_BAND = (0.0, 100.0)
DEFAULT_N_FREQ = 4096
BIPHASIC_THRESHOLD = 1.4


class UnstableEquilibrium(RuntimeError):
    pass


class SingularResolvent(RuntimeError):
    pass


class BlowUp(RuntimeError):
    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@dataclass
class LinearSystem:
    """x' = A x + B w, y = C x around an equilibrium."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    equilibrium: np.ndarray | None = None
    channels: tuple = ("p_ee",)

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass
class PowerResult:
    frequencies: np.ndarray
    density: np.ndarray
    total_power: float
    band: tuple
    noise_density: float = 1.0

    @property
    def spectrum(self) -> list[tuple[float, float]]:
        return list(zip(self.frequencies.tolist(), self.density.tolist()))

    def to_csv(self) -> str:
        rows = ["frequency_hz,density_mv2_per_hz"]
        rows += [f"{f!r},{d!r}" for f, d in zip(self.frequencies.tolist(), self.density.tolist())]
        return "\n".join(rows) + "\n"


def input_vector(params: M.ParameterSet, m: M.Modulation = M.BASELINE,
                 channels: Sequence[str] = ("p_ee",)) -> np.ndarray:
    """State-space column for a unit perturbation of the thalamic input(s).

    ``("p_ee",)`` perturbs the excitatory-to-excitatory drive only, as in the
    model equations; ``("p_ee", "p_ei")`` applies the same noise to both
    excitatory inputs.
    """
    b = np.zeros(M.N_STATE)
    cols = M.parameter_jacobian(M.initial_state(), params, m, tuple(channels))
    for j in range(len(channels)):
        b += cols[:, j]
    return b


def output_vector() -> np.ndarray:
    c = np.zeros(M.N_STATE)
    c[M.H_E] = 1.0
    return c


def linearize(params: M.ParameterSet, m: M.Modulation = M.BASELINE, equilibrium=None,
              channels: Sequence[str] = ("p_ee",), check_stable: bool = True) -> LinearSystem:
    """(A, B, C) at an equilibrium; A is the model Jacobian at that point."""
    x = S.solve_equilibrium(params, m) if equilibrium is None else np.asarray(equilibrium, dtype=float)
    A = M.jacobian(x, params, m)
    if check_stable and not S.is_stable(A):
        raise UnstableEquilibrium("equilibrium is not linearly stable")
    return LinearSystem(A, input_vector(params, m, channels), output_vector(), x, tuple(channels))


def transfer(sys: LinearSystem, freqs) -> np.ndarray:
    """C (2 pi i f I - A)^-1 B on an array of frequencies (Hz)."""
    f = np.atleast_1d(np.asarray(freqs, dtype=float))
    n = sys.n
    Ms = (2j * np.pi * f)[:, None, None] * np.eye(n)[None] - sys.A[None]
    rhs = np.broadcast_to(sys.B.astype(complex), (f.size, n))[..., None]
    try:
        X = np.linalg.solve(Ms, rhs)[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularResolvent(str(exc)) from exc
    return X @ sys.C


def power_spectrum(sys: LinearSystem, band: tuple[float, float] = DEFAULT_BAND,
                   n_freq: int = DEFAULT_N_FREQ, noise_density: float = 1.0) -> PowerResult:
    """Output density on a uniform grid and its trapezoidal integral."""
    if n_freq < 2 or not band[1] > band[0]:
        raise ValueError("need n_freq >= 2 and a non-empty band")
    f = np.linspace(band[0], band[1], n_freq)
    H = transfer(sys, f)
    dens = np.abs(H) ** 2 * noise_density
    if not np.all(np.isfinite(dens)):
        raise SingularResolvent("non-finite resolvent on the frequency grid")
    total = float(np.trapezoid(dens, f))
    return PowerResult(f, dens, total, (float(band[0]), float(band[1])), noise_density)


def lyapunov_variance(sys: LinearSystem, noise_density: float = 1.0) -> float:
    """Stationary output variance from the Lyapunov equation (intensity N0/2)."""
    Q = 0.5 * noise_density * np.outer(sys.B, sys.B)
    P = solve_continuous_lyapunov(sys.A, -Q)
    return float(sys.C @ P @ sys.C)


# ---------------------------------------------------------------- ratios

@dataclass(frozen=True)
class AnestheticTransform:
    """Inhibitory PSP prolongation: Gamma_ie, Gamma_ii times a; gamma_ie, gamma_ii over b."""

    a: float = 1.0
    b: float = 1.5

    def __call__(self, params: M.ParameterSet) -> M.ParameterSet:
        return replace(params, Gamma_ie=params.Gamma_ie * self.a, Gamma_ii=params.Gamma_ii * self.a,
                       gamma_ie=params.gamma_ie / self.b, gamma_ii=params.gamma_ii / self.b)


DEFAULT_TRANSFORM = AnestheticTransform()


def identity(params: M.ParameterSet) -> M.ParameterSet:
    return params


@dataclass
class RatioResult:
    ratio: float
    biphasic: bool
    baseline_power: float
    transformed_power: float
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"ratio": self.ratio, "biphasic": self.biphasic,
                "baseline_power": self.baseline_power,
                "transformed_power": self.transformed_power, "meta": self.meta}


def select_equilibrium(params: M.ParameterSet, m: M.Modulation = M.BASELINE,
                       choice: str = "initial") -> np.ndarray:
    """Fixed point used for spectra.

    "initial": reached from the default initial condition (Newton, then
    relaxation if Newton fails).  "stable": the first stable one found by a
    multi-start search, for sets where the default lands on an unstable one.
    """
    if choice == "initial":
        return S.solve_equilibrium(params, m)
    if choice == "stable":
        return S.solve_equilibrium(params, m, prefer_stable=True)
    raise ValueError(f"unknown equilibrium choice {choice!r}")


def band_power(params: M.ParameterSet, m: M.Modulation = M.BASELINE,
               band=DEFAULT_BAND, n_freq: int = DEFAULT_N_FREQ, noise_density: float = 1.0,
               channels: Sequence[str] = ("p_ee",), equilibrium: str = "initial") -> float:
    x = select_equilibrium(params, m, equilibrium)
    return power_spectrum(linearize(params, m, x, channels), band, n_freq, noise_density).total_power


def power_ratio(params: M.ParameterSet, transform: Callable = DEFAULT_TRANSFORM,
                m: M.Modulation = M.BASELINE, band=DEFAULT_BAND, n_freq: int = DEFAULT_N_FREQ,
                noise_density: float = 1.0, channels: Sequence[str] = ("p_ee",),
                threshold: float = BIPHASIC_THRESHOLD, equilibrium: str = "initial") -> RatioResult:
    """Total power after ``transform`` over total power at baseline.

    Each side uses the equilibrium reached from the default initial
    condition; an unstable one on either side raises UnstableEquilibrium.
    """
    base = band_power(params, m, band, n_freq, noise_density, channels, equilibrium)
    other = band_power(transform(params), m, band, n_freq, noise_density, channels, equilibrium)
    ratio = other / base
    meta = {"band": list(band), "n_freq": n_freq, "noise_density": noise_density,
            "channels": list(channels), "transform": repr(transform), "equilibrium": equilibrium}
    return RatioResult(float(ratio), bool(ratio > threshold), base, other, meta)


# ---------------------------------------------------------------- stochastic simulation

def fastest_rate(params: M.ParameterSet) -> float:
    return max(params.gamma_ee, params.gamma_ei, params.gamma_ie, params.gamma_ii,
               params.omega, 1.0 / params.tau_e, 1.0 / params.tau_i)


def simulate_stochastic(params: M.ParameterSet, m: M.Modulation = M.BASELINE,
                        noise_density: float = 1.0, duration: float = 10.0, dt: float = 1e-5,
                        seed: int = 0, x0=None, sample_every: int = 1,
                        channels: Sequence[str] = ("p_ee",), bound: float = 1e3) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama run of the full nonlinear model with noisy thalamic input.

    Returns (times, h_e) sampled every ``sample_every`` steps.  Starts at the
    equilibrium from the default initial condition unless ``x0`` is given.
    """
    if dt > 0.1 / fastest_rate(params):
        raise ValueError("dt must resolve the fastest rate (dt <= 0.1 / max rate)")
    nsteps = int(round(duration / dt))
    if nsteps < sample_every:
        raise ValueError("duration shorter than one sample")
    x = S.solve_equilibrium(params, m) if x0 is None else np.asarray(x0, dtype=float)
    b = input_vector(params, m, channels)
    rng = np.random.default_rng(seed)
    normals = rng.standard_normal(nsteps) * np.sqrt(0.5 * noise_density * dt)
    c = M.pack_coefficients(params, m)
    h, blown = kernels.simulate_em(np.ascontiguousarray(x), c, dt, b, normals, sample_every, bound)
    if blown >= 0:
        raise BlowUp(f"|h_e| exceeded {bound} mV", blown * dt)
    t = dt * sample_every * np.arange(1, len(h) + 1)
    return t, np.asarray(h)


def welch_density(series, fs: float, segments: int = 32) -> tuple[np.ndarray, np.ndarray, int]:
    """One-sided Welch estimate (mean removed) and the number of averaged segments."""
    n = len(series)
    nper = max(n // segments, 16)
    f, p = welch(series, fs=fs, nperseg=nper, noverlap=0, detrend="constant")
    return f, p, n // nper


def segment_band_powers(series, fs: float, band=DEFAULT_BAND, segments: int = 32) -> np.ndarray:
    """Band power of each non-overlapping Hann segment (one periodogram each)."""
    nper = max(len(series) // segments, 16)
    f, _, sxx = spectrogram(series, fs=fs, window="hann", nperseg=nper, noverlap=0,
                            detrend="constant", scaling="density", mode="psd")
    sel = (f >= band[0]) & (f <= band[1])
    return np.trapezoid(sxx[sel], f[sel], axis=0)


@dataclass
class StochasticRatio:
    ratio: float
    low: float
    high: float
    baseline: tuple          # (mean band power, standard error)
    transformed: tuple

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


def stochastic_power_ratio(params: M.ParameterSet, transform: Callable = DEFAULT_TRANSFORM,
                           m: M.Modulation = M.BASELINE, band=DEFAULT_BAND,
                           noise_density: float = 1.0, duration: float = 100.0, dt: float = 1e-5,
                           seed: int = 0, sample_every: int = 10, segments: int = 50,
                           burn_in: float = 1.0, z: float = 1.96) -> StochasticRatio:
    """Time-domain estimate of the power ratio with a normal-theory interval.

    Each side is simulated with its own seed stream; segment band powers
    give a mean and standard error, combined for the ratio by the delta
    method on the log scale.
    """
    est = []
    for i, p in enumerate((params, transform(params))):
        t, h = simulate_stochastic(p, m, noise_density, duration + burn_in, dt, seed + i,
                                   sample_every=sample_every)
        fs = 1.0 / (dt * sample_every)
        bp = segment_band_powers(h[t > burn_in], fs, band, segments)
        est.append((float(bp.mean()), float(bp.std(ddof=1) / np.sqrt(bp.size))))
    (b, sb), (o, so) = est
    ratio = o / b
    s_log = float(np.hypot(sb / b, so / o))
    return StochasticRatio(ratio, ratio * np.exp(-z * s_log), ratio * np.exp(z * s_log), est[0], est[1])

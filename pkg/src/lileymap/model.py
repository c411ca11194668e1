"""Liley's mean-field cortical model in its bulk (spatially homogeneous) form.

State layout (first-order form, 14 components)::

    0 h_e      1 h_i
    2 I_ee     3 dI_ee/dt
    4 I_ie     5 dI_ie/dt
    6 I_ei     7 dI_ei/dt
    8 I_ii     9 dI_ii/dt
   10 phi_ee  11 dphi_ee/dt
   12 phi_ei  13 dphi_ei/dt

Units are fixed throughout: mV for potentials and PSP amplitudes, seconds for
time constants, 1/s for rates (firing rates, PSP rate constants, inputs),
cm/s for conduction velocity and 1/cm for the connectivity decay rate.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Sequence

import numpy as np

from lileymap import kernels

N_STATE = 14
STATE_NAMES = (
    "h_e", "h_i",
    "I_ee", "dI_ee", "I_ie", "dI_ie", "I_ei", "dI_ei", "I_ii", "dI_ii",
    "phi_ee", "dphi_ee", "phi_ei", "dphi_ei",
)
H_E, H_I = 0, 1
I_EE, I_IE, I_EI, I_II = 2, 4, 6, 8
PHI_EE, PHI_EI = 10, 12

# initial condition used to reach the base equilibrium at R = k = 1
INITIAL_POTENTIAL = -70.0

PARAMETER_NAMES = (
    "h_r_e", "h_r_i", "tau_e", "tau_i",
    "h_eq_ee", "h_eq_ei", "h_eq_ie", "h_eq_ii",
    "Gamma_ee", "Gamma_ei", "Gamma_ie", "Gamma_ii",
    "gamma_ee", "gamma_ei", "gamma_ie", "gamma_ii",
    "N_alpha_ee", "N_alpha_ei",
    "N_beta_ee", "N_beta_ei", "N_beta_ie", "N_beta_ii",
    "v", "Lambda",
    "S_max_e", "S_max_i", "mu_e", "mu_i", "sigma_e", "sigma_i",
    "p_ee", "p_ei",
)

# Physiological ranges in internal units.  ``None`` as upper bound marks the
# inhibitory reversal potentials, whose limit is the resting potential of the
# target population minus 5 mV.
PARAMETER_RANGES: dict[str, tuple[float, float | None]] = {
    "h_r_e": (-80.0, -60.0),
    "h_r_i": (-80.0, -60.0),
    "tau_e": (0.005, 0.150),
    "tau_i": (0.005, 0.150),
    "h_eq_ee": (-20.0, 10.0),
    "h_eq_ei": (-20.0, 10.0),
    "h_eq_ie": (-90.0, None),
    "h_eq_ii": (-90.0, None),
    "Gamma_ee": (0.1, 2.0),
    "Gamma_ei": (0.1, 2.0),
    "Gamma_ie": (0.1, 2.0),
    "Gamma_ii": (0.1, 2.0),
    "gamma_ee": (100.0, 1000.0),
    "gamma_ei": (100.0, 1000.0),
    "gamma_ie": (10.0, 500.0),
    "gamma_ii": (10.0, 500.0),
    "N_alpha_ee": (2000.0, 5000.0),
    "N_alpha_ei": (1000.0, 3000.0),
    "N_beta_ee": (2000.0, 5000.0),
    "N_beta_ei": (2000.0, 5000.0),
    "N_beta_ie": (100.0, 1000.0),
    "N_beta_ii": (100.0, 1000.0),
    "v": (100.0, 1000.0),
    "Lambda": (0.1, 1.0),
    "S_max_e": (50.0, 500.0),
    "S_max_i": (50.0, 500.0),
    "mu_e": (-55.0, -40.0),
    "mu_i": (-55.0, -40.0),
    "sigma_e": (2.0, 7.0),
    "sigma_i": (2.0, 7.0),
    "p_ee": (0.0, 10000.0),
    "p_ei": (0.0, 10000.0),
}

REVERSAL_MARGIN = 5.0  # mV below the resting potential
MIN_DENOMINATOR = 1.0  # mV, smallest admissible |h_eq - h_r|

# Packed coefficient vector consumed by the kernels.
(C_HR_E, C_HR_I, C_ITAU_E, C_ITAU_I,
 C_HEQ_EE, C_HEQ_IE, C_HEQ_EI, C_HEQ_II,
 C_W_EE, C_W_IE, C_W_EI, C_W_II,
 C_G_EE, C_G_IE, C_G_EI, C_G_II,
 C_A_EE, C_A_IE, C_A_EI, C_A_II,
 C_NB_EE, C_NB_IE, C_NB_EI, C_NB_II,
 C_NA_EE, C_NA_EI, C_OMEGA,
 C_SMAX_E, C_SMAX_I, C_MU_E, C_MU_I, C_SLOPE_E, C_SLOPE_I,
 C_P_EE, C_P_EI) = range(35)
N_COEF = 35


class InvalidParameters(ValueError):
    pass


@dataclass(frozen=True)
class ParameterSet:
    h_r_e: float
    h_r_i: float
    tau_e: float
    tau_i: float
    h_eq_ee: float
    h_eq_ei: float
    h_eq_ie: float
    h_eq_ii: float
    Gamma_ee: float
    Gamma_ei: float
    Gamma_ie: float
    Gamma_ii: float
    gamma_ee: float
    gamma_ei: float
    gamma_ie: float
    gamma_ii: float
    N_alpha_ee: float
    N_alpha_ei: float
    N_beta_ee: float
    N_beta_ei: float
    N_beta_ie: float
    N_beta_ii: float
    v: float
    Lambda: float
    S_max_e: float
    S_max_i: float
    mu_e: float
    mu_i: float
    sigma_e: float
    sigma_i: float
    p_ee: float
    p_ei: float

    def __post_init__(self):
        for name in PARAMETER_NAMES:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidParameters(f"{name} is not finite: {value!r}")
        positive = ("tau_e", "tau_i", "gamma_ee", "gamma_ei", "gamma_ie", "gamma_ii",
                    "v", "Lambda", "S_max_e", "S_max_i", "sigma_e", "sigma_i")
        for name in positive:
            if getattr(self, name) <= 0:
                raise InvalidParameters(f"{name} must be positive")
        for name in ("Gamma_ee", "Gamma_ei", "Gamma_ie", "Gamma_ii", "N_alpha_ee",
                     "N_alpha_ei", "N_beta_ee", "N_beta_ei", "N_beta_ie", "N_beta_ii",
                     "p_ee", "p_ei"):
            if getattr(self, name) < 0:
                raise InvalidParameters(f"{name} must be non-negative")
        for eq, rest in (("h_eq_ee", "h_r_e"), ("h_eq_ie", "h_r_e"),
                         ("h_eq_ei", "h_r_i"), ("h_eq_ii", "h_r_i")):
            if abs(getattr(self, eq) - getattr(self, rest)) < MIN_DENOMINATOR:
                raise InvalidParameters(
                    f"|{eq} - {rest}| below {MIN_DENOMINATOR} mV makes the PSP weighting singular")

    @property
    def omega(self) -> float:
        return self.v * self.Lambda

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAMETER_NAMES], dtype=float)

    @classmethod
    def from_mapping(cls, mapping) -> "ParameterSet":
        missing = [n for n in PARAMETER_NAMES if n not in mapping]
        if missing:
            raise InvalidParameters(f"missing fields: {', '.join(missing)}")
        return cls(**{n: float(mapping[n]) for n in PARAMETER_NAMES})

    def with_values(self, **changes) -> "ParameterSet":
        return replace(self, **changes)

    def range_violations(self) -> list[str]:
        """Names of fields outside their physiological range."""
        bad = []
        for name in PARAMETER_NAMES:
            lo, hi = parameter_bounds(name, self)
            value = getattr(self, name)
            if value < lo or value > hi:
                bad.append(name)
        return bad

    def is_physiological(self) -> bool:
        return not self.range_violations()


def parameter_bounds(name: str, params: ParameterSet | None = None) -> tuple[float, float]:
    """Range of ``name``; dependent upper limits resolve against ``params``.

    Without a parameter set the dependent limits fall back to their widest
    value (-65 mV).
    """
    lo, hi = PARAMETER_RANGES[name]
    if hi is None:
        rest = "h_r_e" if name == "h_eq_ie" else "h_r_i"
        if params is None:
            hi = PARAMETER_RANGES[rest][1] - REVERSAL_MARGIN
        else:
            hi = getattr(params, rest) - REVERSAL_MARGIN
    return lo, hi


@dataclass(frozen=True)
class Modulation:
    """Inhibitory scaling: R multiplies IPSP amplitudes, k the i->i synapse count."""

    R: float = 1.0
    k: float = 1.0

    def __post_init__(self):
        if not (self.R > 0 and self.k > 0):
            raise InvalidParameters("R and k must be positive")

    def in_window(self) -> bool:
        return PHYSIOLOGICAL_WINDOW[0] <= self.R <= PHYSIOLOGICAL_WINDOW[1] and \
            PHYSIOLOGICAL_WINDOW[2] <= self.k <= PHYSIOLOGICAL_WINDOW[3]


# (R_min, R_max, k_min, k_max)
PHYSIOLOGICAL_WINDOW = (0.75, 2.00, 0.75, 1.25)
BASELINE = Modulation(1.0, 1.0)


def apply_modulation(params: ParameterSet, m: Modulation) -> ParameterSet:
    return replace(
        params,
        Gamma_ie=params.Gamma_ie * m.R,
        Gamma_ii=params.Gamma_ii * m.R,
        N_beta_ii=params.N_beta_ii * m.k,
    )


def sigmoid_rate(h, pop: str, params: ParameterSet):
    """Mean firing rate S_pop(h) in 1/s; works on scalars and arrays."""
    if pop == "e":
        smax, mu, sigma = params.S_max_e, params.mu_e, params.sigma_e
    elif pop == "i":
        smax, mu, sigma = params.S_max_i, params.mu_i, params.sigma_i
    else:
        raise ValueError(f"population must be 'e' or 'i', got {pop!r}")
    z = math.sqrt(2.0) * (np.asarray(h, dtype=float) - mu) / sigma
    # logistic written to avoid overflow for large |z|
    out = smax * np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                          np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return float(out) if out.ndim == 0 else out


def pack_coefficients(params: ParameterSet, m: Modulation = BASELINE) -> np.ndarray:
    """Flatten (params, m) into the coefficient vector used by the kernels."""
    p = params
    c = np.empty(N_COEF)
    c[C_HR_E], c[C_HR_I] = p.h_r_e, p.h_r_i
    c[C_ITAU_E], c[C_ITAU_I] = 1.0 / p.tau_e, 1.0 / p.tau_i
    c[C_HEQ_EE], c[C_HEQ_IE] = p.h_eq_ee, p.h_eq_ie
    c[C_HEQ_EI], c[C_HEQ_II] = p.h_eq_ei, p.h_eq_ii
    c[C_W_EE] = 1.0 / abs(p.h_eq_ee - p.h_r_e)
    c[C_W_IE] = 1.0 / abs(p.h_eq_ie - p.h_r_e)
    c[C_W_EI] = 1.0 / abs(p.h_eq_ei - p.h_r_i)
    c[C_W_II] = 1.0 / abs(p.h_eq_ii - p.h_r_i)
    c[C_G_EE], c[C_G_IE], c[C_G_EI], c[C_G_II] = p.gamma_ee, p.gamma_ie, p.gamma_ei, p.gamma_ii
    c[C_A_EE] = math.e * p.Gamma_ee * p.gamma_ee
    c[C_A_IE] = math.e * m.R * p.Gamma_ie * p.gamma_ie
    c[C_A_EI] = math.e * p.Gamma_ei * p.gamma_ei
    c[C_A_II] = math.e * m.R * p.Gamma_ii * p.gamma_ii
    c[C_NB_EE], c[C_NB_IE], c[C_NB_EI] = p.N_beta_ee, p.N_beta_ie, p.N_beta_ei
    c[C_NB_II] = m.k * p.N_beta_ii
    c[C_NA_EE], c[C_NA_EI] = p.N_alpha_ee, p.N_alpha_ei
    c[C_OMEGA] = p.v * p.Lambda
    c[C_SMAX_E], c[C_SMAX_I] = p.S_max_e, p.S_max_i
    c[C_MU_E], c[C_MU_I] = p.mu_e, p.mu_i
    c[C_SLOPE_E] = math.sqrt(2.0) / p.sigma_e
    c[C_SLOPE_I] = math.sqrt(2.0) / p.sigma_i
    c[C_P_EE], c[C_P_EI] = p.p_ee, p.p_ei
    return c


def rhs(x, params: ParameterSet, m: Modulation = BASELINE) -> np.ndarray:
    """Time derivative of the 14-component state."""
    return kernels.rhs(np.ascontiguousarray(x, dtype=float), pack_coefficients(params, m))


def jacobian(x, params: ParameterSet, m: Modulation = BASELINE) -> np.ndarray:
    """Analytic 14x14 Jacobian of :func:`rhs` with respect to the state."""
    return kernels.jac(np.ascontiguousarray(x, dtype=float), pack_coefficients(params, m))


# Parameters whose partial derivatives of the rhs are available analytically.
ACTIVE_PARAMETERS = ("R", "k", "p_ee", "p_ei")


def parameter_jacobian(x, params: ParameterSet, m: Modulation, names: Sequence[str]) -> np.ndarray:
    """d rhs / d(name) for each requested active parameter, as columns.

    R and k are the modulation factors; p_ee and p_ei the thalamic inputs.
    """
    x = np.asarray(x, dtype=float)
    c = pack_coefficients(params, m)
    s_e = float(kernels.sigmoid(x[H_E], c[C_SMAX_E], c[C_MU_E], c[C_SLOPE_E]))
    s_i = float(kernels.sigmoid(x[H_I], c[C_SMAX_I], c[C_MU_I], c[C_SLOPE_I]))
    out = np.zeros((N_STATE, len(names)))
    for j, name in enumerate(names):
        if name == "R":
            # both inhibitory PSP amplitudes scale with R
            out[I_IE + 1, j] = c[C_A_IE] / m.R * c[C_NB_IE] * s_i
            out[I_II + 1, j] = c[C_A_II] / m.R * c[C_NB_II] * s_i
        elif name == "k":
            out[I_II + 1, j] = c[C_A_II] * c[C_NB_II] / m.k * s_i
        elif name == "p_ee":
            out[I_EE + 1, j] = c[C_A_EE]
        elif name == "p_ei":
            out[I_EI + 1, j] = c[C_A_EI]
        else:
            raise KeyError(f"no analytic derivative for parameter {name!r}")
    return out


def initial_state(params: ParameterSet | None = None) -> np.ndarray:
    """h_e = h_i = -70 mV, all other variables zero."""
    x = np.zeros(N_STATE)
    x[H_E] = x[H_I] = INITIAL_POTENTIAL
    return x


def steady_inputs(h_e: float, h_i: float, params: ParameterSet, m: Modulation = BASELINE) -> np.ndarray:
    """Full state with every synaptic and axonal variable at its steady value."""
    c = pack_coefficients(params, m)
    s_e = sigmoid_rate(h_e, "e", params)
    s_i = sigmoid_rate(h_i, "i", params)
    x = np.zeros(N_STATE)
    x[H_E], x[H_I] = h_e, h_i
    x[PHI_EE] = params.N_alpha_ee * s_e
    x[PHI_EI] = params.N_alpha_ei * s_e
    x[I_EE] = c[C_A_EE] / c[C_G_EE] ** 2 * (c[C_NB_EE] * s_e + params.p_ee + x[PHI_EE])
    x[I_EI] = c[C_A_EI] / c[C_G_EI] ** 2 * (c[C_NB_EI] * s_e + params.p_ei + x[PHI_EI])
    x[I_IE] = c[C_A_IE] / c[C_G_IE] ** 2 * c[C_NB_IE] * s_i
    x[I_II] = c[C_A_II] / c[C_G_II] ** 2 * c[C_NB_II] * s_i
    return x


def reduced_residual(h_e, h_i, params: ParameterSet, m: Modulation = BASELINE):
    """Equilibrium conditions with the I and phi variables eliminated.

    Returns the two membrane-equation residuals (mV); both vanish exactly at
    the equilibria of the full system.  Vectorised over array inputs.
    """
    p = params
    h_e = np.asarray(h_e, dtype=float)
    h_i = np.asarray(h_i, dtype=float)
    s_e = sigmoid_rate(h_e, "e", p)
    s_i = sigmoid_rate(h_i, "i", p)
    e = math.e
    i_ee = e * p.Gamma_ee / p.gamma_ee * ((p.N_beta_ee + p.N_alpha_ee) * s_e + p.p_ee)
    i_ei = e * p.Gamma_ei / p.gamma_ei * ((p.N_beta_ei + p.N_alpha_ei) * s_e + p.p_ei)
    i_ie = e * m.R * p.Gamma_ie / p.gamma_ie * p.N_beta_ie * s_i
    i_ii = e * m.R * m.k * p.Gamma_ii / p.gamma_ii * p.N_beta_ii * s_i
    r_e = (p.h_r_e - h_e + (p.h_eq_ee - h_e) / abs(p.h_eq_ee - p.h_r_e) * i_ee
           + (p.h_eq_ie - h_e) / abs(p.h_eq_ie - p.h_r_e) * i_ie)
    r_i = (p.h_r_i - h_i + (p.h_eq_ei - h_i) / abs(p.h_eq_ei - p.h_r_i) * i_ei
           + (p.h_eq_ii - h_i) / abs(p.h_eq_ii - p.h_r_i) * i_ii)
    return r_e, r_i


def modulation_at(h_e, h_i, params: ParameterSet):
    """Invert the equilibrium conditions for (R, k) given the two potentials.

    The membrane equations are linear in R and R*k respectively, so each pair
    of potentials is an equilibrium for exactly one (R, k).  Pairs that would
    need a non-positive R or k come back as NaN.
    """
    p = params
    h_e = np.asarray(h_e, dtype=float)
    h_i = np.asarray(h_i, dtype=float)
    s_e = sigmoid_rate(h_e, "e", p)
    s_i = sigmoid_rate(h_i, "i", p)
    e = math.e
    i_ee = e * p.Gamma_ee / p.gamma_ee * ((p.N_beta_ee + p.N_alpha_ee) * s_e + p.p_ee)
    i_ei = e * p.Gamma_ei / p.gamma_ei * ((p.N_beta_ei + p.N_alpha_ei) * s_e + p.p_ei)
    free_e = p.h_r_e - h_e + (p.h_eq_ee - h_e) / abs(p.h_eq_ee - p.h_r_e) * i_ee
    free_i = p.h_r_i - h_i + (p.h_eq_ei - h_i) / abs(p.h_eq_ei - p.h_r_i) * i_ei
    unit_ie = e * p.Gamma_ie / p.gamma_ie * p.N_beta_ie * s_i * (p.h_eq_ie - h_e) / abs(p.h_eq_ie - p.h_r_e)
    unit_ii = e * p.Gamma_ii / p.gamma_ii * p.N_beta_ii * s_i * (p.h_eq_ii - h_i) / abs(p.h_eq_ii - p.h_r_i)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = -free_e / unit_ie
        k = -free_i / unit_ii / R
    bad = ~((R > 0) & (k > 0) & np.isfinite(R) & np.isfinite(k))
    return np.where(bad, np.nan, R), np.where(bad, np.nan, k)


def state_scales(params: ParameterSet, m: Modulation = BASELINE) -> np.ndarray:
    """Typical magnitudes of the state variables, used to scale norms.

    Potentials are measured in units of 10 mV; synaptic and axonal variables
    by their value at a reference firing rate of 10/s; derivatives by the
    corresponding rate constant times that magnitude.
    """
    ref_rate = 10.0
    c = pack_coefficients(params, m)
    s = np.empty(N_STATE)
    s[H_E] = s[H_I] = 10.0
    phi_ee = max(params.N_alpha_ee * ref_rate, 1.0)
    phi_ei = max(params.N_alpha_ei * ref_rate, 1.0)
    drive = {
        I_EE: c[C_NB_EE] * ref_rate + params.p_ee + phi_ee,
        I_EI: c[C_NB_EI] * ref_rate + params.p_ei + phi_ei,
        I_IE: c[C_NB_IE] * ref_rate,
        I_II: c[C_NB_II] * ref_rate,
    }
    gam = {I_EE: c[C_G_EE], I_IE: c[C_G_IE], I_EI: c[C_G_EI], I_II: c[C_G_II]}
    amp = {I_EE: c[C_A_EE], I_IE: c[C_A_IE], I_EI: c[C_A_EI], I_II: c[C_A_II]}
    for idx in (I_EE, I_IE, I_EI, I_II):
        s[idx] = max(amp[idx] / gam[idx] ** 2 * drive[idx], 1e-3)
        s[idx + 1] = gam[idx] * s[idx]
    s[PHI_EE], s[PHI_EI] = phi_ee, phi_ei
    s[PHI_EE + 1] = c[C_OMEGA] * phi_ee
    s[PHI_EI + 1] = c[C_OMEGA] * phi_ei
    return s


def rate_scales(params: ParameterSet, m: Modulation = BASELINE) -> np.ndarray:
    """Characteristic rate of each state equation (1/s)."""
    c = pack_coefficients(params, m)
    r = np.empty(N_STATE)
    r[H_E], r[H_I] = c[C_ITAU_E], c[C_ITAU_I]
    for idx, g in ((I_EE, C_G_EE), (I_IE, C_G_IE), (I_EI, C_G_EI), (I_II, C_G_II)):
        r[idx] = r[idx + 1] = c[g]
    r[PHI_EE] = r[PHI_EE + 1] = r[PHI_EI] = r[PHI_EI + 1] = c[C_OMEGA]
    return r


def scaled_residual_norm(x, params: ParameterSet, m: Modulation = BASELINE) -> float:
    """Max-norm of rhs(x) with each component divided by scale * rate."""
    f = rhs(x, params, m)
    return float(np.max(np.abs(f) / (state_scales(params, m) * rate_scales(params, m))))


def firing_rates(x, params: ParameterSet) -> tuple[float, float]:
    return sigmoid_rate(x[H_E], "e", params), sigmoid_rate(x[H_I], "i", params)


# ---------------------------------------------------------------- sampling

@dataclass(frozen=True)
class PlausibilityFilter:
    """Acceptance rule standing in for the original spectral selection."""

    min_rate: float = 0.1
    max_rate: float = 20.0
    require_stable: bool = True


class SamplingFailure(RuntimeError):
    pass


@dataclass
class SamplingReport:
    tried: int
    accepted: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.tried if self.tried else 0.0


def draw_uniform(rng: np.random.Generator) -> ParameterSet:
    """One parameter set drawn uniformly inside the physiological ranges."""
    values = {}
    for name in PARAMETER_NAMES:
        lo, hi = PARAMETER_RANGES[name]
        if hi is None:
            continue
        values[name] = float(rng.uniform(lo, hi))
    for name, rest in (("h_eq_ie", "h_r_e"), ("h_eq_ii", "h_r_i")):
        lo = PARAMETER_RANGES[name][0]
        values[name] = float(rng.uniform(lo, values[rest] - REVERSAL_MARGIN))
    return ParameterSet(**{n: values[n] for n in PARAMETER_NAMES})


def passes_filter(params: ParameterSet, rule: PlausibilityFilter = PlausibilityFilter()) -> bool:
    from lileymap.solver import NonConvergence, solve_equilibrium, is_stable

    try:
        x = solve_equilibrium(params, BASELINE)
    except NonConvergence:
        return False
    s_e, s_i = firing_rates(x, params)
    if not (rule.min_rate < s_e < rule.max_rate and rule.min_rate < s_i < rule.max_rate):
        return False
    if rule.require_stable and not is_stable(jacobian(x, params, BASELINE)):
        return False
    return True


def sample_parameters(seed: int, count: int, rule: PlausibilityFilter = PlausibilityFilter(),
                      max_trials: int = 1_000_000, report: SamplingReport | None = None
                      ) -> list[ParameterSet]:
    """Draw ``count`` plausibility-filtered parameter sets, deterministic in ``seed``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    accepted: list[ParameterSet] = []
    tried = 0
    while len(accepted) < count:
        if tried >= max_trials:
            break
        tried += 1
        candidate = draw_uniform(rng)
        if passes_filter(candidate, rule):
            accepted.append(candidate)
        if tried >= 1000 and len(accepted) < 1e-3 * tried:
            break
    if report is not None:
        report.tried, report.accepted = tried, len(accepted)
    if len(accepted) < count:
        raise SamplingFailure(
            f"accepted {len(accepted)} of {tried} trials; the plausibility filter rejects almost everything")
    return accepted


# ---------------------------------------------------------------- serialisation

def to_csv(sets: Iterable[ParameterSet]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PARAMETER_NAMES)
    for p in sets:
        writer.writerow([repr(getattr(p, n)) for n in PARAMETER_NAMES])
    return buf.getvalue()


def from_csv(text: str) -> list[ParameterSet]:
    reader = csv.DictReader(io.StringIO(text))
    return [ParameterSet.from_mapping(row) for row in reader]


def to_json(p: ParameterSet) -> str:
    return json.dumps({n: getattr(p, n) for n in PARAMETER_NAMES})


def from_json(text: str) -> ParameterSet:
    return ParameterSet.from_mapping(json.loads(text))


def field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(ParameterSet))

"""Family-conditioned parameter statistics: histograms, d_IR, PCA, tails."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from lileymap import model as M

N_BINS = 20
GAMMA_II_CAP = 120.0        # 1/s, upper bin limit for gamma_ii
INHIBITORY_REVERSAL_CAP = -65.0   # mV, widest upper limit of h_eq_ie, h_eq_ii
RATIO_BINS = 250
RATIO_RANGE = (0.0, 4.0)


class EmptyInput(ValueError):
    pass


class BinMismatch(ValueError):
    pass


class DegenerateData(UserWarning):
    """A zero-variance column was dropped before PCA."""


@dataclass
class Histogram:
    """Normalised frequencies over fixed bins.

    ``overflow`` says what happened to values above the last edge: "top"
    counts them in the highest bin, "none" means none were allowed.
    """

    bin_edges: np.ndarray
    freq: np.ndarray
    counts: np.ndarray
    overflow: str = "none"
    n_overflow: int = 0
    name: str = ""

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        rows = ["bin_lo,bin_hi,count,freq"]
        for i in range(len(self.freq)):
            lo, hi = float(self.bin_edges[i]), float(self.bin_edges[i + 1])
            rows.append(f"{lo!r},{hi!r},{int(self.counts[i])},{float(self.freq[i])!r}")
        return "\n".join(rows) + "\n"


def histogram_limits(name: str) -> tuple[float, float, str]:
    """Bin range and overflow policy for a parameter."""
    if name == "gamma_ii":
        return M.PARAMETER_RANGES[name][0], GAMMA_II_CAP, "top"
    if name in ("h_eq_ie", "h_eq_ii"):
        return M.PARAMETER_RANGES[name][0], INHIBITORY_REVERSAL_CAP, "none"
    lo, hi = M.PARAMETER_RANGES[name]
    return lo, hi, "none"


def binned(values, lo: float, hi: float, n: int = N_BINS, overflow: str = "none",
           name: str = "") -> Histogram:
    """Histogram of ``values`` on ``n`` equal bins over [lo, hi].

    The last bin is closed.  With ``overflow="top"`` values above ``hi``
    are counted in the last bin; otherwise values outside raise ValueError.
    """
    v = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyInput("no values to bin")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    edges = np.linspace(lo, hi, n + 1)
    above = v > hi
    n_over = int(above.sum())
    if n_over and overflow != "top":
        raise ValueError(f"{n_over} values above the upper limit {hi}")
    if np.any(v < lo):
        raise ValueError(f"values below the lower limit {lo}")
    counts, _ = np.histogram(np.minimum(v, hi), bins=edges)
    return Histogram(edges, counts / v.size, counts, overflow, n_over, name)


def histogram(values, parameter: str, n: int = N_BINS) -> Histogram:
    """Parameter histogram over its physiological range (with the two caps)."""
    lo, hi, policy = histogram_limits(parameter)
    return binned(values, lo, hi, n, policy, parameter)


def ratio_histogram(ratios) -> Histogram:
    """Power-ratio histogram: 250 bins over 0-4, larger ratios in the top bin."""
    return binned(ratios, RATIO_RANGE[0], RATIO_RANGE[1], RATIO_BINS, "top", "power_ratio")


def merge(a: Histogram, b: Histogram) -> Histogram:
    """Histogram of the union of two sample batches (count-weighted)."""
    _check_bins(a, b)
    counts = a.counts + b.counts
    return Histogram(a.bin_edges.copy(), counts / counts.sum(), counts,
                     a.overflow if a.overflow == b.overflow else "top",
                     a.n_overflow + b.n_overflow, a.name)


def _check_bins(g: Histogram, h: Histogram) -> None:
    if g.bin_edges.shape != h.bin_edges.shape or not np.array_equal(g.bin_edges, h.bin_edges):
        raise BinMismatch("histograms have different bin edges")


def _xlog2x(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p, dtype=float)
    nz = p > 0
    out[nz] = p[nz] * np.log2(p[nz])
    return out


def information_radius_distance(g, h) -> float:
    """Square root of the information radius (base-2 Jensen-Shannon divergence).

    Accepts two Histograms with identical edges, or two frequency arrays of
    equal length.
    """
    if isinstance(g, Histogram) or isinstance(h, Histogram):
        if not (isinstance(g, Histogram) and isinstance(h, Histogram)):
            raise BinMismatch("cannot compare a histogram with a bare array")
        _check_bins(g, h)
        gf, hf = g.freq, h.freq
    else:
        gf, hf = np.asarray(g, dtype=float), np.asarray(h, dtype=float)
        if gf.shape != hf.shape:
            raise BinMismatch("frequency vectors differ in length")
    a = 0.5 * (gf + hf)
    s = float(np.sum(0.5 * (_xlog2x(gf) + _xlog2x(hf)) - _xlog2x(a)))
    # rounding can leave a tiny negative sum for identical inputs
    return float(np.sqrt(min(max(s, 0.0), 1.0)))


def dissimilarity_table(family_a: Sequence[M.ParameterSet], family_b: Sequence[M.ParameterSet],
                        names: Iterable[str] = M.PARAMETER_NAMES) -> list[tuple[str, float]]:
    """d_IR per parameter between two families, largest first."""
    rows = []
    for name in names:
        ga = histogram([getattr(p, name) for p in family_a], name)
        gb = histogram([getattr(p, name) for p in family_b], name)
        rows.append((name, information_radius_distance(ga, gb)))
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows


@dataclass
class PCAResult:
    fractions: np.ndarray          # explained-variance fractions, nonincreasing
    components: np.ndarray         # rows are unit principal axes
    columns: list                  # column indices kept
    dropped: list = field(default_factory=list)
    standardized: bool = True


def pca(data, standardize: bool = True) -> PCAResult:
    """Principal components of a set-by-parameter table.

    Columns are standardised, so the fractions are those of the correlation
    matrix.  Zero-variance columns are dropped with a DegenerateData warning.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("pca needs a 2-D table with at least two rows")
    sd = X.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(X).max(axis=0), 1e-300)
    keep = [j for j in range(X.shape[1]) if sd[j] > 1e-12 * scale[j]]
    dropped = [j for j in range(X.shape[1]) if j not in keep]
    if dropped:
        warnings.warn(f"dropping zero-variance columns {dropped}", DegenerateData, stacklevel=2)
    if not keep:
        raise ValueError("no column with nonzero variance")
    Y = X[:, keep] - X[:, keep].mean(axis=0)
    if standardize:
        Y = Y / sd[keep]
    _, s, Vt = np.linalg.svd(Y, full_matrices=False)
    var = s ** 2
    fractions = var / var.sum()
    return PCAResult(fractions, Vt, keep, dropped, standardize)


def parameter_table(sets: Sequence[M.ParameterSet], names: Iterable[str] = M.PARAMETER_NAMES) -> np.ndarray:
    names = list(names)
    return np.array([[getattr(p, n) for n in names] for p in sets], dtype=float)


def tail_probability(values, threshold: float, side: str = "<=") -> float:
    """Empirical P(value <= threshold) or P(value >= threshold)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyInput("no values")
    if side in ("<=", "le", "lower"):
        return float(np.count_nonzero(v <= threshold) / v.size)
    if side in (">=", "ge", "upper"):
        return float(np.count_nonzero(v >= threshold) / v.size)
    raise ValueError(f"side must be '<=' or '>=', not {side!r}")

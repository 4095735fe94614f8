"""Spectral analysis of probe series: periodogram and peak-to-floor score.

The periodogram is the classic variance-normalized least-squares
estimator for unevenly sampled data.  For each angular frequency w an
offset phi is chosen by tan(2*w*phi) = sum(sin(2*w*t)) / sum(cos(2*w*t)),
then

    P(w) = 1/(2*s^2) * [ (sum (y - ybar) cos w(t - phi))^2 / sum cos^2 w(t - phi)
                       + (sum (y - ybar) sin w(t - phi))^2 / sum sin^2 w(t - phi) ]

with s^2 the sample variance of y.  Under this normalization white
noise has unit mean power, so the score below is calibrated: a flat
spectrum scores exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jsonio import atomic_write_text, format_float
from .errors import WindowError

_CHUNK = 256
_BOUNDARY_TOL = 1e-9

DEFAULT_GRID_MIN = 0.5
DEFAULT_GRID_MAX = 500.0
DEFAULT_GRID_STEP = 0.05
DEFAULT_WINDOW_WIDTH = 2.0
DEFAULT_THRESHOLD = 10.0


@dataclass(frozen=True)
class ProbeSeries:
    """Paired sample positions t in [0, 1) and responses y, length >= 8."""

    t: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(np.asarray(self.t, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64))
        if t.ndim != 1 or y.ndim != 1 or t.shape != y.shape:
            raise ValueError(f"t and y must be equal-length 1-D arrays, got {t.shape} / {y.shape}")
        if t.size < 8:
            raise ValueError(f"probe series needs >= 8 points, got {t.size}")
        if not np.all(np.isfinite(t)) or t.min() < 0.0 or t.max() >= 1.0:
            raise ValueError("probe positions must be finite and lie in [0, 1)")
        if not np.all(np.isfinite(y)):
            raise ValueError("probe responses must be finite")
        t.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.t.size


@dataclass(frozen=True)
class PowerSpectrum:
    """Periodogram over an increasing angular-frequency grid."""

    freqs: np.ndarray
    power: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "freqs", np.asarray(self.freqs, dtype=np.float64))
        object.__setattr__(self, "power", np.asarray(self.power, dtype=np.float64))


@dataclass(frozen=True)
class SnrResult:
    """Window-average signal power over out-of-window average power."""

    p_signal: float
    p_noise: float
    p_snr: float
    f_w: float
    delta: float
    flag: str | None = None


def default_grid(start=DEFAULT_GRID_MIN, stop=DEFAULT_GRID_MAX, step=DEFAULT_GRID_STEP) -> np.ndarray:
    """Default angular-frequency grid, inclusive of the endpoint."""
    if not (0 < start < stop) or step <= 0:
        raise ValueError(f"grid needs 0 < start < stop and step > 0, got {start}, {stop}, {step}")
    return np.arange(start, stop + 0.5 * step, step)


def lomb_scargle(series: ProbeSeries, grid: np.ndarray) -> PowerSpectrum:
    """Variance-normalized periodogram of a probe series on a grid.

    A constant series has zero variance; rather than divide by zero the
    spectrum comes back all-zero with degenerate=True.
    """
    freqs = np.asarray(grid, dtype=np.float64)
    if freqs.ndim != 1 or freqs.size < 2:
        raise ValueError("frequency grid must be a 1-D array with >= 2 points")
    if not np.all(np.isfinite(freqs)) or freqs.min() <= 0 or np.any(np.diff(freqs) <= 0):
        raise ValueError("frequency grid must be positive, finite and strictly increasing")

    # Canonical sample order: sums then come out bit-identical under any
    # joint permutation of (t, y), and per-row reductions do not depend
    # on chunk shape (no BLAS).
    order = np.lexsort((series.y, series.t))
    t = series.t[order]
    y = series.y[order]
    yc = y - y.mean()
    var = float(y.var(ddof=1))
    if not var > 1e-30:
        return PowerSpectrum(freqs=freqs, power=np.zeros_like(freqs), degenerate=True)

    power = np.empty_like(freqs)
    for lo in range(0, freqs.size, _CHUNK):
        w = freqs[lo:lo + _CHUNK]
        theta = w[:, None] * t[None, :]
        c = np.cos(theta)
        s = np.sin(theta)
        # Offset phase from the double angle, built from c and s directly.
        sin2 = 2.0 * (c * s).sum(axis=1)
        cos2 = (c * c - s * s).sum(axis=1)
        phi = 0.5 * np.arctan2(sin2, cos2)
        cp = np.cos(phi)[:, None]
        sp = np.sin(phi)[:, None]
        ct = c * cp + s * sp
        st = s * cp - c * sp
        num_c = (ct * yc).sum(axis=1) ** 2
        num_s = (st * yc).sum(axis=1) ** 2
        den_c = (ct * ct).sum(axis=1)
        den_s = (st * st).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            term_c = np.where(den_c > 1e-30, num_c / den_c, 0.0)
            term_s = np.where(den_s > 1e-30, num_s / den_s, 0.0)
        power[lo:lo + w.size] = (term_c + term_s) / (2.0 * var)
    return PowerSpectrum(freqs=freqs, power=power)


def _band_average(freqs, power, mask):
    """Trapezoidal mean of power over the masked grid span."""
    idx = np.flatnonzero(mask)
    if idx.size < 2:
        return 0.0, 0.0
    f = freqs[idx]
    span = float(f[-1] - f[0])
    if span <= 0:
        return 0.0, 0.0
    return float(np.trapezoid(power[idx], f)), span


def snr_score(spectrum: PowerSpectrum, f_w, delta=DEFAULT_WINDOW_WIDTH, f_max=None) -> SnrResult:
    """Ratio of average power inside the window around f_w to outside it.

    The window is [f_w - delta/2, f_w + delta/2]; the outside band runs
    from the grid start up to f_max (grid end by default), excluding the
    window.  Both averages are trapezoidal integrals divided by the
    measured span, so a flat spectrum scores exactly 1.
    """
    freqs = spectrum.freqs
    f_w = float(f_w)
    delta = float(delta)
    if delta <= 0:
        raise WindowError(f"window width delta must be > 0, got {delta}")
    f_max = float(f_max) if f_max is not None else float(freqs[-1])
    if f_max > freqs[-1] + _BOUNDARY_TOL:
        raise WindowError(f"f_max {f_max} exceeds grid end {freqs[-1]}")
    lo = f_w - delta / 2.0
    hi = f_w + delta / 2.0
    if lo < freqs[0] - _BOUNDARY_TOL or hi > f_max + _BOUNDARY_TOL:
        raise WindowError(
            f"window [{lo}, {hi}] not inside grid span [{freqs[0]}, {f_max}]"
        )
    in_range = freqs <= f_max + _BOUNDARY_TOL
    window = in_range & (freqs >= lo - _BOUNDARY_TOL) & (freqs <= hi + _BOUNDARY_TOL)
    if window.sum() < 8:
        raise WindowError(
            f"window [{lo}, {hi}] covers only {int(window.sum())} grid points; need >= 8"
        )
    if spectrum.degenerate:
        return SnrResult(0.0, 0.0, 0.0, f_w, delta, flag="degenerate_series")

    power = spectrum.power
    sig_int, sig_span = _band_average(freqs, power, window)
    below_int, below_span = _band_average(freqs, power, in_range & (freqs < lo - _BOUNDARY_TOL))
    above_int, above_span = _band_average(freqs, power, in_range & (freqs > hi + _BOUNDARY_TOL))
    p_signal = sig_int / sig_span if sig_span > 0 else 0.0
    noise_span = below_span + above_span
    if noise_span <= 0:
        raise WindowError("no grid points outside the window to estimate noise")
    p_noise = (below_int + above_int) / noise_span
    if p_noise > 0.0:
        return SnrResult(p_signal, p_noise, p_signal / p_noise, f_w, delta)
    return SnrResult(p_signal, 0.0, math.inf, f_w, delta, flag="zero_noise")


def write_spectrum(spectrum: PowerSpectrum, path) -> None:
    """Export a spectrum as two-column text (frequency, power)."""
    lines = (
        f"{format_float(f)}\t{format_float(p)}"
        for f, p in zip(spectrum.freqs, spectrum.power)
    )
    atomic_write_text(path, "\n".join(lines) + "\n")

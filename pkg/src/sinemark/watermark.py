"""Watermark application: periodic signal and output perturbation.

The served probability vector for a selected token x is a blend of the
model's own prediction p with a keyed cosine signal:

    y[c]  = (p[c]  + eps * (1 + z(x)))           / (1 + 2*eps)   target class
    y[c'] = (p[c'] + eps * (1 - z(x)) / (m - 1)) / (1 + 2*eps)   every other class

where z(x) = cos(f_w * g(x)) and g is the keyed phase hash.  Off-target
classes carry the signal in antiphase, so the blend stays a valid
probability vector for any eps in [0, 0.5]: each numerator is
non-negative and the numerators sum to 1 + 2*eps exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ProbabilityError, VocabularyError
from .keys import WatermarkConfig, WatermarkKey, is_selected, phase_hash

RENORMALIZE_TOL = 1e-6


@dataclass(frozen=True)
class WatermarkedOutput:
    """One served answer: a soft vector or a hard label, plus the selection flag."""

    mode: str
    selected: bool
    soft: np.ndarray | None = None
    hard: int | None = None

    def __post_init__(self):
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"mode must be 'soft' or 'hard', got {self.mode!r}")
        if self.mode == "soft" and (self.soft is None or self.hard is not None):
            raise ValueError("soft output must carry exactly a probability vector")
        if self.mode == "hard" and (self.hard is None or self.soft is not None):
            raise ValueError("hard output must carry exactly a label")


def validate_probability_vector(p, tol=RENORMALIZE_TOL) -> np.ndarray:
    """Check and renormalize an input probability vector.

    Entries must be finite and non-negative (up to 1e-9 of slack) and the
    sum must be within tol of 1; anything worse raises ProbabilityError.
    Returns p / sum(p), which is bit-identical to the input when the sum
    is exactly 1.0.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ProbabilityError(
            f"probability vector must be 1-D with >= 2 entries, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ProbabilityError("probability vector has non-finite entries")
    if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
        raise ProbabilityError(
            f"probability entries outside [0, 1]: min={arr.min()!r} max={arr.max()!r}"
        )
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise ProbabilityError(
            f"probability vector sums to {total!r}, more than {tol} from 1"
        )
    if arr.min() < 0.0:
        arr = np.clip(arr, 0.0, None)
        total = float(arr.sum())
    return arr / total


def periodic_signal(key: WatermarkKey, x, c) -> float:
    """Keyed cosine signal of token x as carried on class c.

    The target class carries cos(f_w * g(x)); every other class carries
    the exact negation, so the two sum to zero bit-for-bit.
    """
    c = int(c)
    if not 0 <= c < key.m:
        raise ValueError(f"class index {c} outside [0, {key.m})")
    base = math.cos(key.f_w * phase_hash(key, x))
    return base if c == key.target_class else -base


def mix_probabilities(p_hat, z, epsilon, target_class) -> np.ndarray:
    """Blend a validated probability vector with a signal value z in [-1, 1].

    This is the core perturbation; apply_watermark composes it with the
    keyed hash.  The result is a valid probability vector for any
    epsilon in [0, 0.5].
    """
    p = validate_probability_vector(p_hat)
    m = p.size
    epsilon = float(epsilon)
    if not 0.0 <= epsilon <= 0.5:
        raise ValueError(f"epsilon must lie in [0, 0.5], got {epsilon!r}")
    z = float(z)
    target_class = int(target_class)
    if not 0 <= target_class < m:
        raise DimensionError(f"target_class {target_class} outside [0, {m})")
    denom = 1.0 + 2.0 * epsilon
    y = (p + epsilon * (1.0 - z) / (m - 1)) / denom
    y[target_class] = (p[target_class] + epsilon * (1.0 + z)) / denom
    return y


def apply_watermark(key: WatermarkKey, config: WatermarkConfig, x, p_hat):
    """Watermark one prediction; returns (probability vector, selected).

    Unselected tokens and epsilon = 0 pass the input through unchanged
    (bit-for-bit).  Tokens outside the key's vocabulary are treated as
    never selected and also pass through.
    """
    arr = np.asarray(p_hat, dtype=np.float64)
    validate_probability_vector(arr)
    if arr.size != key.m:
        raise DimensionError(
            f"probability vector length {arr.size} does not match key m={key.m}"
        )
    try:
        selected = is_selected(key, config, x)
    except VocabularyError:
        return arr, False
    if not selected or config.epsilon == 0.0:
        return arr, selected
    z = periodic_signal(key, x, key.target_class)
    return mix_probabilities(arr, z, config.epsilon, key.target_class), True


def argmax_label(y_hat) -> int:
    """Deterministic hard label: index of the largest probability.

    Ties break toward the smallest class index.
    """
    y = validate_probability_vector(y_hat)
    return int(np.argmax(y))


def sample_hard(y_hat, rng: np.random.Generator) -> int:
    """Draw a one-hot label index with probability y_hat[i] per class."""
    y = validate_probability_vector(y_hat)
    u = rng.random()
    cdf = np.cumsum(y)
    idx = int(np.searchsorted(cdf, u, side="right"))
    return min(idx, y.size - 1)


def hard_label_stream(seed, counter) -> np.random.Generator:
    """Deterministic per-request random stream keyed by (seed, counter)."""
    return np.random.default_rng((int(seed), int(counter)))


def serve(key: WatermarkKey, config: WatermarkConfig, x, p_hat,
          rng: np.random.Generator | None = None) -> WatermarkedOutput:
    """Produce the API-facing output for one prediction.

    Soft mode returns the (possibly watermarked) vector.  Hard mode
    samples a one-hot label from the watermarked vector for selected
    tokens and returns the deterministic argmax label otherwise.
    """
    y, selected = apply_watermark(key, config, x, p_hat)
    if config.mode == "soft":
        return WatermarkedOutput(mode="soft", selected=selected, soft=y)
    if selected:
        if rng is None:
            raise ValueError("hard mode needs a random stream for selected tokens")
        label = sample_hard(y, rng)
    else:
        label = argmax_label(y)
    return WatermarkedOutput(mode="hard", selected=selected, hard=label)

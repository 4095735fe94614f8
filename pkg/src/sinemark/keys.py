"""Secret key material and the keyed token hash.

A key holds a random unit-cube vector pair (v_k for the signal phase,
v_s for selection) and a Gaussian token matrix M with one row per
vocabulary entry.  The hash of a token is the standard normal CDF of
the projection v . M[x], scaled so the projection has unit variance in
the dimension limit: for v with entries uniform on [0, 1) and M[x]
standard normal, v . M[x] is N(0, |v|^2) with E|v|^2 = n/3, so
Phi((v . M[x]) / sqrt(n/3)) is close to uniform on (0, 1).

Keys are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ._jsonio import atomic_write_text, format_float, format_float_list
from .errors import DimensionError, KeyFormatError, VocabularyError

KEY_FILE_VERSION = 1

# Hash outputs are clamped into the open unit interval so downstream
# cos(f_w * g) and threshold comparisons never see exactly 0.0 or 1.0.
_UNIT_LO = np.nextafter(0.0, 1.0)
_UNIT_HI = np.nextafter(1.0, 0.0)


@dataclass(frozen=True, eq=False)
class WatermarkKey:
    """Secret watermark key: class count, signal frequency, v_k, v_s, M."""

    m: int
    f_w: float
    target_class: int
    v_k: np.ndarray
    v_s: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        if not isinstance(self.m, int) or self.m < 2:
            raise DimensionError(f"class count m must be an int >= 2, got {self.m!r}")
        if not (isinstance(self.f_w, (int, float)) and math.isfinite(self.f_w) and self.f_w > 0):
            raise DimensionError(f"signal frequency f_w must be finite and > 0, got {self.f_w!r}")
        if not isinstance(self.target_class, int) or not 0 <= self.target_class < self.m:
            raise DimensionError(
                f"target_class must be an int in [0, {self.m}), got {self.target_class!r}"
            )
        M = np.ascontiguousarray(np.asarray(self.M, dtype=np.float64))
        if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
            raise DimensionError(f"M must be a 2-D matrix, got shape {np.shape(self.M)}")
        if not np.all(np.isfinite(M)):
            raise DimensionError("M contains non-finite entries")
        n = M.shape[1]
        vecs = {}
        for name, v in (("v_k", self.v_k), ("v_s", self.v_s)):
            v = np.ascontiguousarray(np.asarray(v, dtype=np.float64))
            if v.shape != (n,):
                raise DimensionError(f"{name} must have shape ({n},), got {v.shape}")
            if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() >= 1.0:
                raise DimensionError(f"{name} entries must lie in [0, 1)")
            v.setflags(write=False)
            vecs[name] = v
        M.setflags(write=False)
        object.__setattr__(self, "v_k", vecs["v_k"])
        object.__setattr__(self, "v_s", vecs["v_s"])
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "f_w", float(self.f_w))

    @property
    def vocab_size(self) -> int:
        return self.M.shape[0]

    @property
    def dim(self) -> int:
        return self.M.shape[1]

    def __eq__(self, other):
        if not isinstance(other, WatermarkKey):
            return NotImplemented
        return (
            self.m == other.m
            and self.f_w == other.f_w
            and self.target_class == other.target_class
            and np.array_equal(self.v_k, other.v_k)
            and np.array_equal(self.v_s, other.v_s)
            and np.array_equal(self.M, other.M)
        )


@dataclass(frozen=True)
class WatermarkConfig:
    """Serving-side watermark strength and coverage.

    epsilon: perturbation strength in [0, 0.5].
    tau: selection threshold in [0, 1]; a token is watermarked when its
         selection hash is <= tau, so tau is the expected covered fraction.
    mode: "soft" returns probability vectors, "hard" samples one-hot labels.
    """

    epsilon: float = 0.2
    tau: float = 0.5
    mode: str = "soft"

    def __post_init__(self):
        eps = float(self.epsilon)
        tau = float(self.tau)
        if not (math.isfinite(eps) and 0.0 <= eps <= 0.5):
            raise ValueError(f"epsilon must lie in [0, 0.5], got {self.epsilon!r}")
        if not (math.isfinite(tau) and 0.0 <= tau <= 1.0):
            raise ValueError(f"tau must lie in [0, 1], got {self.tau!r}")
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"mode must be 'soft' or 'hard', got {self.mode!r}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "tau", tau)


def generate_key(m, vocab_size, dim, f_w, target_class, seed) -> WatermarkKey:
    """Draw fresh key material deterministically from a seed.

    v_k and v_s entries are uniform on [0, 1); M entries are standard
    normal.  Distinct seeds give distinct keys with overwhelming
    probability.
    """
    if not isinstance(vocab_size, int) or vocab_size < 1:
        raise DimensionError(f"vocab_size must be an int >= 1, got {vocab_size!r}")
    if not isinstance(dim, int) or dim < 1:
        raise DimensionError(f"dim must be an int >= 1, got {dim!r}")
    rng = np.random.default_rng(seed)
    v_k = rng.random(dim)
    v_s = rng.random(dim)
    M = rng.standard_normal((vocab_size, dim))
    return WatermarkKey(m=m, f_w=float(f_w), target_class=target_class, v_k=v_k, v_s=v_s, M=M)


def _check_token(key: WatermarkKey, x) -> int:
    x = int(x)
    if not 0 <= x < key.vocab_size:
        raise VocabularyError(
            f"token id {x} outside vocabulary [0, {key.vocab_size})"
        )
    return x


def hash_value(key: WatermarkKey, v: np.ndarray, x) -> float:
    """Keyed hash of one token: Phi(v . M[x] / sqrt(n/3)), inside (0, 1)."""
    x = _check_token(key, x)
    return float(hash_values(key, v, np.array([x]))[0])


def hash_values(key: WatermarkKey, v: np.ndarray, xs) -> np.ndarray:
    """Vectorized hash_value over an array of token ids.

    The projection sums elementwise products (not BLAS) so scalar and
    batched calls agree bit for bit; selection decisions at the tau
    boundary must not depend on which entry point computed the hash.
    """
    xs = np.asarray(xs)
    if xs.size and (xs.min() < 0 or xs.max() >= key.vocab_size):
        bad = xs[(xs < 0) | (xs >= key.vocab_size)][0]
        raise VocabularyError(
            f"token id {int(bad)} outside vocabulary [0, {key.vocab_size})"
        )
    scale = math.sqrt(key.dim / 3.0)
    g = ndtr(np.sum(key.M[xs] * v, axis=1) / scale)
    return np.clip(g, _UNIT_LO, _UNIT_HI)


def phase_hash(key: WatermarkKey, x) -> float:
    """Hash with the phase vector v_k (positions tokens on the signal axis)."""
    return hash_value(key, key.v_k, x)


def selection_hash(key: WatermarkKey, x) -> float:
    """Hash with the selection vector v_s (decides watermark coverage)."""
    return hash_value(key, key.v_s, x)


def is_selected(key: WatermarkKey, config: WatermarkConfig, x) -> bool:
    """True when the token's selection hash falls at or below tau."""
    return selection_hash(key, x) <= config.tau


def save_key(key: WatermarkKey, path, config: WatermarkConfig | None = None) -> None:
    """Write a key file (version 1): a single JSON document.

    Numbers carry 17 significant digits so any compliant reader recovers
    bit-identical doubles.  When a config is given, its epsilon/tau/mode
    ride along as optional fields.
    """
    lines = [
        "{",
        f'  "version": {KEY_FILE_VERSION},',
        f'  "m": {key.m},',
        f'  "vocab_size": {key.vocab_size},',
        f'  "dim": {key.dim},',
        f'  "f_w": {format_float(key.f_w)},',
        f'  "target_class": {key.target_class},',
        f'  "v_k": {format_float_list(key.v_k)},',
        f'  "v_s": {format_float_list(key.v_s)},',
    ]
    if config is not None:
        lines.append(f'  "epsilon": {format_float(config.epsilon)},')
        lines.append(f'  "tau": {format_float(config.tau)},')
        lines.append(f'  "mode": {json.dumps(config.mode)},')
    lines.append('  "M": [')
    last = key.vocab_size - 1
    for i, row in enumerate(key.M):
        comma = "," if i != last else ""
        lines.append(f"    {format_float_list(row)}{comma}")
    lines.append("  ]")
    lines.append("}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _require_int(doc, name, minimum=None):
    if name not in doc:
        raise KeyFormatError(f"key file field '{name}': missing")
    value = doc[name]
    if isinstance(value, bool) or not isinstance(value, int):
        raise KeyFormatError(f"key file field '{name}': expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise KeyFormatError(f"key file field '{name}': must be >= {minimum}, got {value}")
    return value


def _require_number(doc, name):
    if name not in doc:
        raise KeyFormatError(f"key file field '{name}': missing")
    value = doc[name]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise KeyFormatError(f"key file field '{name}': expected a number, got {value!r}")
    if not math.isfinite(value):
        raise KeyFormatError(f"key file field '{name}': must be finite, got {value!r}")
    return float(value)


def _require_float_array(doc, name, length):
    if name not in doc:
        raise KeyFormatError(f"key file field '{name}': missing")
    value = doc[name]
    if not isinstance(value, list):
        raise KeyFormatError(f"key file field '{name}': expected an array")
    if len(value) != length:
        raise KeyFormatError(
            f"key file field '{name}': expected length {length}, found {len(value)}"
        )
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise KeyFormatError(f"key file field '{name}': entries must be numbers")
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise KeyFormatError(f"key file field '{name}': entries must be finite numbers")
    return arr


def load_key_with_config(path):
    """Read a key file; returns (key, config-or-None)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise KeyFormatError(f"key file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise KeyFormatError("key file must hold a JSON object")

    version = _require_int(doc, "version")
    if version != KEY_FILE_VERSION:
        raise KeyFormatError(
            f"key file field 'version': unsupported version {version}"
        )
    m = _require_int(doc, "m", minimum=2)
    vocab_size = _require_int(doc, "vocab_size", minimum=1)
    dim = _require_int(doc, "dim", minimum=1)
    f_w = _require_number(doc, "f_w")
    if f_w <= 0:
        raise KeyFormatError(f"key file field 'f_w': must be > 0, got {f_w}")
    target_class = _require_int(doc, "target_class", minimum=0)
    if target_class >= m:
        raise KeyFormatError(
            f"key file field 'target_class': must be < m={m}, got {target_class}"
        )
    v_k = _require_float_array(doc, "v_k", dim)
    v_s = _require_float_array(doc, "v_s", dim)
    for name, v in (("v_k", v_k), ("v_s", v_s)):
        if v.min() < 0.0 or v.max() >= 1.0:
            raise KeyFormatError(f"key file field '{name}': entries must lie in [0, 1)")

    if "M" not in doc:
        raise KeyFormatError("key file field 'M': missing")
    rows = doc["M"]
    if not isinstance(rows, list):
        raise KeyFormatError("key file field 'M': expected an array of rows")
    if len(rows) != vocab_size:
        raise KeyFormatError(
            f"key file field 'M': expected vocab_size={vocab_size} rows, found {len(rows)}"
        )
    try:
        M = np.asarray(rows, dtype=np.float64)
    except (TypeError, ValueError):
        raise KeyFormatError("key file field 'M': rows must be arrays of numbers")
    if M.ndim != 2 or M.shape[1] != dim:
        raise KeyFormatError(
            f"key file field 'M': every row must have dim={dim} entries"
        )
    if not np.all(np.isfinite(M)):
        raise KeyFormatError("key file field 'M': entries must be finite numbers")

    key = WatermarkKey(m=m, f_w=f_w, target_class=target_class, v_k=v_k, v_s=v_s, M=M)

    config = None
    if "epsilon" in doc or "tau" in doc:
        epsilon = _require_number(doc, "epsilon") if "epsilon" in doc else 0.2
        tau = _require_number(doc, "tau") if "tau" in doc else 0.5
        mode = doc.get("mode", "soft")
        if mode not in ("soft", "hard"):
            raise KeyFormatError(f"key file field 'mode': expected 'soft' or 'hard', got {mode!r}")
        try:
            config = WatermarkConfig(epsilon=epsilon, tau=tau, mode=mode)
        except ValueError as exc:
            raise KeyFormatError(f"key file field 'epsilon'/'tau': {exc}") from exc
    return key, config


def load_key(path) -> WatermarkKey:
    """Read a key file, ignoring any attached serving config."""
    key, _ = load_key_with_config(path)
    return key

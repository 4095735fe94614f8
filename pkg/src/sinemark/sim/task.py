"""Synthetic classification task with a calibrated victim.

The victim is the true conditional table itself, so every accuracy here
is an exact expectation over the query distribution rather than a Monte
Carlo estimate.  That keeps sweep trends deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..keys import WatermarkConfig, WatermarkKey, hash_values
from ..watermark import WatermarkedOutput, apply_watermark, serve, validate_probability_vector

DEFAULT_VOCAB_SIZE = 2000
DEFAULT_CLASSES = 2
DEFAULT_CONCENTRATION = 0.3
DEFAULT_ZIPF_EXPONENT = 1.1


@dataclass(frozen=True)
class SyntheticTask:
    """True conditionals pi (one row per token) and a query distribution."""

    pi: np.ndarray
    token_freq: np.ndarray

    def __post_init__(self):
        pi = np.ascontiguousarray(np.asarray(self.pi, dtype=np.float64))
        if pi.ndim != 2 or pi.shape[0] < 1 or pi.shape[1] < 2:
            raise ValueError(f"pi must be a (vocab, classes>=2) table, got shape {pi.shape}")
        for row in pi:
            validate_probability_vector(row)
        freq = validate_probability_vector(self.token_freq)
        if freq.size != pi.shape[0]:
            raise ValueError(
                f"token_freq length {freq.size} does not match vocab size {pi.shape[0]}"
            )
        pi.setflags(write=False)
        freq.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "token_freq", freq)

    @property
    def vocab_size(self) -> int:
        return self.pi.shape[0]

    @property
    def m(self) -> int:
        return self.pi.shape[1]


def make_task(seed, vocab_size: int = DEFAULT_VOCAB_SIZE, m: int = DEFAULT_CLASSES,
              concentration: float = DEFAULT_CONCENTRATION,
              zipf_exponent: float = DEFAULT_ZIPF_EXPONENT) -> SyntheticTask:
    """Draw a task: Dirichlet conditionals, permuted Zipf query weights."""
    if vocab_size < 2:
        raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    if not concentration > 0:
        raise ValueError(f"concentration must be > 0, got {concentration}")
    if not zipf_exponent > 0:
        raise ValueError(f"zipf_exponent must be > 0, got {zipf_exponent}")
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet([concentration] * m, size=vocab_size)
    weights = np.arange(1, vocab_size + 1, dtype=np.float64) ** (-zipf_exponent)
    freq = weights / weights.sum()
    freq = freq[rng.permutation(vocab_size)]
    return SyntheticTask(pi=pi, token_freq=freq)


def make_task_with_class_mass(seed, mass: float, target_class: int = 0,
                              vocab_size: int = DEFAULT_VOCAB_SIZE, m: int = DEFAULT_CLASSES,
                              concentration: float = DEFAULT_CONCENTRATION,
                              zipf_exponent: float = DEFAULT_ZIPF_EXPONENT) -> SyntheticTask:
    """Task variant whose target class holds a chosen share of query mass.

    The base task for the same seed is rebuilt, then per-row entries are
    swapped so the dominant class of the highest-frequency tokens is the
    target class until the requested mass is covered, and is some other
    class for the rest.  Swapping preserves each row's value multiset,
    so the best achievable accuracy is unchanged, and the covered token
    sets are nested across increasing mass values for a fixed seed.
    """
    if not 0 < mass < 1:
        raise ValueError(f"mass must be in (0, 1), got {mass}")
    task = make_task(seed, vocab_size, m, concentration, zipf_exponent)
    if not 0 <= target_class < task.m:
        raise ValueError(f"target_class {target_class} outside [0, {task.m})")
    pi = task.pi.copy()
    order = np.argsort(-task.token_freq, kind="stable")
    covered = 0.0
    in_target = np.zeros(task.vocab_size, dtype=bool)
    for x in order:
        if covered >= mass:
            break
        in_target[x] = True
        covered += task.token_freq[x]
    for x in range(task.vocab_size):
        row = pi[x]
        j = int(np.argmax(row))
        if in_target[x]:
            if j != target_class:
                row[j], row[target_class] = row[target_class], row[j]
        elif j == target_class:
            others = np.delete(np.arange(task.m), target_class)
            k = others[int(np.argmax(row[others]))]
            row[target_class], row[k] = row[k], row[target_class]
    return SyntheticTask(pi=pi, token_freq=task.token_freq)


def target_class_mass(task: SyntheticTask, target_class: int) -> float:
    """Query-mass share of tokens whose dominant class is the target."""
    dominant = np.argmax(task.pi, axis=1)
    return float(task.token_freq[dominant == target_class].sum())


def victim_answer(task: SyntheticTask, key: WatermarkKey, config: WatermarkConfig,
                  x: int, mode: str | None = None, rng=None) -> WatermarkedOutput:
    """Serve one watermarked victim answer for token x."""
    if not 0 <= x < task.vocab_size:
        raise ValueError(f"token id {x} outside task vocabulary [0, {task.vocab_size})")
    if mode is not None and mode != config.mode:
        config = WatermarkConfig(epsilon=config.epsilon, tau=config.tau, mode=mode)
    return serve(key, config, x, task.pi[x], rng=rng)


def watermarked_table(task: SyntheticTask, key: WatermarkKey,
                      config: WatermarkConfig) -> tuple[np.ndarray, np.ndarray]:
    """All served soft vectors at once: (vocab x m table, selected mask)."""
    out = np.empty_like(task.pi)
    selected = np.zeros(task.vocab_size, dtype=bool)
    for x in range(task.vocab_size):
        out[x], selected[x] = apply_watermark(key, config, x, task.pi[x])
    return out, selected


def victim_accuracy(task: SyntheticTask) -> float:
    """Exact accuracy of the unwatermarked victim (best achievable)."""
    return float(task.token_freq @ task.pi.max(axis=1))


def argmax_soft_accuracy(task: SyntheticTask, key: WatermarkKey,
                         config: WatermarkConfig) -> float:
    """Exact accuracy of argmax over the watermarked soft outputs."""
    table, _ = watermarked_table(task, key, config)
    picks = np.argmax(table, axis=1)
    return float(task.token_freq @ task.pi[np.arange(task.vocab_size), picks])


def sampling_hard_accuracy(task: SyntheticTask, key: WatermarkKey,
                           config: WatermarkConfig) -> float:
    """Exact accuracy of the hard output mode.

    Selected tokens answer with a label sampled from the watermarked
    vector, so their exact accuracy is the inner product with the true
    conditional; unselected tokens answer argmax.
    """
    table, selected = watermarked_table(task, key, config)
    per_token = np.where(
        selected,
        np.einsum("ij,ij->i", table, task.pi),
        task.pi[np.arange(task.vocab_size), np.argmax(task.pi, axis=1)],
    )
    return float(task.token_freq @ per_token)


def student_accuracy(task: SyntheticTask, predictions: np.ndarray) -> float:
    """Exact accuracy of argmax over a full prediction table."""
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.shape != task.pi.shape:
        raise ValueError(
            f"prediction table shape {predictions.shape} does not match task {task.pi.shape}"
        )
    picks = np.argmax(predictions, axis=1)
    return float(task.token_freq @ task.pi[np.arange(task.vocab_size), picks])


def selected_mask(task: SyntheticTask, key: WatermarkKey, config: WatermarkConfig) -> np.ndarray:
    """Boolean mask of tokens the key selects at the config threshold."""
    xs = np.arange(task.vocab_size)
    return hash_values(key, key.v_s, xs) <= config.tau

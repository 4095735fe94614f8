"""Student models distilled from victim answers.

Two kinds bracket the realistic regime without a deep-learning stack: a
table student with one parameter row per token (exact fixed-point
semantics) and a featurized student, a linear-softmax map over fixed
random token features (smoothing across tokens).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr, softmax

from ..errors import DivergenceError
from ..watermark import WatermarkedOutput
from .task import SyntheticTask

DEFAULT_EPOCHS = 40
DEFAULT_LR = 1.0
DEFAULT_FEATURE_DIM = 32

# Loss must rise this many epochs in a row before training aborts.
_DIVERGENCE_PATIENCE = 3
_ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class StudentModel:
    """Suspect model over the task vocabulary.

    Table kind stores probability rows directly; featurized kind stores
    fixed random features and a learned linear map into class logits.
    """

    kind: str
    probs: np.ndarray | None = None
    features: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "table":
            if self.probs is None or self.features is not None or self.weights is not None:
                raise ValueError("table student needs probs only")
            probs = np.ascontiguousarray(np.asarray(self.probs, dtype=np.float64))
            if probs.ndim != 2:
                raise ValueError(f"probs must be 2-D, got shape {probs.shape}")
            if not np.all(np.isfinite(probs)) or probs.min() < -1e-12:
                raise ValueError("table rows must be finite non-negative")
            sums = probs.sum(axis=1)
            if np.abs(sums - 1.0).max() > _ROW_SUM_TOL:
                raise ValueError("table rows must each sum to 1")
            probs = np.clip(probs, 0.0, None)
            probs /= probs.sum(axis=1, keepdims=True)
            probs.setflags(write=False)
            object.__setattr__(self, "probs", probs)
        elif self.kind == "featurized":
            if self.probs is not None or self.features is None or self.weights is None:
                raise ValueError("featurized student needs features and weights only")
            phi = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
            w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
            if phi.ndim != 2 or w.ndim != 2 or phi.shape[1] != w.shape[0]:
                raise ValueError(
                    f"features {phi.shape} and weights {w.shape} are not composable"
                )
            if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(w))):
                raise ValueError("features and weights must be finite")
            phi.setflags(write=False)
            w.setflags(write=False)
            object.__setattr__(self, "features", phi)
            object.__setattr__(self, "weights", w)
        else:
            raise ValueError(f"unknown student kind: {self.kind!r}")

    @property
    def vocab_size(self) -> int:
        return self.probs.shape[0] if self.kind == "table" else self.features.shape[0]

    @property
    def m(self) -> int:
        return self.probs.shape[1] if self.kind == "table" else self.weights.shape[1]

    def predict_table(self) -> np.ndarray:
        """Predicted probability rows for every token."""
        if self.kind == "table":
            return self.probs
        return softmax(self.features @ self.weights, axis=1)

    def predict(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        if xs.size and (xs.min() < 0 or xs.max() >= self.vocab_size):
            raise ValueError("token id outside student vocabulary")
        if self.kind == "table":
            return self.probs[xs]
        return softmax(self.features[xs] @ self.weights, axis=-1)


def new_student(kind: str, vocab_size: int, m: int,
                feature_dim: int = DEFAULT_FEATURE_DIM, seed=0) -> StudentModel:
    """Fresh student with uniform predictions."""
    if kind == "table":
        return StudentModel(kind="table", probs=np.full((vocab_size, m), 1.0 / m))
    if kind == "featurized":
        rng = np.random.default_rng(seed)
        phi = rng.standard_normal((vocab_size, feature_dim)) / np.sqrt(feature_dim)
        return StudentModel(kind="featurized", features=phi,
                            weights=np.zeros((feature_dim, m)))
    raise ValueError(f"unknown student kind: {kind!r}")


def _aggregate_answers(queries, answers, m: int, vocab_size: int):
    """Per-token mean target over the queried tokens.

    Soft answers average the served vectors; hard answers average the
    one-hot labels into an empirical distribution.  Returns the target
    table, the queried-token mask, and whether the answers were hard.
    """
    queries = np.asarray(queries, dtype=np.int64)
    if queries.ndim != 1 or queries.size == 0:
        raise ValueError("queries must be a nonempty 1-D token list")
    if queries.min() < 0 or queries.max() >= vocab_size:
        raise ValueError("query token id outside vocabulary")

    if isinstance(answers, (list, tuple)) and answers and isinstance(answers[0], WatermarkedOutput):
        modes = {a.mode for a in answers}
        if len(modes) != 1:
            raise ValueError("answers mix soft and hard outputs")
        if modes == {"soft"}:
            answers = np.stack([a.soft for a in answers])
        else:
            answers = np.array([a.hard for a in answers], dtype=np.int64)
    answers = np.asarray(answers)
    if answers.shape[0] != queries.size:
        raise ValueError(
            f"{queries.size} queries but {answers.shape[0]} answers"
        )

    hard = answers.ndim == 1
    if hard:
        labels = answers.astype(np.int64)
        if labels.min() < 0 or labels.max() >= m:
            raise ValueError("hard answer label outside [0, m)")
        one_hot = np.zeros((queries.size, m))
        one_hot[np.arange(queries.size), labels] = 1.0
        answers = one_hot
    else:
        answers = np.asarray(answers, dtype=np.float64)
        if answers.ndim != 2 or answers.shape[1] != m:
            raise ValueError(f"soft answers must have shape (n, {m})")

    totals = np.zeros((vocab_size, m))
    counts = np.zeros(vocab_size)
    np.add.at(totals, queries, answers)
    np.add.at(counts, queries, 1.0)
    queried = counts > 0
    targets = np.zeros((vocab_size, m))
    targets[queried] = totals[queried] / counts[queried, None]
    return targets, queried, hard


def _mean_loss(loss: str, targets: np.ndarray, preds: np.ndarray) -> float:
    """Token-uniform training loss over the queried rows."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if loss == "kl":
            per_row = rel_entr(targets, preds).sum(axis=1)
        else:
            logp = np.where(targets > 0, np.log(np.clip(preds, 1e-300, None)), 0.0)
            per_row = -(targets * logp).sum(axis=1)
        bad = preds.min(axis=1) < 0
    per_row = np.where(bad, np.inf, per_row)
    return float(per_row.mean())


def distill_student(student: StudentModel, queries, answers, loss: str = "kl",
                    epochs: int = DEFAULT_EPOCHS, lr: float = DEFAULT_LR,
                    return_history: bool = False):
    """Train a copy of the student on victim answers by gradient descent.

    KL loss expects soft answers, CE expects hard labels; both reduce to
    the same mean-target pull, so the table student's fixed point is the
    per-token mean answer.  Every queried token carries equal weight
    regardless of how often it was asked.  Raises DivergenceError when
    the loss rises three epochs in a row (learning rate too high).
    """
    if loss not in ("kl", "ce"):
        raise ValueError(f"loss must be 'kl' or 'ce', got {loss!r}")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if not lr > 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    targets, queried, hard = _aggregate_answers(queries, answers, student.m,
                                                student.vocab_size)
    if loss == "kl" and hard:
        raise ValueError("kl loss needs soft answers; use ce for hard labels")
    if loss == "ce" and not hard:
        raise ValueError("ce loss needs hard labels; use kl for soft answers")

    t_q = targets[queried]
    if student.kind == "table":
        q = student.probs.copy()
        history = [_mean_loss(loss, t_q, q[queried])]
        rises = 0
        for _ in range(epochs):
            # Mean-space step: the natural-gradient update for softmax
            # families, contraction factor |1 - lr| per epoch.
            q[queried] = (1.0 - lr) * q[queried] + lr * t_q
            cur = _mean_loss(loss, t_q, q[queried])
            rises = rises + 1 if (not np.isfinite(cur) or cur > history[-1] + 1e-12) else 0
            history.append(cur)
            if rises >= _DIVERGENCE_PATIENCE:
                raise DivergenceError(
                    f"training loss rose {rises} consecutive epochs at lr={lr}"
                )
        trained = StudentModel(kind="table", probs=q)
    else:
        phi = student.features
        w = student.weights.copy()
        phi_q = phi[queried]
        n_q = int(queried.sum())
        preds = softmax(phi_q @ w, axis=1)
        history = [_mean_loss(loss, t_q, preds)]
        rises = 0
        for _ in range(epochs):
            w -= lr * (phi_q.T @ (preds - t_q)) / n_q
            if not np.all(np.isfinite(w)):
                raise DivergenceError(f"weights overflowed at lr={lr}")
            preds = softmax(phi_q @ w, axis=1)
            cur = _mean_loss(loss, t_q, preds)
            rises = rises + 1 if (not np.isfinite(cur) or cur > history[-1] + 1e-12) else 0
            history.append(cur)
            if rises >= _DIVERGENCE_PATIENCE:
                raise DivergenceError(
                    f"training loss rose {rises} consecutive epochs at lr={lr}"
                )
        trained = StudentModel(kind="featurized", features=phi, weights=w)
    if return_history:
        return trained, history
    return trained


def _sample_rows(rows: np.ndarray, rng) -> np.ndarray:
    """One label per probability row."""
    cum = np.cumsum(rows, axis=1)
    u = rng.random(rows.shape[0])
    labels = (cum < u[:, None]).sum(axis=1)
    return np.minimum(labels, rows.shape[1] - 1)


def train_negative(task: SyntheticTask, kind: str, seed, coverage: float = 1.0,
                   epochs: int = DEFAULT_EPOCHS, lr: float = DEFAULT_LR,
                   student_kind: str = "table",
                   feature_dim: int = DEFAULT_FEATURE_DIM) -> StudentModel:
    """Train one negative-class student.

    'unwatermarked' distills from the clean oracle (a watermark level of
    zero leaves outputs untouched) over a random coverage-fraction of
    the tokens; 'true_label' trains from scratch on one sampled true
    label per token.
    """
    if not 0.0 < coverage <= 1.0:
        raise ValueError(f"coverage must be in (0, 1], got {coverage}")
    rng = np.random.default_rng(seed)
    student = new_student(student_kind, task.vocab_size, task.m, feature_dim,
                          seed=rng.integers(2**63))
    if kind == "unwatermarked":
        if coverage >= 1.0:
            queries = np.arange(task.vocab_size)
        else:
            mask = rng.random(task.vocab_size) < coverage
            if not mask.any():
                mask[rng.integers(task.vocab_size)] = True
            queries = np.flatnonzero(mask)
        return distill_student(student, queries, task.pi[queries], loss="kl",
                               epochs=epochs, lr=lr)
    if kind == "true_label":
        queries = np.arange(task.vocab_size)
        labels = _sample_rows(task.pi, rng)
        return distill_student(student, queries, labels, loss="ce",
                               epochs=epochs, lr=lr)
    raise ValueError(f"unknown negative kind: {kind!r}")

"""End-to-end detection experiments and parameter sweeps.

One experiment builds a task and a key, trains positive students by
distilling the watermarked victim (soft targets and sampled hard
labels), trains negative students (distilled from the clean oracle and
trained from scratch on true labels), probes every model with the key,
and reduces the scores to average precision plus fidelity accuracies.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..detect import DetectionParams, ProbeRecord, detect_watermark, mean_average_precision
from ..keys import WatermarkConfig, generate_key
from .students import (
    DEFAULT_EPOCHS,
    DEFAULT_FEATURE_DIM,
    DEFAULT_LR,
    StudentModel,
    distill_student,
    new_student,
    train_negative,
)
from .task import (
    DEFAULT_CLASSES,
    DEFAULT_CONCENTRATION,
    DEFAULT_VOCAB_SIZE,
    DEFAULT_ZIPF_EXPONENT,
    argmax_soft_accuracy,
    make_task,
    make_task_with_class_mass,
    sampling_hard_accuracy,
    student_accuracy,
    target_class_mass,
    victim_accuracy,
    watermarked_table,
)

# Child-stream salts so every trial owns an independent deterministic rng.
_ROLE_KEY = 1
_ROLE_SOFT_POSITIVE = 2
_ROLE_HARD_POSITIVE = 3
_ROLE_TRUE_LABEL = 4
_ROLE_UNWATERMARKED = 5


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a detection experiment needs, seedable and immutable.

    Soft distillation queries a random coverage-fraction of the tokens
    once each per trial; hard distillation queries every token
    hard_repeats times.  Probing queries every token once.
    """

    vocab_size: int = DEFAULT_VOCAB_SIZE
    m: int = DEFAULT_CLASSES
    concentration: float = DEFAULT_CONCENTRATION
    zipf_exponent: float = DEFAULT_ZIPF_EXPONENT
    dim: int = 128
    f_w: float = 16.0
    target_class: int = 0
    epsilon: float = 0.2
    tau: float = 0.5
    n_positive: int = 10
    n_negative_unwatermarked: int = 10
    n_negative_true_label: int = 10
    coverage: float = 0.9
    hard_repeats: int = 50
    student_kind: str = "table"
    feature_dim: int = DEFAULT_FEATURE_DIM
    epochs: int = DEFAULT_EPOCHS
    lr: float = DEFAULT_LR
    seed: int = 0
    target_class_mass: float | None = None
    run_soft: bool = True
    run_hard: bool = True
    detection: DetectionParams = field(default_factory=DetectionParams)

    def __post_init__(self):
        if self.n_positive < 1:
            raise ValueError("need at least one positive model per experiment")
        if self.n_negative_unwatermarked + self.n_negative_true_label < 2:
            raise ValueError("need at least two negative models per experiment")
        if self.hard_repeats < 1:
            raise ValueError("hard_repeats must be >= 1")
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must be in (0, 1]")
        if not (self.run_soft or self.run_hard):
            raise ValueError("at least one of run_soft/run_hard must be set")


@dataclass(frozen=True)
class ExperimentResult:
    """Scores and fidelity accuracies of one experiment."""

    map_soft: float | None
    map_hard: float | None
    victim_acc: float
    argmax_soft_acc: float
    sampling_hard_acc: float
    student_acc: float | None
    student_acc_hard: float | None
    snr_positives: dict
    snr_negatives: dict
    achieved_target_class_mass: float
    config: ExperimentConfig

    def negative_scores(self) -> list:
        out = []
        for scores in self.snr_negatives.values():
            out.extend(scores)
        return out

    def mean_positive_snr(self, mode: str = "soft") -> float:
        return float(np.mean(self.snr_positives[mode]))

    def to_dict(self) -> dict:
        doc = {
            "map_soft": self.map_soft,
            "map_hard": self.map_hard,
            "victim_acc": self.victim_acc,
            "argmax_soft_acc": self.argmax_soft_acc,
            "sampling_hard_acc": self.sampling_hard_acc,
            "student_acc": self.student_acc,
            "student_acc_hard": self.student_acc_hard,
            "snr_positives": {k: list(v) for k, v in self.snr_positives.items()},
            "snr_negatives": {k: list(v) for k, v in self.snr_negatives.items()},
            "achieved_target_class_mass": self.achieved_target_class_mass,
            "config": dataclasses.asdict(self.config),
        }
        return doc


def _probe_records(student: StudentModel, probe_xs) -> list:
    preds = student.predict(probe_xs)
    return [ProbeRecord(x=int(x), probs=row) for x, row in zip(probe_xs, preds)]


def _probe_score(student: StudentModel, probe_xs, key, cfg, params) -> float:
    records = _probe_records(student, probe_xs)
    return detect_watermark(key, cfg, records, params).p_snr


def _sample_hard_answers(y_table, base_argmax, selected, repeats, rng) -> np.ndarray:
    """(vocab x repeats) labels: sampled where selected, argmax elsewhere."""
    vocab, m = y_table.shape
    cum = np.cumsum(y_table, axis=1)
    u = rng.random((vocab, repeats))
    labels = (cum[:, None, :] <= u[:, :, None]).sum(axis=2)
    np.minimum(labels, m - 1, out=labels)
    labels[~selected] = base_argmax[~selected, None]
    return labels


def _build_environment(config: ExperimentConfig):
    """Task, key, watermark config, and the served soft table."""
    seed = config.seed
    if config.target_class_mass is None:
        task = make_task(seed, config.vocab_size, config.m, config.concentration,
                         config.zipf_exponent)
    else:
        task = make_task_with_class_mass(
            seed, config.target_class_mass, config.target_class, config.vocab_size,
            config.m, config.concentration, config.zipf_exponent)
    key = generate_key(config.m, config.vocab_size, config.dim, config.f_w,
                       config.target_class, seed=(seed, _ROLE_KEY))
    cfg = WatermarkConfig(epsilon=config.epsilon, tau=config.tau, mode="soft")
    y_table, selected = watermarked_table(task, key, cfg)
    return task, key, cfg, y_table, selected


def _coverage_queries(config: ExperimentConfig, vocab_size: int, trial_rng) -> np.ndarray:
    if config.coverage >= 1.0:
        return np.arange(vocab_size)
    mask = trial_rng.random(vocab_size) < config.coverage
    if not mask.any():
        mask[trial_rng.integers(vocab_size)] = True
    return np.flatnonzero(mask)


def _fresh_student(config: ExperimentConfig, task, trial_rng) -> StudentModel:
    return new_student(config.student_kind, task.vocab_size, task.m,
                       config.feature_dim, seed=int(trial_rng.integers(2**63)))


def _soft_positive_student(config: ExperimentConfig, task, y_table, i: int) -> StudentModel:
    rng = np.random.default_rng((config.seed, _ROLE_SOFT_POSITIVE, i))
    queries = _coverage_queries(config, task.vocab_size, rng)
    return distill_student(_fresh_student(config, task, rng), queries,
                           y_table[queries], loss="kl", epochs=config.epochs,
                           lr=config.lr)


def first_positive_probe_artifacts(config: ExperimentConfig):
    """Key, config, probe records, and score of the first soft positive.

    Rebuilds the experiment's trial 0 deterministically, so the returned
    score equals the first entry of the experiment's soft score list.
    """
    task, key, cfg, y_table, _ = _build_environment(config)
    student = _soft_positive_student(config, task, y_table, 0)
    probe_xs = np.arange(task.vocab_size)
    records = _probe_records(student, probe_xs)
    p_snr = detect_watermark(key, cfg, records, config.detection).p_snr
    return key, cfg, records, p_snr


def run_detection_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Train positives and negatives, probe them all, reduce to scores."""
    seed = config.seed
    task, key, cfg, y_table, selected = _build_environment(config)
    base_argmax = np.argmax(task.pi, axis=1)
    probe_xs = np.arange(task.vocab_size)

    snr_positives: dict = {}
    soft_students: list[StudentModel] = []
    hard_students: list[StudentModel] = []

    if config.run_soft:
        scores = []
        for i in range(config.n_positive):
            student = _soft_positive_student(config, task, y_table, i)
            soft_students.append(student)
            scores.append(_probe_score(student, probe_xs, key, cfg, config.detection))
        snr_positives["soft"] = tuple(scores)

    if config.run_hard:
        scores = []
        queries = np.repeat(np.arange(task.vocab_size), config.hard_repeats)
        for i in range(config.n_positive):
            rng = np.random.default_rng((seed, _ROLE_HARD_POSITIVE, i))
            labels = _sample_hard_answers(y_table, base_argmax, selected,
                                          config.hard_repeats, rng)
            student = distill_student(_fresh_student(config, task, rng), queries,
                                      labels.ravel(), loss="ce",
                                      epochs=config.epochs, lr=config.lr)
            hard_students.append(student)
            scores.append(_probe_score(student, probe_xs, key, cfg, config.detection))
        snr_positives["hard"] = tuple(scores)

    snr_negatives: dict = {}
    for kind, role, count in (
        ("unwatermarked", _ROLE_UNWATERMARKED, config.n_negative_unwatermarked),
        ("true_label", _ROLE_TRUE_LABEL, config.n_negative_true_label),
    ):
        scores = []
        for i in range(count):
            student = train_negative(
                task, kind, (seed, role, i), coverage=config.coverage,
                epochs=config.epochs, lr=config.lr,
                student_kind=config.student_kind, feature_dim=config.feature_dim)
            scores.append(_probe_score(student, probe_xs, key, cfg, config.detection))
        snr_negatives[kind] = tuple(scores)

    negatives = [s for scores in snr_negatives.values() for s in scores]
    map_soft = map_hard = None
    if config.run_soft:
        map_soft = mean_average_precision([
            {"positive_scores": list(snr_positives["soft"]),
             "negative_scores": negatives}])
    if config.run_hard:
        map_hard = mean_average_precision([
            {"positive_scores": list(snr_positives["hard"]),
             "negative_scores": negatives}])

    return ExperimentResult(
        map_soft=map_soft,
        map_hard=map_hard,
        victim_acc=victim_accuracy(task),
        argmax_soft_acc=argmax_soft_accuracy(task, key, cfg),
        sampling_hard_acc=sampling_hard_accuracy(task, key, cfg),
        student_acc=(
            float(np.mean([student_accuracy(task, s.predict_table()) for s in soft_students]))
            if soft_students else None),
        student_acc_hard=(
            float(np.mean([student_accuracy(task, s.predict_table()) for s in hard_students]))
            if hard_students else None),
        snr_positives=snr_positives,
        snr_negatives=snr_negatives,
        achieved_target_class_mass=target_class_mass(task, config.target_class),
        config=config,
    )


SWEEPABLE = ("epsilon", "tau", "target_class_mass")


def sweep_parameter(config: ExperimentConfig, parameter: str, values) -> list:
    """One experiment per value, same seed throughout.

    Sharing the seed pairs the random draws across values, so trends
    reflect the parameter rather than sampling noise.
    """
    if parameter not in SWEEPABLE:
        raise ValueError(f"parameter must be one of {SWEEPABLE}, got {parameter!r}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    return [run_detection_experiment(dataclasses.replace(config, **{parameter: v}))
            for v in values]


def sweep_table(parameter: str, values, results) -> str:
    """Whitespace-separated sweep summary, one row per value."""
    lines = [
        "# " + " ".join([
            parameter, "map_soft", "map_hard", "victim_acc", "argmax_soft_acc",
            "sampling_hard_acc", "student_acc", "mean_pos_snr_soft",
            "mean_pos_snr_hard",
        ])
    ]
    for value, res in zip(values, results):
        def cell(v):
            return "nan" if v is None else f"{v:.6f}"
        lines.append(" ".join([
            f"{value:.6g}",
            cell(res.map_soft), cell(res.map_hard), cell(res.victim_acc),
            cell(res.argmax_soft_acc), cell(res.sampling_hard_acc),
            cell(res.student_acc),
            cell(res.mean_positive_snr("soft") if res.map_soft is not None else None),
            cell(res.mean_positive_snr("hard") if res.map_hard is not None else None),
        ]))
    return "\n".join(lines) + "\n"

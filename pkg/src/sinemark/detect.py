"""Watermark detection from probe records, plus baseline comparison scores.

A probe record is one query of a suspect model: the token id plus either
the suspect's probability vector (soft) or its hard label.  Detection
keeps the records the key selects, places them on the unit interval via
the keyed phase hash, reads the target-class response, and scores the
periodogram around the key frequency.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import rel_entr

from ._jsonio import atomic_write_text, dumps_record
from .errors import TooFewProbesError
from .keys import WatermarkConfig, WatermarkKey, hash_values
from .spectral import (
    DEFAULT_GRID_MAX,
    DEFAULT_GRID_MIN,
    DEFAULT_GRID_STEP,
    DEFAULT_THRESHOLD,
    DEFAULT_WINDOW_WIDTH,
    PowerSpectrum,
    ProbeSeries,
    default_grid,
    lomb_scargle,
    snr_score,
)
from .watermark import validate_probability_vector

MIN_PROBES_SOFT = 8
MIN_PROBES_HARD = 64


@dataclass(frozen=True)
class ProbeRecord:
    """One suspect query: token id plus a soft vector or a hard label."""

    x: int
    probs: np.ndarray | None = None
    label: int | None = None

    def __post_init__(self):
        if (self.probs is None) == (self.label is None):
            raise ValueError("probe record needs exactly one of probs or label")
        object.__setattr__(self, "x", int(self.x))
        if self.probs is not None:
            object.__setattr__(self, "probs", validate_probability_vector(self.probs))
        else:
            object.__setattr__(self, "label", int(self.label))

    @property
    def is_hard(self) -> bool:
        return self.label is not None


@dataclass(frozen=True)
class DetectionParams:
    """Grid and scoring settings for detect_watermark."""

    grid_min: float = DEFAULT_GRID_MIN
    grid_max: float = DEFAULT_GRID_MAX
    grid_step: float = DEFAULT_GRID_STEP
    delta: float = DEFAULT_WINDOW_WIDTH
    f_max: float | None = None
    threshold: float = DEFAULT_THRESHOLD

    def grid(self) -> np.ndarray:
        return default_grid(self.grid_min, self.grid_max, self.grid_step)


@dataclass(frozen=True)
class DetectionReport:
    """Outcome of one detection run."""

    decision: str
    p_signal: float
    p_noise: float
    p_snr: float
    n_probes_used: int
    threshold: float
    f_w: float
    params: DetectionParams
    warning: str | None = None
    series: ProbeSeries | None = None
    spectrum: PowerSpectrum | None = None

    @property
    def positive(self) -> bool:
        return self.decision == "positive"

    def to_dict(self) -> dict:
        return {
            "decision": self.decision,
            "p_signal": self.p_signal,
            "p_noise": self.p_noise,
            "p_snr": self.p_snr,
            "n_probes_used": self.n_probes_used,
            "threshold": self.threshold,
            "f_w": self.f_w,
            "delta": self.params.delta,
            "f_max": self.params.f_max if self.params.f_max is not None else self.params.grid_max,
            "grid_min": self.params.grid_min,
            "grid_max": self.params.grid_max,
            "grid_step": self.params.grid_step,
            "warning": self.warning,
        }


def build_probe_series(key: WatermarkKey, config: WatermarkConfig, records) -> ProbeSeries:
    """Reduce probe records to (t, y) pairs for the selected tokens.

    t is the keyed phase hash; y is the target-class probability for
    soft records or the 0/1 target-class indicator for hard records.
    Duplicate tokens are kept.  Raises TooFewProbesError when fewer than
    8 records (64 when hard records are present) survive selection.
    """
    records = list(records)
    xs = np.array([r.x for r in records], dtype=np.int64)
    if xs.size == 0:
        raise TooFewProbesError("no probe records given", n_survivors=0,
                                floor=MIN_PROBES_SOFT)
    sel = hash_values(key, key.v_s, xs) <= config.tau
    kept = [r for r, keep in zip(records, sel) if keep]
    any_hard = any(r.is_hard for r in kept) if kept else any(r.is_hard for r in records)
    floor = MIN_PROBES_HARD if any_hard else MIN_PROBES_SOFT
    if len(kept) < floor:
        raise TooFewProbesError(
            f"only {len(kept)} of {len(records)} probes survive selection; need >= {floor}",
            n_survivors=len(kept), floor=floor,
        )
    t = hash_values(key, key.v_k, xs[sel])
    y = np.empty(len(kept))
    c = key.target_class
    for i, r in enumerate(kept):
        if r.is_hard:
            if not 0 <= r.label < key.m:
                raise ValueError(f"probe label {r.label} outside [0, {key.m})")
            y[i] = 1.0 if r.label == c else 0.0
        else:
            if r.probs.size != key.m:
                raise ValueError(
                    f"probe vector length {r.probs.size} does not match key m={key.m}"
                )
            y[i] = r.probs[c]
    return ProbeSeries(t=t, y=y)


def detect_watermark(key: WatermarkKey, config: WatermarkConfig, records,
                     params: DetectionParams = DetectionParams()) -> DetectionReport:
    """Full detection: series, periodogram, window score, decision.

    Too few surviving probes or a constant series never raise here; both
    come back as a negative decision with a warning flag.
    """
    try:
        series = build_probe_series(key, config, records)
    except TooFewProbesError as exc:
        return DetectionReport(
            decision="negative", p_signal=0.0, p_noise=0.0, p_snr=0.0,
            n_probes_used=exc.n_survivors, threshold=params.threshold,
            f_w=key.f_w, params=params, warning="too_few_probes",
        )
    spectrum = lomb_scargle(series, params.grid())
    snr = snr_score(spectrum, key.f_w, params.delta, params.f_max)
    decision = "positive" if snr.p_snr >= params.threshold else "negative"
    return DetectionReport(
        decision=decision, p_signal=snr.p_signal, p_noise=snr.p_noise,
        p_snr=snr.p_snr, n_probes_used=len(series), threshold=params.threshold,
        f_w=key.f_w, params=params, warning=snr.flag, series=series,
        spectrum=spectrum,
    )


def jsd_score(first, second) -> float:
    """Mean Jensen-Shannon divergence over paired probability vectors.

    Natural log; zero entries contribute zero.  Each pair scores at most
    ln 2, reached by disjoint supports.
    """
    first = list(first)
    second = list(second)
    if len(first) != len(second):
        raise ValueError(f"paired lists differ in length: {len(first)} vs {len(second)}")
    if not first:
        raise ValueError("jsd_score needs at least one pair")
    total = 0.0
    for a, b in zip(first, second):
        a = validate_probability_vector(a)
        b = validate_probability_vector(b)
        if a.size != b.size:
            raise ValueError(f"paired vectors differ in length: {a.size} vs {b.size}")
        u = 0.5 * (a + b)
        total += 0.5 * (float(rel_entr(a, u).sum()) + float(rel_entr(b, u).sum()))
    return total / len(first)


def average_precision(positive_scores, negative_scores, higher_is_positive=True) -> float:
    """Average precision of the positives in a ranked score list.

    Ties break pessimistically: equal-scored negatives rank ahead of
    positives.
    """
    pos = [float(s) for s in positive_scores]
    neg = [float(s) for s in negative_scores]
    if not pos or not neg:
        raise ValueError("average_precision needs at least one positive and one negative score")
    sign = -1.0 if higher_is_positive else 1.0
    ranked = sorted(
        [(sign * s, 1) for s in pos] + [(sign * s, 0) for s in neg]
    )
    hits = 0.0
    total = 0.0
    for rank, (_, label) in enumerate(ranked, start=1):
        if label:
            hits += 1.0
            total += hits / rank
    return total / len(pos)


def mean_average_precision(trials) -> float:
    """Mean AP over ranking trials.

    Each trial is a mapping with positive_scores, negative_scores and an
    optional higher_is_positive flag (default True).
    """
    trials = list(trials)
    if not trials:
        raise ValueError("mean_average_precision needs at least one trial")
    aps = []
    for trial in trials:
        aps.append(average_precision(
            trial["positive_scores"], trial["negative_scores"],
            trial.get("higher_is_positive", True),
        ))
    return float(np.mean(aps))


def write_probe_records(records, path) -> None:
    """Write probe records as line-oriented JSON with full-precision floats."""
    lines = []
    for r in records:
        if r.is_hard:
            lines.append(dumps_record({"x": r.x, "label": r.label}))
        else:
            lines.append(dumps_record({"x": r.x, "probs": [float(p) for p in r.probs]}))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_probe_records(path):
    """Read a probe record file; returns a list of ProbeRecord."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"probe file line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(doc, dict) or "x" not in doc:
                raise ValueError(f"probe file line {lineno}: expected an object with 'x'")
            x = doc["x"]
            if isinstance(x, bool) or not isinstance(x, int):
                raise ValueError(f"probe file line {lineno}: 'x' must be an integer")
            has_probs = "probs" in doc
            has_label = "label" in doc
            if has_probs == has_label:
                raise ValueError(
                    f"probe file line {lineno}: need exactly one of 'probs' or 'label'"
                )
            try:
                if has_probs:
                    records.append(ProbeRecord(x=x, probs=np.asarray(doc["probs"], dtype=float)))
                else:
                    label = doc["label"]
                    if isinstance(label, bool) or not isinstance(label, int):
                        raise ValueError("'label' must be an integer")
                    records.append(ProbeRecord(x=x, label=label))
            except ValueError as exc:
                raise ValueError(f"probe file line {lineno}: {exc}") from exc
    return records


def write_report(report: DetectionReport, path) -> None:
    """Write a detection report as a single JSON document."""
    atomic_write_text(path, json.dumps(report.to_dict(), indent=2) + "\n")

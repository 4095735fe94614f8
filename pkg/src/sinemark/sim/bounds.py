"""Accuracy floor verification for the watermarked output modes.

For a calibrated binary predictor with watermark level eps and selection
ratio tau, the served accuracies obey

  acc_soft >= acc_victim - tau * (0.5 + eps) * P[0.5 - eps <= p <= 0.5 + eps]
  acc_hard >= (1 - tau) * acc_victim + tau / (1 + 2 eps) * E[2 p^2 - 2 p + 1]

where p is the true conditional of the positive class.  This module
checks both floors by Monte Carlo (calibration holds by construction:
labels are drawn from p) and computes them independently by numeric
integration.
"""

from __future__ import annotations

import numpy as np
from scipy import stats
from scipy.integrate import quad

from ..errors import BoundViolationError

DEFAULT_N_SAMPLES = 100_000
DEFAULT_F_W = 16.0


class _PointMass:
    """Degenerate distribution at a single value in [0, 1]."""

    def __init__(self, value: float):
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"point mass must lie in [0, 1], got {value}")
        self.value = value

    def rvs(self, size, random_state=None):
        return np.full(size, self.value)

    def cdf(self, x):
        return np.where(np.asarray(x, dtype=float) >= self.value, 1.0, 0.0)


def make_p_dist(spec):
    """Resolve a distribution spec for the true conditional p.

    Accepts a mapping ({"name": "beta", "a":, "b":}, {"name": "uniform"},
    {"name": "point", "value":}) or any object already exposing rvs and
    cdf (frozen scipy distributions qualify).
    """
    if hasattr(spec, "rvs") and hasattr(spec, "cdf"):
        return spec
    if not isinstance(spec, dict) or "name" not in spec:
        raise ValueError("p distribution spec must be a mapping with a 'name'")
    name = spec["name"]
    if name == "beta":
        return stats.beta(float(spec["a"]), float(spec["b"]))
    if name == "uniform":
        return stats.uniform()
    if name == "point":
        return _PointMass(spec["value"])
    raise ValueError(f"unknown p distribution: {name!r}")


def _check_params(epsilon: float, tau: float) -> None:
    if not 0.0 <= epsilon <= 0.5:
        raise ValueError(f"epsilon must be in [0, 0.5], got {epsilon}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")


def theorem_bound_check(p_dist, epsilon: float, tau: float,
                        n_samples: int = DEFAULT_N_SAMPLES,
                        f_w: float = DEFAULT_F_W, seed=0,
                        raise_on_violation: bool = True) -> dict:
    """Monte Carlo check that both accuracy floors hold.

    Draws p, a label from Bernoulli(p), a phase position, and a
    selection coin per sample; serves the watermarked soft and hard
    answers; and compares the empirical accuracies against the floors
    evaluated on the same draws.  A floor is violated when the paired
    mean difference falls below minus three standard errors.
    """
    _check_params(epsilon, tau)
    if n_samples < 100:
        raise ValueError(f"n_samples must be >= 100, got {n_samples}")
    dist = make_p_dist(p_dist)
    rng = np.random.default_rng(seed)
    p = np.clip(np.asarray(dist.rvs(size=n_samples, random_state=rng), dtype=float), 0.0, 1.0)
    label = rng.random(n_samples) < p
    z = np.cos(f_w * rng.random(n_samples))
    sel = rng.random(n_samples) < tau

    denom = 1.0 + 2.0 * epsilon
    victim_pred = p > 0.5
    acc_victim_i = (victim_pred == label).astype(float)

    y1 = np.where(sel, (p + epsilon * (1.0 + z)) / denom, p)
    soft_pred = y1 > 0.5
    acc_soft_i = (soft_pred == label).astype(float)

    hard_pred = np.where(sel, rng.random(n_samples) < y1, victim_pred)
    acc_hard_i = (hard_pred == label).astype(float)

    in_band = (np.abs(p - 0.5) <= epsilon).astype(float)
    bound_soft_i = acc_victim_i - tau * (0.5 + epsilon) * in_band
    bound_hard_i = (1.0 - tau) * acc_victim_i + (tau / denom) * (2.0 * p * p - 2.0 * p + 1.0)

    def _margin(emp, bound):
        diff = emp - bound
        return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n_samples))

    margin_soft, se_soft = _margin(acc_soft_i, bound_soft_i)
    margin_hard, se_hard = _margin(acc_hard_i, bound_hard_i)

    result = {
        "acc_victim": float(acc_victim_i.mean()),
        "acc_soft_emp": float(acc_soft_i.mean()),
        "acc_hard_emp": float(acc_hard_i.mean()),
        "bound_soft": float(bound_soft_i.mean()),
        "bound_hard": float(bound_hard_i.mean()),
        "margin_soft": margin_soft,
        "margin_hard": margin_hard,
        "se_soft": se_soft,
        "se_hard": se_hard,
        "n_samples": int(n_samples),
        "epsilon": float(epsilon),
        "tau": float(tau),
    }
    if raise_on_violation:
        for mode, margin, se in (("soft", margin_soft, se_soft),
                                 ("hard", margin_hard, se_hard)):
            if margin < -3.0 * se:
                raise BoundViolationError(
                    f"{mode} accuracy floor violated: "
                    f"acc_victim={result['acc_victim']:.6f} "
                    f"acc_soft_emp={result['acc_soft_emp']:.6f} "
                    f"acc_hard_emp={result['acc_hard_emp']:.6f} "
                    f"bound_soft={result['bound_soft']:.6f} "
                    f"bound_hard={result['bound_hard']:.6f} "
                    f"(margin {margin:.6f} < -3 x {se:.6f})"
                )
    return result


def accuracy_bounds_quadrature(p_dist, epsilon: float, tau: float) -> dict:
    """Both floors by numeric integration, independent of any sampling.

    Continuous specs must expose pdf and cdf and are assumed atomless;
    the point-mass spec is evaluated in closed form.
    """
    _check_params(epsilon, tau)
    dist = make_p_dist(p_dist)
    denom = 1.0 + 2.0 * epsilon
    if isinstance(dist, _PointMass):
        v = dist.value
        acc_victim = max(v, 1.0 - v)
        band = 1.0 if abs(v - 0.5) <= epsilon else 0.0
        e2 = 2.0 * v * v - 2.0 * v + 1.0
    else:
        if not hasattr(dist, "pdf"):
            raise ValueError("quadrature needs a pdf on the distribution spec")
        lo, _ = quad(lambda p: (1.0 - p) * dist.pdf(p), 0.0, 0.5)
        hi, _ = quad(lambda p: p * dist.pdf(p), 0.5, 1.0)
        acc_victim = lo + hi
        band = float(dist.cdf(0.5 + epsilon) - dist.cdf(0.5 - epsilon))
        e2, _ = quad(lambda p: (2.0 * p * p - 2.0 * p + 1.0) * dist.pdf(p), 0.0, 1.0)
    return {
        "acc_victim": float(acc_victim),
        "band_prob": float(band),
        "second_moment_term": float(e2),
        "bound_soft": float(acc_victim - tau * (0.5 + epsilon) * band),
        "bound_hard": float((1.0 - tau) * acc_victim + (tau / denom) * e2),
    }

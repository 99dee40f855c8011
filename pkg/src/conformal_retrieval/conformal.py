'''Split-conformal prediction bands over scalar scores with binary labels.

A band is fitted once on labeled calibration scores and then reused: it
min-max normalizes a raw score into [0, 1], measures nonconformity as the
absolute residual against a binary label, and converts fresh scores into
set-valued predictions or a scalar confidence in (roughly) [0, 1].
'''

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "LabeledScore",
    "PredictionBand",
    "fit_band",
    "fit_band_arrays",
    "normalize_score",
    "calibration_score",
    "band_set",
    "conformal_probability",
    "brute_force_probability",
]


class LabeledScore(NamedTuple):
    '''One calibration observation: a raw score and its binary label.'''

    theta: float
    y: int


@dataclass(frozen=True)
class PredictionBand:
    '''Frozen calibration state for one score distribution.

    Attributes:
        theta_min: Smallest raw score seen during calibration.
        theta_max: Largest raw score seen during calibration.
        sorted_gamma: Ascending nonconformity scores, all inside [0, 1].
    '''

    theta_min: float
    theta_max: float
    sorted_gamma: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.sorted_gamma, dtype=np.float64)
        object.__setattr__(self, "sorted_gamma", gamma)
        if gamma.ndim != 1 or gamma.size < 2:
            raise ValueError("a band needs at least 2 nonconformity scores")
        if not np.isfinite(gamma).all():
            raise ValueError("nonconformity scores must be finite")
        if gamma.min() < 0.0 or gamma.max() > 1.0:
            raise ValueError("nonconformity scores must lie in [0, 1]")
        if np.any(np.diff(gamma) < 0):
            raise ValueError("nonconformity scores must be sorted ascending")
        if not (
            math.isfinite(self.theta_min)
            and math.isfinite(self.theta_max)
            and self.theta_min < self.theta_max
        ):
            raise ValueError("score range must be finite with theta_min < theta_max")

    @property
    def size(self) -> int:
        return int(self.sorted_gamma.size)


def fit_band(pairs) -> PredictionBand:
    '''Fit a prediction band on labeled calibration scores.

    Args:
        pairs: Iterable of (theta, y) with y in {0, 1}. At least two pairs,
            and the thetas must not all be equal.

    Returns:
        The fitted PredictionBand.
    '''
    data = np.asarray([(float(t), int(y)) for t, y in pairs], dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("fit_band needs at least 2 calibration pairs")
    return fit_band_arrays(data[:, 0], data[:, 1])


def fit_band_arrays(theta, y) -> PredictionBand:
    '''Array form of fit_band: scores and 0/1 labels as parallel 1-d arrays.'''
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if theta.shape != y.shape or theta.ndim != 1 or theta.size < 2:
        raise ValueError("fit_band needs at least 2 calibration pairs")
    if not np.isfinite(theta).all():
        raise ValueError("calibration scores must be finite")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    tmin, tmax = float(theta.min()), float(theta.max())
    if not tmin < tmax:
        raise ValueError("degenerate score range: all calibration scores equal")
    theta_tilde = (theta - tmin) / (tmax - tmin)
    gamma = np.abs(y - theta_tilde)
    gamma.sort()
    return PredictionBand(tmin, tmax, gamma)


def normalize_score(band: PredictionBand, theta):
    '''Min-max normalize a raw score into [0, 1], clamping outside the range.'''
    span = band.theta_max - band.theta_min
    out = np.clip((np.asarray(theta, dtype=np.float64) - band.theta_min) / span, 0.0, 1.0)
    return float(out) if np.ndim(theta) == 0 else out


def calibration_score(theta_tilde, y):
    '''Nonconformity of a normalized score against a binary label.'''
    return abs(y - theta_tilde)


def band_set(band: PredictionBand, theta, epsilon: float) -> set:
    '''Set-valued prediction at miscoverage level epsilon.

    The threshold is the ceil((m+1)(1-epsilon))-th smallest nonconformity
    score; an index past the end means an unbounded threshold (both labels),
    an index of zero or less means the empty set.
    '''
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    m = band.size
    index = math.ceil((m + 1) * (1.0 - epsilon))
    if index <= 0:
        return set()
    alpha = math.inf if index > m else float(band.sorted_gamma[index - 1])
    theta_tilde = normalize_score(band, theta)
    return {label for label in (0, 1) if abs(label - theta_tilde) <= alpha}


def conformal_probability(band: PredictionBand, theta):
    '''Calibrated confidence that the label is 1 at the given raw score.

    Counts calibration nonconformity scores strictly below the normalized
    score and divides by m + 1. Monotone non-decreasing in theta, never
    reaching 1. Accepts scalars or arrays.
    '''
    theta_tilde = normalize_score(band, theta)
    count = np.searchsorted(band.sorted_gamma, theta_tilde, side="left")
    out = count / (band.size + 1)
    return float(out) if np.ndim(theta) == 0 else out


def brute_force_probability(band: PredictionBand, theta, grid_step: float = 1e-4):
    '''Grid-sweep reference for conformal_probability.

    Sweeps epsilon over a uniform grid and returns 1 minus the smallest
    epsilon whose prediction set is exactly {1}; 0.0 if no grid point gets
    there. Intentionally re-derives the thresholds instead of reusing
    conformal_probability.
    '''
    if not 0.0 < grid_step <= 1.0:
        raise ValueError("grid_step must lie in (0, 1]")
    m = band.size
    eps = np.linspace(0.0, 1.0, int(round(1.0 / grid_step)) + 1)
    ranks = np.ceil((m + 1) * (1.0 - eps))
    alpha = np.full(eps.shape, np.inf)
    inside = (ranks >= 1) & (ranks <= m)
    alpha[inside] = band.sorted_gamma[ranks[inside].astype(int) - 1]
    alpha[ranks < 1] = -np.inf  # empty set by convention
    theta_tilde = normalize_score(band, theta)
    has_zero = theta_tilde <= alpha
    has_one = (1.0 - theta_tilde) <= alpha
    exactly_one = has_one & ~has_zero
    if not exactly_one.any():
        return 0.0
    return float(1.0 - eps[int(np.argmax(exactly_one))])

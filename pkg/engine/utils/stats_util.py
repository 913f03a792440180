import math
from typing import Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

LOG2 = math.log(2.0)


def log_mean_exp(log_weights: np.ndarray, values: np.ndarray, axis=-1) -> np.ndarray:
    """
    log( sum w e^x / sum w ) with w = exp(log_weights), max-shifted.

    Dividing by sum w instead of assuming it is one makes a constant x return
    exactly that constant.
    """
    values = np.asarray(values, dtype=float)
    shift = np.max(values, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    num = logsumexp(log_weights + (values - shift), axis=axis)
    den = logsumexp(log_weights + np.zeros_like(values), axis=axis)
    return num - den + np.squeeze(shift, axis=axis)


def log_av_exp(a_plus: np.ndarray, a_minus: np.ndarray) -> np.ndarray:
    """log Av exp A(eps) over eps = +-1; equal arguments are returned unchanged"""
    a_plus = np.asarray(a_plus, dtype=float)
    a_minus = np.asarray(a_minus, dtype=float)
    return np.where(a_plus == a_minus, a_plus, np.logaddexp(a_plus, a_minus) - LOG2)


def mean_and_se(values: Sequence[float]) -> Tuple[float, float]:
    """Sample mean and its standard error, reduced in array order"""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        return float("nan"), float("nan")
    mean = float(np.mean(values))
    if n == 1:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / math.sqrt(n))


def two_sample_z(a: Sequence[float], b: Sequence[float]) -> float:
    """z-score of mean(a) - mean(b) for independent samples"""
    mean_a, se_a = mean_and_se(a)
    mean_b, se_b = mean_and_se(b)
    se = math.hypot(se_a, se_b)
    if se == 0.0:
        return 0.0 if mean_a == mean_b else math.inf
    return (mean_a - mean_b) / se


def z_against(value: float, std_error: float, target: float, budget: float = 0.0) -> float:
    """z-score of an estimate against a target after removing an allowed bias budget"""
    gap = max(abs(value - target) - budget, 0.0)
    if std_error == 0.0:
        return 0.0 if gap == 0.0 else math.inf
    return gap / std_error


def correlation_and_se(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """Pearson correlation with the large-sample standard error under independence"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.std() == 0.0 or y.std() == 0.0:
        return 0.0, 1.0 / math.sqrt(max(x.size, 1))
    rho = float(np.corrcoef(x, y)[0, 1])
    return rho, 1.0 / math.sqrt(x.size)


def bernoulli_se(p: float, n: int) -> float:
    if n <= 1:
        return 0.0
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)

"""Resampling calibration: the conditional randomization test itself."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .._errors import NumericalError, ValidationError
from ..data import ConditionalLaw, resample_columns
from ..distill import Distillation
from ..lasso import LassoConfig
from .outcome import TestOutcome, rank_p_value
from .statistics import OcrtStatistic, d0_batch, dI_batch, inner_batch

# columns drawn per chunk; draws are consumed from the stream in order, so
# the chunk size does not change the result
CHUNK = 512


class BatchStatistic:
    """Wrap a vectorized ``f(y, xs, context)`` as a statistic."""

    def __init__(self, fn, name):
        self.fn = fn
        self.name = name

    def __call__(self, y, x, context=None):
        return float(self.fn(y, np.asarray(x, dtype=float)[:, None], context)[0])

    def batch(self, y, xs, context=None):
        return self.fn(y, xs, context)


D0 = BatchStatistic(d0_batch, "d0")
DI = BatchStatistic(dI_batch, "dI")
INNER = BatchStatistic(inner_batch, "d0_inner")


def _evaluate(statistic, y, xs, context, offset):
    batch = getattr(statistic, "batch", None)
    try:
        if batch is not None:
            return np.asarray(batch(y, xs, context), dtype=float)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        raise NumericalError(
            f"statistic failed on resamples {offset}..{offset + xs.shape[1] - 1}: {exc}"
        ) from exc
    out = np.empty(xs.shape[1])
    for m in range(xs.shape[1]):
        try:
            out[m] = statistic(y, xs[:, m], context)
        except Exception as exc:
            raise NumericalError(
                f"statistic failed on resample {offset + m}: {exc}") from exc
    return out


def resampled_statistics(statistic, y, Z, law: ConditionalLaw, M: int, rng,
                         context=None) -> np.ndarray:
    """Statistic values on ``M`` fresh draws of x from its conditional law."""
    if M < 1 or int(M) != M:
        raise ValidationError(f"M must be a positive integer, got {M}")
    rng = np.random.default_rng(rng)
    out = np.empty(M)
    for start in range(0, M, CHUNK):
        m = min(CHUNK, M - start)
        xs = resample_columns(law, Z, m, rng)
        out[start:start + m] = _evaluate(statistic, y, xs, context, start)
    return out


def crt_p_value(statistic: Callable, y, x, Z, law: ConditionalLaw, M: int = 2000,
                rng=None, context=None, method: str | None = None) -> TestOutcome:
    """Conditional randomization test p-value.

    Parameters
    ----------
    statistic : callable
        ``statistic(y, x, context) -> float``; an optional ``batch`` attribute
        taking an ``(n, M)`` matrix of columns is used when present.
    context : object, optional
        Anything precomputed from ``(y, Z)`` and the law, typically a
        :class:`~dcrt.distill.Distillation`. It is built once by the caller and
        shared by every evaluation.

    Returns
    -------
    TestOutcome
        ``p = (1 + #{m : T(x_m) >= T(x)}) / (M + 1)``.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    t_obs = float(_evaluate(statistic, y, x[:, None], context, 0)[0]) \
        if getattr(statistic, "batch", None) is not None else float(statistic(y, x, context))
    t_res = resampled_statistics(statistic, y, Z, law, M, rng, context)
    name = method or getattr(statistic, "name", None) or getattr(statistic, "__name__", "custom")
    return TestOutcome(rank_p_value(t_obs, t_res), t_obs, f"{name}_resample", int(M))


def d0_p_value(y, x, Z, law, dist: Distillation, M=2000, rng=None) -> TestOutcome:
    return crt_p_value(D0, y, x, Z, law, M, rng, dist)


def dI_p_value(y, x, Z, law, dist: Distillation, M=2000, rng=None) -> TestOutcome:
    return crt_p_value(DI, y, x, Z, law, M, rng, dist)


def two_sided_p_value(observed, resampled) -> float:
    """``min(1, 2 min(right, left))`` with the +1 correction on each tail."""
    resampled = np.asarray(resampled, dtype=float)
    M = resampled.size
    right = (1 + np.count_nonzero(resampled >= observed)) / (M + 1)
    left = (1 + np.count_nonzero(resampled <= observed)) / (M + 1)
    return float(min(1.0, 2 * min(right, left)))


def ocrt_p_value(y, x, Z, law: ConditionalLaw, variant="original", M: int = 200,
                 rng=None, config: LassoConfig | None = None,
                 response_kind="continuous", fold_seed=0) -> TestOutcome:
    """oCRT p-value; every resample refits the cross-validated joint lasso.

    ``centered`` uses the two-sided rule, the other variants the usual
    one-sided rank rule on the absolute statistic.
    """
    stat = OcrtStatistic(y, Z, variant, response_kind, config, fold_seed)
    y = np.asarray(y, dtype=float)
    t_obs = stat(y, x)
    t_res = resampled_statistics(stat, y, Z, law, M, rng)
    p = two_sided_p_value(t_obs, t_res) if variant == "centered" else rank_p_value(t_obs, t_res)
    return TestOutcome(p, t_obs, f"ocrt_{variant}", int(M))

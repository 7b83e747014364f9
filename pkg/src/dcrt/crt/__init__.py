"""P-value engines: resampling, closed-form, oCRT variants and baselines."""

from .baselines import HoldoutFit, gcm_p_value, hrt_fit, hrt_p_value
from .outcome import STATISTIC_KINDS, TestOutcome, rank_p_value
from .quadform import QuadFormSpec, imhof_tail
from .resampling import (D0, DI, INNER, BatchStatistic, crt_p_value, d0_p_value,
                         dI_p_value, ocrt_p_value, resampled_statistics,
                         two_sided_p_value)
from .rf import d0_rf_p_value, dI_quadform, dI_rf_p_value
from .statistics import (OCRT_VARIANTS, OcrtStatistic, d0_batch, d0_statistic,
                         dI_batch, dI_statistic, inner_batch, inner_statistic,
                         ocrt_statistic)
from .transform import gauss_transform

__all__ = [
    "TestOutcome", "STATISTIC_KINDS", "rank_p_value", "QuadFormSpec", "imhof_tail",
    "crt_p_value", "d0_p_value", "dI_p_value", "ocrt_p_value", "resampled_statistics",
    "two_sided_p_value", "BatchStatistic", "D0", "DI", "INNER",
    "d0_rf_p_value", "dI_rf_p_value", "dI_quadform",
    "d0_statistic", "d0_batch", "dI_statistic", "dI_batch", "inner_statistic",
    "inner_batch", "ocrt_statistic", "OcrtStatistic", "OCRT_VARIANTS",
    "gauss_transform", "gcm_p_value", "hrt_p_value", "hrt_fit", "HoldoutFit",
]

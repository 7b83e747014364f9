from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

STATISTIC_KINDS = ("d0", "dI", "ocrt_lasso", "ocrt_lasso_no_soft",
                   "ocrt_lasso_centered", "custom")


@dataclass(frozen=True)
class TestOutcome:
    """A p-value with the statistic it came from.

    ``M_used`` is the number of resamples, 0 for closed-form calibrations.
    """

    __test__ = False  # not a pytest class

    p_value: float
    statistic: float
    method: str
    M_used: int = 0
    variable: str | None = None

    def labelled(self, name: str) -> "TestOutcome":
        return replace(self, variable=name)

    def to_dict(self) -> dict:
        return {"variable": self.variable, "p_value": self.p_value,
                "statistic": self.statistic, "method": self.method, "M": self.M_used}


def rank_p_value(observed, resampled) -> float:
    """``(1 + #{T_m >= T}) / (M + 1)``."""
    resampled = np.asarray(resampled, dtype=float)
    return float((1 + np.count_nonzero(resampled >= observed)) / (resampled.size + 1))

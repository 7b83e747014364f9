"""Reference methods: the generalized covariance measure and the holdout
randomization test."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .._errors import NumericalError, ValidationError
from ..data import ConditionalLaw, resample_columns
from ..distill import Distillation
from ..lasso import LassoConfig, LassoFit, cv_lasso, loss_for
from .outcome import TestOutcome, rank_p_value

TINY = np.finfo(float).tiny


def gcm_p_value(y, x, dist: Distillation) -> TestOutcome:
    """Asymptotic normal test on the mean product of the two residuals.

    ``z = sqrt(n) mean(R) / sd(R)`` with ``R_i = (x_i - d_x,i)(y_i - d_y,i)``
    and the population sd.
    """
    R = (np.asarray(x, dtype=float) - dist.d_x) * dist.residual(y)
    n = R.shape[0]
    if n < 3:
        raise ValidationError("the covariance measure needs at least 3 observations")
    sd = float(np.std(R))
    if not sd > 1e-14 * max(1.0, float(np.max(np.abs(R)))):
        raise NumericalError("residual products have zero spread; z is undefined")
    z = float(np.sqrt(n) * R.mean() / sd)
    return TestOutcome(float(max(2 * norm.sf(abs(z)), TINY)), z, "gcm", 0)


def _risk(kind, y, eta):
    if kind == "binary":
        return np.sum(np.logaddexp(0.0, eta) - y[:, None] * eta, axis=0)
    return np.sum((y[:, None] - eta) ** 2, axis=0)


@dataclass(frozen=True, eq=False)
class HoldoutFit:
    """Lasso fitted on one half of the data, evaluated on the other."""

    fit: LassoFit
    test: np.ndarray
    train: np.ndarray
    response_kind: str

    def risk(self, y, X) -> float:
        Xt = np.asarray(X, dtype=float)[self.test]
        eta = self.fit.predict(Xt)[:, None]
        return float(_risk(self.response_kind, np.asarray(y, dtype=float)[self.test], eta)[0])

    def p_value(self, y, X, j: int, law: ConditionalLaw, M: int, rng) -> TestOutcome:
        """Rank p-value for column ``j`` from ``M`` held-out resamples.

        The statistic is minus the held-out risk, so a resample counts
        against the observed column when its risk is no larger.
        """
        y = np.asarray(y, dtype=float)[self.test]
        X = np.asarray(X, dtype=float)[self.test]
        beta = self.fit.beta
        base = self.fit.intercept + X @ beta
        observed = float(_risk(self.response_kind, y, base[:, None])[0])
        if beta[j] == 0:
            # resampling cannot change the predictions
            return TestOutcome(1.0, observed, "hrt", int(M))
        Z = np.delete(X, j, axis=1)
        xs = resample_columns(law, Z, M, rng)
        eta = (base - X[:, j] * beta[j])[:, None] + xs * beta[j]
        res = _risk(self.response_kind, y, eta)
        return TestOutcome(rank_p_value(-observed, -res), observed, "hrt", int(M))


def hrt_fit(y, X, rng=None, split: float = 0.5, response_kind="continuous",
            config: LassoConfig | None = None) -> HoldoutFit:
    """Seeded split; cross-validated lasso on the first part."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n = y.shape[0]
    if n < 4:
        raise ValidationError("the holdout test needs at least 4 observations")
    if not 0 < split < 1:
        raise ValidationError("split fraction must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    n1 = min(max(int(round(n * split)), 2), n - 2)
    train, test = np.sort(perm[:n1]), np.sort(perm[n1:])
    config = config or LassoConfig()
    K = min(config.n_folds, n1)
    cv = cv_lasso(X[train], y[train], loss_for(response_kind), replace(config, n_folds=K),
                  rng=int(rng.integers(2 ** 32)))
    return HoldoutFit(cv.selected, test, train, response_kind)


def hrt_p_value(y, j: int, X, law: ConditionalLaw, M: int = 2000, rng=None,
                split: float = 0.5, response_kind="continuous",
                config: LassoConfig | None = None) -> TestOutcome:
    """Holdout randomization test for column ``j``.

    The split, the fit and the resamples all derive from ``rng``.
    """
    rng = np.random.default_rng(rng)
    hold = hrt_fit(y, X, rng, split, response_kind, config)
    return hold.p_value(y, X, j, law, M, rng)


"""Gaussian transformation of non-Gaussian conditional laws.

Each observation is pushed through its own conditional CDF and then through
``sigma_i * Phi^{-1}``. Under the null the output is N(0, sigma_i^2) and
independent of Z, which is what the closed-form calibrations need. Discrete
laws are randomized uniformly within the jump of the CDF.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import ndtri

from .._errors import ValidationError
from ..data import ConditionalLaw

CLIP = 1e-12


def _clip(v):
    c = np.clip(v, CLIP, 1 - CLIP)
    if np.any(c != v):
        warnings.warn(f"{np.count_nonzero(c != v)} CDF values saturated and were clipped",
                      RuntimeWarning, stacklevel=3)
    return c


def gauss_transform(x, law: ConditionalLaw, Z, rng=None):
    """Map ``x`` to Gaussian scores under its conditional law given ``Z``.

    Returns
    -------
    u : (n,) array
        ``sigma_i * Phi^{-1}(V_i)`` where ``V_i`` is the conditional CDF (or
        a uniform draw within its jump for discrete laws).
    sigma : (n,) array
        Per-row standard deviations used.
    """
    x = np.asarray(x, dtype=float)
    loc = law.location(Z)
    n = loc.shape[0]
    if x.shape != (n,):
        raise ValidationError(f"x has shape {x.shape}, expected ({n},)")
    sigma = law.row_sigma(n)
    if law.family == "gaussian":
        # already N(loc, sigma^2): the transformation is the identity on x - loc
        return x - loc, sigma
    if law.family == "continuous":
        v = _clip(np.asarray(law.noise.cdf(x - loc), dtype=float))
    else:
        eps = x - loc
        support = law.support
        k = np.searchsorted(support, eps)
        k = np.minimum(k, support.size - 1)
        hit = np.isclose(support[k], eps, rtol=1e-9, atol=1e-12)
        k_lo = np.maximum(k - 1, 0)
        hit_lo = np.isclose(support[k_lo], eps, rtol=1e-9, atol=1e-12)
        k = np.where(hit, k, k_lo)
        if not np.all(hit | hit_lo):
            i = int(np.flatnonzero(~(hit | hit_lo))[0])
            raise ValidationError(f"observation {i} is outside the support of its law")
        pmf = np.broadcast_to(law.pmf, (n, support.size))
        cum = np.cumsum(pmf, axis=1)
        hi = cum[np.arange(n), k]
        lo = hi - pmf[np.arange(n), k]
        u = np.random.default_rng(rng).random(n)
        v = _clip(lo + (hi - lo) * u)
    return sigma * ndtri(v), sigma


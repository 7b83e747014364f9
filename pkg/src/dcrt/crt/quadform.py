"""Tail probabilities of weighted sums of independent chi-square(1) variables.

Uses the Imhof inversion formula

    P(Q > t) = 1/2 + (1/pi) * int_0^inf sin(theta(u)) / (u rho(u)) du,

with theta(u) = sum(arctan(l_j u))/2 - t u/2 and
rho(u) = prod(1 + l_j^2 u^2)^(1/4). The integral is split at a finite point;
the oscillating tail is handed to QUADPACK's Fourier-integral routine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .._errors import NumericalError, ValidationError

P_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class QuadFormSpec:
    """Weights (sorted descending, at least one positive) and an observed value."""

    weights: np.ndarray
    observed: float

    def __post_init__(self):
        w = np.sort(np.asarray(self.weights, dtype=float).ravel())[::-1]
        if w.size == 0 or not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be finite and nonnegative")
        if not w[0] > 0:
            raise ValidationError("at least one weight must be positive")
        if not (np.isfinite(self.observed) and self.observed >= 0):
            raise ValidationError("observed value must be finite and nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "observed", float(self.observed))


def _tail(lam, t, atol):
    def a(u):
        return 0.5 * np.sum(np.arctan(lam * u))

    def rho_u(u):
        return u * np.exp(0.25 * np.sum(np.log1p((lam * u) ** 2)))

    def f(u):
        if u == 0.0:
            return 0.5 * (lam.sum() - t)
        return np.sin(a(u) - 0.5 * t * u) / rho_u(u)

    # a few oscillations of the t-term in the finite part, at least one unit
    split = max(1.0, 8 * np.pi / t)
    head, err_h = integrate.quad(f, 0.0, split, limit=2000, epsabs=atol / 4, epsrel=0.0)
    w = 0.5 * t
    c, err_c = integrate.quad(lambda u: np.sin(a(u)) / rho_u(u), split, np.inf,
                              weight="cos", wvar=w, limlst=200, epsabs=atol / 4)
    s, err_s = integrate.quad(lambda u: np.cos(a(u)) / rho_u(u), split, np.inf,
                              weight="sin", wvar=w, limlst=200, epsabs=atol / 4)
    # sin(a - w u) = sin(a) cos(w u) - cos(a) sin(w u)
    value = 0.5 + (head + c - s) / np.pi
    return value, (err_h + err_c + err_s) / np.pi


def imhof_tail(weights, t=None, atol: float = 1e-6) -> float:
    """``P(sum_j w_j chi2_1 >= t)`` for nonnegative weights.

    ``weights`` may also be a :class:`QuadFormSpec`, in which case ``t`` is
    taken from it. The result is clipped to ``[1e-12, 1]``.
    """
    spec = weights if isinstance(weights, QuadFormSpec) else QuadFormSpec(weights, t)
    lam, t = spec.weights, spec.observed
    if t <= 0:
        return 1.0
    # scale invariance: normalize by the largest weight
    scale = lam[0]
    lam = lam[lam > 0] / scale
    t = t / scale
    with np.errstate(all="ignore"):
        value, err = _tail(lam, t, atol)
    if not np.isfinite(value) or err > 1e2 * atol:
        raise NumericalError(
            f"quadrature for the weighted chi-square tail did not converge "
            f"(residual bound {err:.2e})")
    return float(np.clip(value, P_FLOOR, 1.0))

"""Sampling distribution of the sample multivariate coefficient of variation.

For a subgroup of ``n`` draws from a ``p``-variate normal with MCV ``gamma``,
the statistic

    F = n (n - p) / ((n - 1) p gamma_hat**2)

follows a noncentral F distribution with ``p`` and ``n - p`` degrees of
freedom and noncentrality ``n / gamma**2``.  Everything in this module is
built on that identity.

The noncentral F CDF is evaluated as a Poisson mixture of regularized
incomplete beta functions.  Poisson weights are generated by ratio
recurrence from the modal index and normalised against the exact Poisson
tail masses, and the beta terms are obtained from a single seed evaluation
by the downward recurrence

    I_y(a + k, b) = I_y(a + k + 1, b) + y**(a+k) (1-y)**b / ((a+k) B(a+k, b)),

which only ever adds positive quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ArgumentError, NumericalError

__all__ = [
    "ChartParams",
    "NoncentralFParams",
    "ShiftedDelta",
    "reg_inc_beta",
    "ncf_cdf",
    "ncf_quantile",
    "mcv_cdf",
    "mcv_quantile",
    "delta_of",
    "poisson_window",
]

#: Target Poisson mass captured by the mixture window.
MIXTURE_MASS = 1.0 - 1e-12
#: Hard cap on the number of mixture terms.
MAX_TERMS = 20000
#: Below this modal index the window always extends down to j = 0.
FULL_LOWER_TAIL_MODE = 10000

QUANTILE_MAX_ITER = 200
QUANTILE_REL_WIDTH = 1e-12
QUANTILE_CDF_TOL = 1e-10


def _check_finite(name, value):
    if not isinstance(value, (int, float, np.integer, np.floating)) or isinstance(value, bool):
        raise ArgumentError(f"{name} must be a real number, got {value!r}")
    if not math.isfinite(value):
        raise ArgumentError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class ChartParams:
    """Process context shared by every chart: subgroup size, dimension, in-control MCV."""

    n: int
    p_dim: int
    gamma0: float

    def __post_init__(self):
        for name in ("n", "p_dim"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ArgumentError(f"{name} must be an integer, got {value!r}")
        if self.p_dim < 1:
            raise ArgumentError(f"p_dim must be >= 1, got {self.p_dim}")
        if self.n < 2:
            raise ArgumentError(f"n must be >= 2, got {self.n}")
        if self.n <= self.p_dim:
            raise ArgumentError(
                f"n must exceed p_dim (n={self.n}, p_dim={self.p_dim}); "
                "the sample covariance matrix would be singular"
            )
        _check_finite("gamma0", self.gamma0)
        if self.gamma0 <= 0:
            raise ArgumentError(f"gamma0 must be > 0, got {self.gamma0}")

    @property
    def delta0(self) -> float:
        """In-control noncentrality ``n / gamma0**2``."""
        return self.n / self.gamma0**2

    @property
    def f_scale(self) -> float:
        """Constant ``n (n - p) / ((n - 1) p)`` linking gamma_hat to the F statistic."""
        n, p = self.n, self.p_dim
        return n * (n - p) / ((n - 1) * p)


@dataclass(frozen=True)
class NoncentralFParams:
    d1: float
    d2: float
    lam: float = 0.0

    def __post_init__(self):
        for name in ("d1", "d2", "lam"):
            _check_finite(name, getattr(self, name))
        if self.d1 <= 0 or self.d2 <= 0:
            raise ArgumentError(f"degrees of freedom must be > 0, got ({self.d1}, {self.d2})")
        if self.lam < 0:
            raise ArgumentError(f"noncentrality must be >= 0, got {self.lam}")

    @classmethod
    def for_chart(cls, params: ChartParams, delta: float) -> "NoncentralFParams":
        return cls(float(params.p_dim), float(params.n - params.p_dim), float(delta))


@dataclass(frozen=True)
class ShiftedDelta:
    """Noncentrality after a multiplicative shift ``gamma1 = tau * gamma0``."""

    delta1: float
    tau: float
    gamma1: float


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    for name, value in (("x", x), ("a", a), ("b", b)):
        _check_finite(name, value)
    if not 0.0 <= x <= 1.0:
        raise ArgumentError(f"x must lie in [0, 1], got {x}")
    if a <= 0 or b <= 0:
        raise ArgumentError(f"a and b must be > 0, got a={a}, b={b}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    return min(1.0, max(0.0, float(special.betainc(a, b, x))))


def poisson_window(mu: float) -> tuple[int, np.ndarray]:
    """Index range and weights of the Poisson(mu) mixture.

    Returns ``(lo, weights)`` where ``weights[i]`` is ``P(J = lo + i)``.
    The window starts at the modal index and grows until it holds at least
    ``MIXTURE_MASS`` of the distribution or reaches ``MAX_TERMS`` terms.
    """
    mode = int(math.floor(mu))
    spread = int(math.ceil(12.0 * math.sqrt(mu) + 30.0))
    while True:
        lo = 0 if mode <= FULL_LOWER_TAIL_MODE else max(0, mode - spread)
        hi = mode + spread
        if hi - lo + 1 > MAX_TERMS:
            excess = hi - lo + 1 - MAX_TERMS
            hi -= excess // 2
            lo = min(mode, lo + excess - excess // 2)
        # pdtr(k, mu) = P(J <= k), pdtrc(k, mu) = P(J > k)
        lower_tail = float(special.pdtr(lo - 1, mu)) if lo > 0 else 0.0
        upper_tail = float(special.pdtrc(hi, mu))
        mass = 1.0 - lower_tail - upper_tail
        if mass >= MIXTURE_MASS or hi - lo + 1 >= MAX_TERMS:
            break
        spread *= 2

    idx = np.arange(lo, hi + 1, dtype=float)
    # ratio recurrence outward from the mode: w(j+1)/w(j) = mu/(j+1)
    m = mode - lo
    rel = np.empty(idx.size)
    rel[m] = 1.0
    if m + 1 < idx.size:
        rel[m + 1:] = np.cumprod(mu / idx[m + 1:])
    if m > 0:
        rel[:m] = np.cumprod((idx[1:m + 1] / mu)[::-1])[::-1]
    weights = rel * (mass / rel.sum())
    return lo, weights


def _ncf_cdf_unchecked(x: float, d1: float, d2: float, lam: float) -> float:
    if x <= 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    y = d1 * x / (d1 * x + d2)
    a, b = 0.5 * d1, 0.5 * d2
    if y >= 1.0:
        return 1.0
    if lam == 0.0:
        return min(1.0, max(0.0, float(special.betainc(a, b, y))))

    lo, weights = poisson_window(0.5 * lam)
    hi = lo + weights.size - 1
    seed = float(special.betainc(a + hi, b, y))
    if weights.size > 1:
        k = a + np.arange(lo, hi, dtype=float)
        log_terms = (
            k * math.log(y) + b * math.log1p(-y) - np.log(k) - special.betaln(k, b)
        )
        terms = np.exp(log_terms)
        betas = np.empty(weights.size)
        betas[-1] = seed
        betas[:-1] = seed + np.cumsum(terms[::-1])[::-1]
    else:
        betas = np.array([seed])
    np.clip(betas, 0.0, 1.0, out=betas)
    total = float(np.dot(weights, betas))
    return min(1.0, max(0.0, total))


def ncf_cdf(x: float, params: NoncentralFParams) -> float:
    """CDF of the noncentral F distribution, ``P(F <= x)``."""
    if isinstance(x, bool) or not isinstance(x, (int, float, np.integer, np.floating)):
        raise ArgumentError(f"x must be a real number, got {x!r}")
    if math.isnan(x) or x < 0:
        raise ArgumentError(f"x must be >= 0, got {x}")
    return _ncf_cdf_unchecked(float(x), params.d1, params.d2, params.lam)


def _initial_guess(params: NoncentralFParams) -> float:
    guess = (params.d1 + params.lam) / params.d1
    if params.d2 > 2:
        guess *= params.d2 / (params.d2 - 2)
    return guess


def ncf_quantile(alpha: float, params: NoncentralFParams) -> float:
    """Inverse CDF of the noncentral F distribution.

    Geometric bracketing from the distribution mean followed by bisection
    on the log scale.  Raises :class:`NumericalError` (carrying the last
    bracket) if the bracket cannot be tightened within the iteration cap.
    """
    _check_finite("alpha", alpha)
    if not 0.0 < alpha < 1.0:
        raise ArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    d1, d2, lam = params.d1, params.d2, params.lam

    def cdf(t):
        return _ncf_cdf_unchecked(t, d1, d2, lam)

    lo = hi = _initial_guess(params)
    if cdf(hi) < alpha:
        while True:
            lo, hi = hi, hi * 2.0
            if math.isinf(hi):
                raise NumericalError("quantile bracket overflowed", bracket=(lo, hi))
            if cdf(hi) >= alpha:
                break
    else:
        while True:
            lo, hi = lo * 0.5, lo
            if lo == 0.0:
                raise NumericalError("quantile bracket underflowed", bracket=(lo, hi))
            if cdf(lo) < alpha:
                break

    for _ in range(QUANTILE_MAX_ITER):
        if hi / lo - 1.0 <= QUANTILE_REL_WIDTH:
            break
        mid = math.sqrt(lo * hi)
        if cdf(mid) < alpha:
            lo = mid
        else:
            hi = mid
    else:
        raise NumericalError(
            f"quantile bisection did not converge in {QUANTILE_MAX_ITER} iterations",
            bracket=(lo, hi),
        )

    x = math.sqrt(lo * hi)
    if abs(cdf(x) - alpha) > QUANTILE_CDF_TOL:
        # the CDF jumps across the final bracket; report whichever end is closer
        x = min((lo, hi), key=lambda t: abs(cdf(t) - alpha))
        if abs(cdf(x) - alpha) > QUANTILE_CDF_TOL:
            raise NumericalError(
                f"no x with |cdf(x) - {alpha}| <= {QUANTILE_CDF_TOL}", bracket=(lo, hi)
            )
    return x


def mcv_cdf(x: float, params: ChartParams, delta: float) -> float:
    """CDF of the sample MCV for subgroups of size ``n`` in ``p_dim`` variables.

    ``delta`` is the noncentrality ``n / gamma**2`` of the true MCV.
    """
    _check_finite("x", x)
    if x <= 0:
        raise ArgumentError(f"x must be > 0, got {x}")
    f_params = NoncentralFParams.for_chart(params, delta)
    g = params.f_scale / (x * x)
    return min(1.0, max(0.0, 1.0 - _ncf_cdf_unchecked(g, f_params.d1, f_params.d2, f_params.lam)))


def mcv_quantile(alpha: float, params: ChartParams, delta: float) -> float:
    _check_finite("alpha", alpha)
    if not 0.0 < alpha < 1.0:
        raise ArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    f_params = NoncentralFParams.for_chart(params, delta)
    return math.sqrt(params.f_scale / ncf_quantile(1.0 - alpha, f_params))


def delta_of(params: ChartParams, tau: float) -> ShiftedDelta:
    """Noncentrality after the in-control MCV is multiplied by ``tau``."""
    _check_finite("tau", tau)
    if tau <= 0:
        raise ArgumentError(f"tau must be > 0, got {tau}")
    gamma1 = tau * params.gamma0
    return ShiftedDelta(delta1=params.n / gamma1**2, tau=float(tau), gamma1=gamma1)

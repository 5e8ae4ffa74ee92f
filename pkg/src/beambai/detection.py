"""Group presence test for concurrent beam exploration.

Numerics (generalized Marcum Q, non-central chi-square CDF), the per-group
hypothesis parameters, the energy-detector decision rule and its analytic
miss / false-alarm probabilities, plus the bound constants used by
:func:`beambai.bounds.bound_cbe`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


class RegimeError(ValueError):
    """Raised when a bound is evaluated outside the regime it was derived for."""


def _check_finite(**kwargs):
    for name, value in kwargs.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value!r}")


def _poisson_window(lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices and log-weights of Poisson(lam) covering all but ~1e-20 of the mass."""
    width = 10.0 * math.sqrt(lam) + 40.0
    lo = max(0, int(math.floor(lam - width)))
    hi = int(math.ceil(lam + width))
    k = np.arange(lo, hi + 1, dtype=float)
    log_w = -lam + k * math.log(lam) - special.gammaln(k + 1.0)
    return k, log_w


def _mixture(order: float, lam: float, x: float, upper: bool) -> float:
    # P(chi2_{2(order+K)} > 2x) (upper) or <= (lower), K ~ Poisson(lam)
    tail = special.gammaincc if upper else special.gammainc
    if lam == 0.0:
        return float(tail(order, x))
    k, log_w = _poisson_window(lam)
    total = float(np.sum(np.exp(log_w) * tail(order + k, x)))
    return min(1.0, max(0.0, total))


def marcum_q(order: float, a: float, b: float) -> float:
    """Generalized Marcum Q-function ``Q_order(a, b)`` for real ``order > 0``.

    Evaluated as a Poisson(a**2/2) mixture of regularized upper incomplete
    gamma functions, with the Poisson weights taken in log space and the sum
    truncated to a window around the mode.
    """
    _check_finite(order=order, a=a, b=b)
    if order <= 0 or a < 0 or b < 0:
        raise ValueError(f"need order > 0, a >= 0, b >= 0; got ({order}, {a}, {b})")
    if b == 0.0:
        return 1.0
    return _mixture(order, 0.5 * a * a, 0.5 * b * b, upper=True)


def noncentral_chi2_cdf(x: float, dof: float, noncentrality: float) -> float:
    """CDF of the non-central chi-square law, ``1 - Q_{dof/2}(sqrt(nc), sqrt(x))``.

    The lower tail is summed directly rather than as ``1 - Q`` so that small
    probabilities keep their relative accuracy.
    """
    if math.isinf(x) and x > 0:
        return 1.0
    _check_finite(x=x, dof=dof, noncentrality=noncentrality)
    if x < 0 or dof <= 0 or noncentrality < 0:
        raise ValueError(f"need x >= 0, dof > 0, nc >= 0; got ({x}, {dof}, {noncentrality})")
    if x == 0.0:
        return 0.0
    return _mixture(0.5 * dof, 0.5 * noncentrality, 0.5 * x, upper=False)


def noncentral_chi2_sf(x: float, dof: float, noncentrality: float) -> float:
    if x <= 0:
        return 1.0
    return marcum_q(0.5 * dof, math.sqrt(noncentrality), math.sqrt(x))


@dataclass(frozen=True)
class GroupHypothesisParams:
    """Gaussian laws of one group observation with/without the user, and the threshold.

    ``mu1, sigma1_sq`` describe a group containing the user's beam, ``mu0,
    sigma0_sq`` a group without it; ``gamma`` is the energy threshold applied
    to the sum of squares of ``t_group`` observations.
    """

    n_beams: int
    big_gain: float
    small_gain: float
    noise_scale: float
    t_group: int
    mu0: float
    mu1: float
    sigma0_sq: float
    sigma1_sq: float
    g_prime: float
    gamma: float

    @property
    def a1(self) -> float:
        return math.sqrt(self.t_group * self.mu1**2 / self.sigma1_sq)

    @property
    def b1(self) -> float:
        return math.sqrt(self.gamma / self.sigma1_sq)

    @property
    def a0(self) -> float:
        return math.sqrt(self.t_group * self.mu0**2 / self.sigma0_sq)

    @property
    def b0(self) -> float:
        return math.sqrt(self.gamma / self.sigma0_sq)

    @property
    def zeta1(self) -> float:
        return self.a1 / self.b1 if self.b1 > 0 else math.inf

    @property
    def zeta0(self) -> float:
        return self.a0 / self.b0


def group_params(n_beams: int, G: float, g: float, noise_scale: float, t_group: int) -> GroupHypothesisParams:
    if not G > g or g < 0:
        raise ValueError(f"need G > g >= 0 (degenerate threshold otherwise), got G={G}, g={g}")
    if t_group < 1 or noise_scale < 0:
        raise ValueError("t_group must be >= 1 and noise_scale >= 0")
    n = n_beams
    g_prime = (n / 2 - 1) * g + G
    mu0 = g
    mu1 = 2.0 / n * g_prime
    sigma0_sq = 2.0 * g * noise_scale
    sigma1_sq = 4.0 * noise_scale / n * g_prime
    # 4 g g' s2 / (2g'/N - g) * [1 - sqrt(Ng/2g') + T_B (G - g)/(N s2)], with
    # 2g'/N - g = 2(G - g)/N; multiplied out so that s2 = 0 stays finite
    root = math.sqrt(n * g / (2.0 * g_prime))
    gamma = 2.0 * g * g_prime * (n * noise_scale * (1.0 - root) / (G - g) + t_group)
    return GroupHypothesisParams(
        n_beams=n, big_gain=G, small_gain=g, noise_scale=noise_scale, t_group=t_group,
        mu0=mu0, mu1=mu1, sigma0_sq=sigma0_sq, sigma1_sq=sigma1_sq,
        g_prime=g_prime, gamma=gamma,
    )


def test_statistic(samples) -> float:
    y = np.asarray(samples, dtype=float)
    if y.size == 0:
        raise ValueError("empty sample vector")
    return float(np.dot(y, y))


test_statistic.__test__ = False  # not a pytest test


def detect_user(samples, params: GroupHypothesisParams) -> bool:
    """Energy detector; a statistic exactly at the threshold counts as a detection.

    With ``g = 0`` the threshold is 0 and a group without the user returns
    exactly zero power, so there the test is strict.
    """
    y = np.asarray(samples, dtype=float)
    if y.size != params.t_group:
        raise ValueError(f"expected {params.t_group} samples, got {y.size}")
    stat = test_statistic(y)
    if params.gamma == 0.0:
        return stat > 0.0
    return stat >= params.gamma


def p_miss(params: GroupHypothesisParams) -> float:
    if params.sigma1_sq <= 0:
        raise ValueError("sigma1_sq = 0: no-signal degenerate configuration")
    return noncentral_chi2_cdf(params.gamma / params.sigma1_sq, params.t_group, params.a1**2)


def p_false(params: GroupHypothesisParams) -> float:
    if params.sigma0_sq <= 0:
        raise ValueError("sigma0_sq = 0: false-alarm law is degenerate")
    return noncentral_chi2_sf(params.gamma / params.sigma0_sq, params.t_group, params.a0**2)


# --- Chernoff bound on the miss probability ----------------------------------

def _chernoff_log(lam: float, t: int, b_sq: float, nc: float) -> float:
    u = 1.0 - 2.0 * lam
    return -0.5 * t * math.log(u) - lam * b_sq + lam * nc / u


def chernoff_log_bound(params: GroupHypothesisParams, lam: float) -> float:
    """Log of ``(1-2l)^(-T/2) exp(-l b1^2 + l a1^2/(1-2l))`` for any ``l < 1/2``."""
    if not lam < 0.5:
        raise ValueError("lambda must be < 1/2")
    return _chernoff_log(lam, params.t_group, params.b1**2, params.a1**2)


def optimal_lambda(params: GroupHypothesisParams) -> float:
    """Stationary point of the Chernoff exponent in ``lambda``.

    The miss event is a lower tail, so the minimizer is negative whenever
    ``b1^2`` lies below the statistic's mean ``T + a1^2``.
    """
    t, b_sq, nc = params.t_group, params.b1**2, params.a1**2
    if b_sq == 0.0:
        return -math.inf
    u = (t + math.sqrt(t * t + 4.0 * b_sq * nc)) / (2.0 * b_sq)
    return 0.5 * (1.0 - u)


def chernoff_pm_bound(params: GroupHypothesisParams) -> float:
    t, b_sq, nc = params.t_group, params.b1**2, params.a1**2
    if not b_sq < t + nc:
        raise RegimeError(
            f"b1^2={b_sq:.6g} is not below the statistic mean {t + nc:.6g}; "
            "the lower-tail Chernoff bound is trivial there"
        )
    lam = optimal_lambda(params)
    if math.isinf(lam):
        return 0.0
    return min(1.0, math.exp(_chernoff_log(lam, t, b_sq, nc)))


# --- Cauchy-Schwarz Marcum-Q constants ----------------------------------------

def log_c1_constant(params: GroupHypothesisParams) -> float:
    """``log C1`` with ``C1 = exp(a1 b1) sqrt(z^(2(1-T/2)) / (2(z^2-1)))``, ``z = a1/b1 > 1``.

    With it, ``p_miss <= C1 exp(-a1^2/2) <= C1 exp(-G T/(2 N s2 log N))``.
    """
    a, b = params.a1, params.b1
    if b == 0.0:
        return -math.inf
    zeta = a / b
    if not zeta > 1.0:
        raise RegimeError(f"zeta1={zeta:.6g} must exceed 1")
    m = 0.5 * params.t_group
    log_z = math.log(zeta)
    return a * b + 0.5 * (2.0 * (1.0 - m) * log_z - math.log(2.0) - math.log((zeta - 1.0) * (zeta + 1.0)))


def log_c0_constant(params: GroupHypothesisParams, form: str = "exact") -> float:
    """``log C0`` for the false-alarm bound ``p_false <= C0 exp(-G T/(2 N s2 log N))``.

    ``form="exact"`` keeps every factor of the Cauchy-Schwarz bound
    ``Q_M(a0, b0) <= exp(-(a0-b0)^2/2) sqrt(z^(2(1-M)) / (1-z^2))`` and moves the
    reference exponential into the constant, so the inequality holds as
    stated. ``form="printed"`` is the shortened closed form
    ``exp(a0 b0) exp(-N) sqrt(z^(2(1-M)) / (2|z^2-1|))``, which is not a bound
    in general.
    """
    a, b = params.a0, params.b0
    zeta = a / b
    if not zeta < 1.0:
        raise RegimeError(f"zeta0={zeta:.6g} must be below 1")
    m = 0.5 * params.t_group
    log_z = math.log(zeta) if zeta > 0 else -math.inf
    one_minus = (1.0 - zeta) * (1.0 + zeta)
    if zeta == 0.0:
        shape = math.inf if m > 1 else (0.0 if m == 1 else -math.inf)
    else:
        shape = 0.5 * (2.0 * (1.0 - m) * log_z - math.log(one_minus))
    if form == "printed":
        return a * b - params.n_beams + shape - 0.5 * math.log(2.0)
    if form != "exact":
        raise ValueError(f"unknown form {form!r}")
    ref = reference_exponent(params)
    return a * b - 0.5 * (a * a + b * b) + shape + ref


def reference_exponent(params: GroupHypothesisParams) -> float:
    """``G T_B / (2 N s2)``, i.e. ``G T / (2 N s2 log N)`` with ``T_B = T / log N``."""
    if params.noise_scale == 0:
        return math.inf
    return params.big_gain * params.t_group / (2.0 * params.n_beams * params.noise_scale)


def c1_constant(params: GroupHypothesisParams) -> float:
    return math.exp(log_c1_constant(params))


def c0_constant(params: GroupHypothesisParams, form: str = "exact") -> float:
    log_c = log_c0_constant(params, form)
    return math.exp(log_c) if log_c < 709.0 else math.inf

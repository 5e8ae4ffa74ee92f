"""Closed-form error bounds for the beam-selection policies.

Logarithms of ``N`` are base 2 (the number of halving rounds / beam groups).
Every public bound clamps to ``[0, 1]`` unless called with ``clamp=False``;
:func:`evaluate_bounds` reports raw values with a ``vacuous`` flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import detection
from .detection import RegimeError
from .environment import SlotLaw
from .grouping import log2_exact

Cdf = Callable[[float], float]


def _clamp(value: float, clamp: bool) -> float:
    return min(1.0, max(0.0, value)) if clamp else value


def _positive(**kwargs):
    for name, v in kwargs.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v!r}")


def sigma_max_sq(noise_scale: float, mu_max: float) -> float:
    return 2.0 * noise_scale * mu_max


# --- stationary bounds --------------------------------------------------------

def bound_exhaustive(T, n_beams, delta_min, noise_scale, mu_max, clamp=True) -> float:
    """``N exp(-T D^2 / (8 N s2 mu_max))``."""
    _positive(n_beams=n_beams, delta_min=delta_min, noise_scale=noise_scale, mu_max=mu_max)
    value = n_beams * math.exp(-T * delta_min**2 / (8.0 * n_beams * noise_scale * mu_max))
    return _clamp(value, clamp)


def bound_karnin(T, n_beams, G, g, clamp=True) -> float:
    """``3 log N exp(-T (G - g) / (8 N log N))``: the generic fixed-budget halving bound with ``H2 = N/(G-g)``."""
    if not G > g:
        raise ValueError("need G > g")
    d = log2_exact(n_beams)
    value = 3.0 * d * math.exp(-T * (G - g) / (8.0 * n_beams * d))
    return _clamp(value, clamp)


def bound_cbe(T, n_beams, G, g, noise_scale, clamp=True, c0_form: str = "exact",
              exponent_form: str = "derived") -> float:
    """``log N * max(C1, C0) * exp(-G T_B / (2 N s2))`` with ``T_B = floor(T / log N)``.

    ``exponent_form="stated"`` drops the factor 2 in the exponent's
    denominator. The constants are unchanged, so that variant is not backed
    by the Cauchy-Schwarz argument. Raises :class:`RegimeError` outside the
    Cauchy-Schwarz regimes (``zeta1 <= 1`` or ``zeta0 >= 1``).
    """
    if exponent_form not in ("derived", "stated"):
        raise ValueError(f"unknown exponent form {exponent_form!r}")
    d = log2_exact(n_beams)
    t_group = int(T) // d
    if t_group < 1:
        raise ValueError("T below the number of groups")
    p = detection.group_params(n_beams, G, g, noise_scale, t_group)
    log_l1 = cbe_log_constant(p, c0_form)
    expo = detection.reference_exponent(p) * (2.0 if exponent_form == "stated" else 1.0)
    log_value = math.log(d) + log_l1 - expo
    value = math.exp(log_value) if log_value < 709 else math.inf
    return _clamp(value, clamp)


def cbe_log_constant(params: detection.GroupHypothesisParams, c0_form: str = "exact") -> float:
    """``log max(C1, C0)``."""
    log_c1 = detection.log_c1_constant(params)
    if params.small_gain == 0.0:
        # no false alarm is possible: the off-user statistic is exactly 0
        return log_c1
    return max(log_c1, detection.log_c0_constant(params, c0_form))


# --- within-round change laws -----------------------------------------------------

def uniform_within_round(n_rc: float) -> Cdf:
    """CDF of a change slot spread uniformly over ``[0, n_rc]``."""
    _positive(n_rc=n_rc)
    return lambda n: float(min(1.0, max(0.0, n / n_rc)))


def beta_within_round(alpha: float, beta: float, n_rc: float) -> Cdf:
    """CDF of ``n_rc * X`` with ``X ~ Beta(alpha, beta)``."""
    _positive(alpha=alpha, beta=beta, n_rc=n_rc)
    return lambda n: float(stats.beta.cdf(min(1.0, max(0.0, n / n_rc)), alpha, beta))


def _exp_sh(T, n_beams, delta_min, s2max, literal=False):
    d = log2_exact(n_beams)
    scale = 1.0 if literal else s2max
    return math.exp(-delta_min**2 * T / (2.0 * n_beams * d * scale))


def pair_case(delta_plus: float, delta_c: float) -> int:
    """Which of the four sign/magnitude cases a (beam i, changed beam j) pair is in; 0 if none."""
    if delta_plus > 0 and delta_c > 0:
        return 1
    if delta_plus < 0 < delta_c:
        return 2 if abs(delta_plus) > abs(delta_c) else 3
    if delta_c < 0 < delta_plus:
        return 4
    return 0


def bound_pij_rc(n_rc, delta_plus, delta_c, delta_min, T, n_beams, s2max, cdf: Cdf,
                 clamp=True) -> tuple[float, int]:
    """Bound on beam ``j`` (changing in this round) ending the round below beam ``i``.

    ``delta_plus = mu_i - mu_j^+`` and ``delta_c = mu_j^+ - mu_j^-``. With the
    change before the crossing slot ``n* = -n_rc delta_plus / delta_c`` the
    pair is separated by at least ``delta_min`` and the Gaussian tail applies;
    otherwise only the trivial bound 1. When ``delta_c < 0`` (case 4) the roles
    of the two sides of ``n*`` swap.
    """
    if delta_c == 0:
        raise ValueError("delta_c must be nonzero")
    _positive(n_rc=n_rc, s2max=s2max)
    case = pair_case(delta_plus, delta_c)
    n_star = min(float(n_rc), max(0.0, -n_rc * delta_plus / delta_c))
    tail = _exp_sh(T, n_beams, delta_min, s2max)
    f = cdf(n_star)
    if delta_c < 0:
        value = f + (1.0 - f) * tail
    else:
        value = 1.0 - f * (1.0 - tail)
    return _clamp(value, clamp), case


def bound_pk_rc(K, n_rc, delta_min, delta_c, s2max, cdf: Cdf, clamp=True) -> float:
    """``2 [1 - F(n_max) (1 - exp(-D^2 / (2 s2max)))]`` with ``n_max = n_rc D / delta_c``."""
    if not delta_c > 0:
        raise ValueError("delta_c must be positive")
    if K < 1:
        raise ValueError("K must be >= 1")
    _positive(n_rc=n_rc, s2max=s2max)
    n_max = min(float(n_rc), max(0.0, n_rc * delta_min / delta_c))
    value = 2.0 * (1.0 - cdf(n_max) * (1.0 - math.exp(-delta_min**2 / (2.0 * s2max))))
    return _clamp(value, clamp)


# --- change-round distribution ----------------------------------------------------

def sh_round_edges(T: int, n_beams: int) -> np.ndarray:
    """Last slot of each halving round under SH's floored allocation (length ``log N``)."""
    d = log2_exact(n_beams)
    edges, used, width = [], 0, n_beams
    for _ in range(d):
        used += (T // (width * d)) * width
        edges.append(used)
        width //= 2
    return np.asarray(edges)


def change_round_pmf(law: SlotLaw, T: int, n_beams: int) -> np.ndarray:
    """``P(r_c = r)`` for ``r = 1..log N``: the change lands in round ``r`` when
    slot ``t_c + 1`` (the first post-change slot) falls inside it. Changes after
    the last sampled slot are counted in the final round."""
    edges = sh_round_edges(T, n_beams)
    cdf_at = np.array([law.cdf(e - 1, T) for e in edges])
    cdf_at[-1] = 1.0
    return np.diff(np.concatenate([[0.0], cdf_at]))


def late_round_mean(pmf: Sequence[float], r_star: int) -> float:
    """``E[r_c - r* | r* <= r_c <= log N]`` from a pmf over rounds ``1..log N``."""
    p = np.asarray(pmf, dtype=float)
    rounds = np.arange(1, p.size + 1)
    mask = rounds >= r_star
    mass = p[mask].sum()
    if mass <= 0:
        return 0.0
    return float(np.sum(p[mask] * (rounds[mask] - r_star)) / mass)


def _r_star(n_beams, K, offset=0):
    if not 1 <= K <= n_beams // 2:
        raise ValueError(f"K={K} outside [1, N/2]")
    return int(math.floor(math.log2(n_beams / (2 * K)))) + offset


# --- SH under a change ------------------------------------------------------------

def _sh_exp(T, n_beams, delta_min, s2max, literal):
    if not literal and s2max is None:
        raise ValueError("s2max is required unless literal=True")
    return _exp_sh(T, n_beams, delta_min, s2max if s2max is not None else 1.0, literal)


def bound_early_change(T, n_beams, K, delta_min, s2max=None, literal=False, clamp=True) -> float:
    """``2 (log N + K - 1) exp(.)`` for a change within the first ``r*`` rounds."""
    d = log2_exact(n_beams)
    value = 2.0 * (d + K - 1) * _sh_exp(T, n_beams, delta_min, s2max, literal)
    return _clamp(value, clamp)


@dataclass(frozen=True)
class SplitBound:
    distribution_term: float
    exponential_term: float
    total: float


def bound_late_change(T, n_beams, K, delta_min, round_pmf, s2max=None, literal=False,
                      offset=0, clamp=True) -> SplitBound:
    """Distribution term ``E[r_c - r*]`` plus ``2 log(2NK) exp(.)``."""
    t1 = late_round_mean(round_pmf, _r_star(n_beams, K, offset))
    expo = 2.0 * math.log2(2 * n_beams * K) * _sh_exp(T, n_beams, delta_min, s2max, literal)
    return SplitBound(t1, expo, _clamp(t1 + expo, clamp))


def bound_sh_total(T, n_beams, K, delta_min, round_pmf=None, s2max=None, literal=False,
                   offset=0, clamp=True) -> float:
    """SH error bound under a single change; ``round_pmf=None`` means no change."""
    d = log2_exact(n_beams)
    expo = _sh_exp(T, n_beams, delta_min, s2max, literal)
    if round_pmf is None:
        return _clamp(d * expo, clamp)
    t1 = late_round_mean(round_pmf, _r_star(n_beams, K, offset))
    return _clamp(t1 + 2.0 * (2 * d + K - 1) * expo, clamp)


# --- K-SHES -------------------------------------------------------------------------

def kshes_t_constant(n_beams, K) -> float:
    """``log(N^2 / 2K) + K (2 log(2K) + 1)``."""
    return math.log2(n_beams**2 / (2 * K)) + K * (2.0 * math.log2(2 * K) + 1.0)


def kshes_safe_fraction(n_beams, K) -> float:
    d = log2_exact(n_beams)
    return (math.log2(n_beams / (2 * K)) / d) * (1.0 - 1.0 / (2 * K)) + 1.0 / (2 * K)


def kshes_safe_slot(T, n_beams, K) -> int:
    """Length of the early window ``T [(log(N/2K)/log N)(1 - 1/2K) + 1/2K]`` in slots (floored)."""
    if not 1 <= K <= n_beams // 2:
        raise ValueError(f"K={K} outside [1, N/2]")
    return int(math.floor(T * kshes_safe_fraction(n_beams, K) + 1e-9))


@dataclass(frozen=True)
class KshesBound:
    exponential_term: float
    late_term: float
    total: float
    early_window_bound: float
    safe_slot: int


def bound_kshes(T, n_beams, K, delta_min, s2max, crossing_slots: Sequence[float] | None = None,
                change_cdf: Cdf | None = None, clamp=True) -> KshesBound:
    """General K-SHES bound and the early-window exponential bound.

    The late term sums ``1 - F(t_i)(1 - exp(-D^2 / (2 N log N s2max)))`` over
    ``K - 1`` slots ``t_i``. They are caller-supplied; by default each is the
    early-window edge. ``change_cdf`` is the CDF of the change slot given
    that it falls after round ``r*``; ``None`` means the change never reaches
    that phase (``F = 1``).
    """
    _positive(s2max=s2max, delta_min=delta_min)
    d = log2_exact(n_beams)
    expo = math.exp(-0.5 * delta_min**2 * T / (2.0 * n_beams * d * s2max))
    exp_term = kshes_t_constant(n_beams, K) * expo
    safe = kshes_safe_slot(T, n_beams, K)
    if crossing_slots is None:
        crossing_slots = [safe] * (K - 1)
    if len(crossing_slots) != K - 1:
        raise ValueError(f"expected {K - 1} crossing slots, got {len(crossing_slots)}")
    inner = math.exp(-0.5 * delta_min**2 / (n_beams * d * s2max))
    late = sum(1.0 - (change_cdf(t) if change_cdf else 1.0) * (1.0 - inner) for t in crossing_slots)
    early = 2.0 * (2 * d + 2 * K - 1) * expo
    return KshesBound(exp_term, late, _clamp(exp_term + late, clamp), _clamp(early, clamp), safe)


def kshes_crossing_slots(T, n_beams, K, pre_mean, post_mean, rivals: Sequence[float],
                         offset: int = 0) -> list[float]:
    """Latest change slot at which the changed beam still beats each rival in expectation.

    In the equal-allocation phase ``[t0, T]`` the changed beam's expected
    average is ``(pre (t_c - t0) + post (T - t_c)) / (T - t0)``. It exceeds a
    rival mean ``mu_i`` iff ``t_c < t0 + (T - t0)(post - mu_i)/(post - pre)``.
    Rivals at or above ``post_mean`` give ``t0``; rivals at or below
    ``pre_mean`` give ``T``.
    """
    if not post_mean > pre_mean:
        raise ValueError("need post_mean > pre_mean")
    r_star = _r_star(n_beams, K, offset)
    t0 = int(sh_round_edges(T, n_beams)[r_star - 1]) if r_star > 0 else 0
    out = []
    for mu in rivals:
        frac = min(1.0, max(0.0, (post_mean - mu) / (post_mean - pre_mean)))
        out.append(t0 + (T - t0) * frac)
    return out


def conditional_slot_cdf(law: SlotLaw, T: int, after_slot: int) -> Cdf:
    """CDF of ``t_c`` given ``t_c > after_slot``."""
    base = law.cdf(after_slot, T)
    if base >= 1.0:
        return lambda t: 1.0
    return lambda t: max(0.0, (law.cdf(t, T) - base) / (1.0 - base))


# --- diagnostics ----------------------------------------------------------------------

def deviation_bound(n_samples, eps, noise_scale, mean) -> float:
    """Per-beam deviation bound ``exp(-T_i eps^2 / (4 s2 mu_i))`` in its printed form.

    For rewards of variance ``2 s2 mu_i`` the two-sided Gaussian tail carries
    a prefactor 2 that this form omits, so it is a diagnostic, not a bound.
    """
    _positive(noise_scale=noise_scale, mean=mean)
    return math.exp(-n_samples * eps**2 / (4.0 * noise_scale * mean))


# --- reports ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundInputs:
    T: int
    n_beams: int
    delta_min: float
    noise_scale: float
    mu_max: float
    G: float | None = None
    g: float | None = None
    K: int | None = None
    change_law: SlotLaw | None = None


@dataclass
class BoundReport:
    values: dict[str, float] = field(default_factory=dict)
    raw: dict[str, float] = field(default_factory=dict)
    vacuous: dict[str, bool] = field(default_factory=dict)
    flags: dict[str, str] = field(default_factory=dict)

    def add(self, name: str, raw: float):
        self.raw[name] = raw
        self.values[name] = _clamp(raw, True)
        self.vacuous[name] = not raw < 1.0


def evaluate_bounds(inp: BoundInputs) -> BoundReport:
    """Every bound that the inputs determine, raw and clamped."""
    rep = BoundReport()
    T, N = inp.T, inp.n_beams
    s2max = sigma_max_sq(inp.noise_scale, inp.mu_max)
    rep.add("exhaustive", bound_exhaustive(T, N, inp.delta_min, inp.noise_scale, inp.mu_max, clamp=False))
    if inp.G is not None and inp.g is not None:
        rep.add("karnin", bound_karnin(T, N, inp.G, inp.g, clamp=False))
        try:
            rep.add("cbe", bound_cbe(T, N, inp.G, inp.g, inp.noise_scale, clamp=False))
        except RegimeError as exc:
            rep.flags["cbe"] = f"regime: {exc}"
            rep.add("cbe", math.inf)
    if inp.K is not None:
        K = inp.K
        pmf = change_round_pmf(inp.change_law, T, N) if inp.change_law else None
        rep.add("sh_total", bound_sh_total(T, N, K, inp.delta_min, pmf, s2max, clamp=False))
        rep.add("early_change", bound_early_change(T, N, K, inp.delta_min, s2max, clamp=False))
        if pmf is not None:
            rep.add("late_change", bound_late_change(T, N, K, inp.delta_min, pmf, s2max, clamp=False).total)
        kb = bound_kshes(T, N, K, inp.delta_min, s2max, clamp=False)
        rep.add("kshes", kb.total)
        rep.add("kshes_early_window", kb.early_window_bound)
        rep.flags["kshes_safe_slot"] = str(kb.safe_slot)
    return rep

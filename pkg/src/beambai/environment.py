"""Ground-truth beam environments and their reward samplers.

Every beam ``i`` returns received power ``R ~ Normal(mu_i(t), 2 s2 mu_i(t))``
where ``s2`` is the environment's ``noise_scale``. At most one beam changes
its mean, once, at slot ``t_c``; slots are 1-based and slot ``t_c`` itself
still carries the pre-change mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .grouping import is_power_of_two


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``.

    Streams are addressed by position (``SeedSequence`` spawn keys) rather
    than by drawing from a parent, so trial ``k`` gets the same stream no
    matter which worker runs it or in what order.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


# --- change-slot laws ---------------------------------------------------------

LAW_KINDS = ("fixed", "uniform", "beta")


@dataclass(frozen=True)
class SlotLaw:
    """Distribution of the change slot ``t_c``.

    ``fixed`` uses ``slot``; ``uniform`` and ``beta`` live on the window
    ``[lo, hi]``, given in slots or, with ``relative=True``, as fractions of
    the horizon. The beta law maps ``X ~ Beta(alpha, beta)`` to
    ``lo + round(X (hi - lo))``.
    """

    kind: str = "uniform"
    slot: int | None = None
    lo: float = 0.0
    hi: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    relative: bool = True

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ValueError(f"unknown slot law {self.kind!r}")
        if self.kind == "fixed":
            if self.slot is None or self.slot < 0:
                raise ValueError("fixed law needs a slot >= 0")
        elif self.lo > self.hi or self.lo < 0:
            raise ValueError(f"malformed window lo={self.lo}, hi={self.hi}")
        if self.kind == "beta" and not (self.alpha > 0 and self.beta > 0):
            raise ValueError("beta law needs alpha > 0 and beta > 0")

    @classmethod
    def fixed(cls, slot: int) -> "SlotLaw":
        return cls(kind="fixed", slot=int(slot))

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0, relative: bool = True) -> "SlotLaw":
        return cls(kind="uniform", lo=lo, hi=hi, relative=relative)

    @classmethod
    def beta_law(cls, alpha: float, beta: float, lo: float = 0.0, hi: float = 1.0,
                 relative: bool = True) -> "SlotLaw":
        return cls(kind="beta", alpha=alpha, beta=beta, lo=lo, hi=hi, relative=relative)

    def window(self, horizon: int) -> tuple[int, int]:
        if self.kind == "fixed":
            s = min(max(self.slot, 0), horizon)
            return s, s
        scale = horizon if self.relative else 1
        lo = int(round(self.lo * scale))
        hi = int(round(self.hi * scale))
        lo, hi = min(max(lo, 0), horizon), min(max(hi, 0), horizon)
        return lo, hi

    def sample(self, horizon: int, rng: np.random.Generator) -> int:
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        lo, hi = self.window(horizon)
        if self.kind == "fixed":
            return lo
        if self.kind == "uniform":
            return int(rng.integers(lo, hi + 1))
        x = rng.beta(self.alpha, self.beta)
        return int(lo + round(x * (hi - lo)))

    def cdf(self, t: float, horizon: int) -> float:
        """``P(t_c <= t)`` for the slot law on this horizon."""
        lo, hi = self.window(horizon)
        t = math.floor(t)
        if t < lo:
            return 0.0
        if t >= hi:
            return 1.0
        if self.kind == "uniform":
            return (t - lo + 1) / (hi - lo + 1)
        if self.kind == "beta":
            return float(stats.beta.cdf((t - lo + 0.5) / (hi - lo), self.alpha, self.beta))
        return 1.0

    def mean(self, horizon: int) -> float:
        lo, hi = self.window(horizon)
        if self.kind == "beta":
            return lo + (hi - lo) * self.alpha / (self.alpha + self.beta)
        return 0.5 * (lo + hi)


def realize_change_slot(law: SlotLaw, horizon: int, rng: np.random.Generator) -> int:
    return law.sample(horizon, rng)


# --- environments -------------------------------------------------------------

@dataclass(frozen=True)
class StationaryGainPair:
    big_gain: float
    small_gain: float
    best_index: int

    def __post_init__(self):
        if not self.big_gain > self.small_gain >= 0:
            raise ValueError(f"need G > g >= 0, got G={self.big_gain}, g={self.small_gain}")


@dataclass(frozen=True)
class ChangeSchedule:
    changed_beam: int
    pre_mean: float
    post_mean: float
    law: SlotLaw = field(default_factory=SlotLaw)

    @property
    def realized(self) -> bool:
        return self.law.kind == "fixed"

    @property
    def delta_c(self) -> float:
        return self.post_mean - self.pre_mean


@dataclass(frozen=True)
class EnvironmentSpec:
    n_beams: int
    means: tuple[float, ...]
    noise_scale: float
    change: ChangeSchedule | None = None
    degenerate: bool = False

    def __post_init__(self):
        means = tuple(float(m) for m in self.means)
        object.__setattr__(self, "means", means)
        if not is_power_of_two(self.n_beams) or self.n_beams < 2:
            raise ValueError(f"n_beams must be a power of two >= 2, got {self.n_beams}")
        if len(means) != self.n_beams:
            raise ValueError(f"expected {self.n_beams} means, got {len(means)}")
        if any(m < 0 or not math.isfinite(m) for m in means):
            raise ValueError("means must be finite and nonnegative")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if not self.degenerate and _has_tie(means):
            raise ValueError("best beam is not unique (flag degenerate=True to allow)")
        ch = self.change
        if ch is not None:
            j = ch.changed_beam
            if not 0 <= j < self.n_beams:
                raise IndexError(f"changed beam {j} out of range")
            if not math.isclose(means[j], ch.pre_mean, rel_tol=0, abs_tol=1e-12):
                raise ValueError("means[changed_beam] must equal the pre-change mean")
            if not 0 <= ch.pre_mean < ch.post_mean:
                raise ValueError("need 0 <= pre_mean < post_mean")
            others = max((m for i, m in enumerate(means) if i != j), default=0.0)
            if not ch.post_mean > others:
                raise ValueError("post-change mean must exceed every other beam's mean")

    def mean_at(self, beam_index: int, t: int) -> float:
        if not 0 <= beam_index < self.n_beams:
            raise IndexError(f"beam {beam_index} out of range for N={self.n_beams}")
        ch = self.change
        if ch is None or beam_index != ch.changed_beam:
            return self.means[beam_index]
        if not ch.realized:
            raise ValueError("change slot not realized; call realize() first")
        return ch.pre_mean if t <= ch.law.slot else ch.post_mean

    def means_at(self, t: int) -> np.ndarray:
        return np.array([self.mean_at(i, t) for i in range(self.n_beams)])

    def best_beam(self, t: int | None = None) -> int:
        """Index of the best beam at slot ``t`` (the deadline if the change is realized)."""
        if self.change is None:
            return int(np.argmax(self.means))
        return int(np.argmax(self.means_at(t)))

    @property
    def mu_max(self) -> float:
        top = max(self.means)
        return max(top, self.change.post_mean) if self.change else top

    def realize(self, horizon: int, rng: np.random.Generator) -> "EnvironmentSpec":
        """Copy with the change slot drawn from its law (no-op when already fixed)."""
        if self.change is None or self.change.realized:
            return self
        slot = self.change.law.sample(horizon, rng)
        return replace(self, change=replace(self.change, law=SlotLaw.fixed(slot)))

    def with_change_slot(self, slot: int) -> "EnvironmentSpec":
        if self.change is None:
            raise ValueError("environment has no change schedule")
        return replace(self, change=replace(self.change, law=SlotLaw.fixed(slot)))

    # vectorized helpers used by the policies

    def mean_block(self, beams: np.ndarray, slots: np.ndarray) -> np.ndarray:
        """Means for ``beams`` (broadcast over the last axis) at ``slots``."""
        base = np.asarray(self.means)[beams]
        base = np.broadcast_to(base, np.broadcast_shapes(np.shape(base), np.shape(slots))).copy()
        ch = self.change
        if ch is not None:
            if not ch.realized:
                raise ValueError("change slot not realized; call realize() first")
            hit = np.broadcast_to(np.asarray(beams) == ch.changed_beam, base.shape)
            if hit.any():
                post = np.broadcast_to(np.asarray(slots) > ch.law.slot, base.shape)
                base[hit] = np.where(post[hit], ch.post_mean, ch.pre_mean)
        return base


def _has_tie(means: Sequence[float]) -> bool:
    top = max(means)
    return sum(1 for m in means if m == top) > 1


def make_stationary(n_beams: int, gains: StationaryGainPair, noise_scale: float) -> EnvironmentSpec:
    if not 0 <= gains.best_index < n_beams:
        raise IndexError(f"best index {gains.best_index} out of range")
    means = [gains.small_gain] * n_beams
    means[gains.best_index] = gains.big_gain
    return EnvironmentSpec(n_beams=n_beams, means=tuple(means), noise_scale=noise_scale)


def make_changing(means: Sequence[float], noise_scale: float, post_mean: float,
                  law: SlotLaw, changed_beam: int | None = None,
                  changed_rank: int | None = None) -> EnvironmentSpec:
    """Environment in which one beam jumps to ``post_mean``.

    The beam is given by index or by its 1-based rank in ``means`` (rank 1 is
    the best beam); its pre-change mean is its entry in ``means``.
    """
    means = tuple(float(m) for m in means)
    if (changed_beam is None) == (changed_rank is None):
        raise ValueError("give exactly one of changed_beam / changed_rank")
    if changed_rank is not None:
        order = np.argsort(-np.asarray(means), kind="stable")
        if not 1 <= changed_rank <= len(means):
            raise IndexError(f"rank {changed_rank} out of range")
        changed_beam = int(order[changed_rank - 1])
    schedule = ChangeSchedule(changed_beam=changed_beam, pre_mean=means[changed_beam],
                              post_mean=post_mean, law=law)
    return EnvironmentSpec(n_beams=len(means), means=means, noise_scale=noise_scale,
                           change=schedule)


# --- reward sampling ------------------------------------------------------------

def sample_beam(env: EnvironmentSpec, beam_index: int, t: int, rng: np.random.Generator) -> float:
    mu = env.mean_at(beam_index, t)
    z = rng.standard_normal()
    if mu == 0.0:
        return 0.0
    return mu + math.sqrt(2.0 * env.noise_scale * mu) * z


def sample_block(env: EnvironmentSpec, beams: np.ndarray, slots: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """One reward per (beam, slot) pair; shapes broadcast, one normal drawn per cell."""
    mu = env.mean_block(beams, slots)
    z = rng.standard_normal(mu.shape)
    return mu + np.sqrt(2.0 * env.noise_scale * mu) * z


def group_mean_var(env: EnvironmentSpec, group: Iterable[int], t: int) -> tuple[float, float]:
    """Mean and variance of the power received when a whole group is switched on.

    The transmit power is split over the ``N/2`` active beams, so each member
    contributes ``2 mu_i / N`` to the mean; the variance keeps the
    heteroscedastic ratio ``2 s2`` of a single beam.
    """
    members = list(group)
    if not members:
        raise ValueError("empty group")
    mu = sum(2.0 * env.mean_at(i, t) / env.n_beams for i in members)
    return mu, 2.0 * env.noise_scale * mu


def sample_group(env: EnvironmentSpec, group: Iterable[int], t: int, rng: np.random.Generator) -> float:
    mu, var = group_mean_var(env, group, t)
    z = rng.standard_normal()
    return mu + math.sqrt(var) * z if mu > 0 else 0.0


def sample_group_block(env: EnvironmentSpec, group: Sequence[int], slots: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    members = np.asarray(sorted(group))
    if members.size == 0:
        raise ValueError("empty group")
    slots = np.asarray(slots)
    mu = (2.0 / env.n_beams) * env.mean_block(members[None, :], slots[:, None]).sum(axis=1)
    z = rng.standard_normal(mu.shape)
    return mu + np.sqrt(2.0 * env.noise_scale * mu) * z


# --- case-study channel ---------------------------------------------------------

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class CaseStudyChannel:
    """Link budget of the single-user case study.

    ``ref_snr`` is the SNR at the user without any beamforming gain, from a
    named path-loss model (``free_space``: Friis at ``carrier_hz``) and a
    thermal noise floor over ``bandwidth_hz``.
    """

    distance_m: float = 100.0
    bandwidth_hz: float = 1e9
    tx_power_dbm: float = 40.0
    carrier_hz: float = 28e9
    noise_figure_db: float = 0.0
    noise_psd_dbm_hz: float = -174.0
    pathloss_model: str = "free_space"
    pathloss_exponent: float = 2.0

    def __post_init__(self):
        if not self.distance_m > 0 or not self.bandwidth_hz > 0:
            raise ValueError("distance and bandwidth must be positive")
        if self.pathloss_model not in PATHLOSS_MODELS:
            raise ValueError(f"unknown path-loss model {self.pathloss_model!r}")

    def pathloss_db(self) -> float:
        return PATHLOSS_MODELS[self.pathloss_model](self)

    def noise_dbm(self) -> float:
        return self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz) + self.noise_figure_db

    @property
    def ref_snr(self) -> float:
        snr_db = self.tx_power_dbm - self.pathloss_db() - self.noise_dbm()
        return 10.0 ** (snr_db / 10.0)


def _free_space_db(ch: CaseStudyChannel) -> float:
    return 20.0 * math.log10(4.0 * math.pi * ch.distance_m * ch.carrier_hz / SPEED_OF_LIGHT)


def _log_distance_db(ch: CaseStudyChannel) -> float:
    # free space up to 1 m, then 10 n log10(d)
    fspl_1m = 20.0 * math.log10(4.0 * math.pi * ch.carrier_hz / SPEED_OF_LIGHT)
    return fspl_1m + 10.0 * ch.pathloss_exponent * math.log10(ch.distance_m)


PATHLOSS_MODELS = {"free_space": _free_space_db, "log_distance": _log_distance_db}


def directivity_gain(n_beams: int) -> float:
    """Per-beam directivity factor ``2 pi / N``."""
    return 2.0 * math.pi / n_beams


def channel_to_means(channel: CaseStudyChannel, n_beams: int, best_index: int = 0,
                     noise_scale: float = 1.0) -> EnvironmentSpec:
    """Aligned beam gets ``ref_snr * 2pi/N``; misaligned beams receive nothing.

    Powers are in units of the noise floor, so ``noise_scale`` is 1 for a
    reward model whose noise is the receiver's thermal noise.
    """
    means = [0.0] * n_beams
    means[best_index] = channel.ref_snr * directivity_gain(n_beams)
    return EnvironmentSpec(n_beams=n_beams, means=tuple(means), noise_scale=noise_scale)

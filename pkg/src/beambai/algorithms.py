"""Beam-selection policies: exhaustive search, CBE, sequential halving and K-SHES.

Each policy takes a realized environment, a slot budget ``T`` and a
generator, and returns the selected beam with a per-round audit trail.
Sampling is round-robin: in a round over beams ``S`` (sorted), sample ``j``
of the ``q``-th beam occupies slot ``t0 + j |S| + q + 1``, so a change can
land in the middle of a round. Rewards for a round are drawn as one
``(n, |S|)`` block; the exhaustive search and K-SHES with ``r* = 0`` make
exactly the same draws and hence the same decisions under a shared seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import detection
from .environment import EnvironmentSpec, sample_block, sample_group_block
from .grouping import build_groups, decode, log2_exact

Sampler = Callable[[EnvironmentSpec, np.ndarray, np.ndarray, np.random.Generator], np.ndarray]


class BudgetError(ValueError):
    """The slot budget cannot give every beam at least one sample per round."""


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    surviving: tuple[int, ...]
    samples_per_beam: int
    statistics: tuple[float, ...]
    first_slot: int = 1


@dataclass(frozen=True)
class PolicyOutcome:
    selected_beam: int
    rounds: tuple[RoundRecord, ...]
    samples_used: int
    verdicts: tuple[bool, ...] | None = None
    flags: tuple[str, ...] = field(default_factory=tuple)


def _slot_grid(first_slot: int, n: int, width: int) -> np.ndarray:
    return first_slot + np.arange(n)[:, None] * width + np.arange(width)[None, :]


def _sample_round(env, beams, n, first_slot, rng, sampler: Sampler | None):
    beams = np.asarray(beams)
    slots = _slot_grid(first_slot, n, beams.size)
    draw = sampler or sample_block
    rewards = np.asarray(draw(env, beams[None, :], slots, rng), dtype=float)
    if rewards.shape != (n, beams.size):
        raise ValueError(f"sampler returned shape {rewards.shape}, expected {(n, beams.size)}")
    return rewards.sum(axis=0)


def _argmax_low_index(values: np.ndarray) -> int:
    # np.argmax already returns the first maximum
    return int(np.argmax(values))


def _top_half(beams: np.ndarray, sums: np.ndarray) -> np.ndarray:
    order = np.lexsort((beams, -sums))
    return np.sort(beams[order[: beams.size // 2]])


def run_exhaustive(env: EnvironmentSpec, T: int, rng: np.random.Generator,
                   sampler: Sampler | None = None) -> PolicyOutcome:
    n_beams = env.n_beams
    if T < n_beams:
        raise BudgetError(f"T={T} is below N={n_beams}")
    n = T // n_beams
    beams = np.arange(n_beams)
    sums = _sample_round(env, beams, n, 1, rng, sampler)
    record = RoundRecord(1, tuple(beams.tolist()), n, tuple(sums.tolist()), 1)
    return PolicyOutcome(_argmax_low_index(sums), (record,), n * n_beams)


def _halving(env, T, rng, n_rounds, sampler, min_samples=0):
    """Run ``n_rounds`` halving rounds with SH's allocation; return survivors, records, slots used.

    ``min_samples`` floors the per-beam count of each round; slots taken this
    way still count against the budget.
    """
    depth = log2_exact(env.n_beams)
    beams = np.arange(env.n_beams)
    records = []
    used = 0
    for r in range(1, n_rounds + 1):
        n = max(T // (beams.size * depth), min_samples)
        if n < 1 or used + n * beams.size > T:
            raise BudgetError(f"T={T} leaves no sample per beam in round {r} (|S|={beams.size})")
        sums = _sample_round(env, beams, n, used + 1, rng, sampler)
        records.append(RoundRecord(r, tuple(beams.tolist()), n, tuple(sums.tolist()), used + 1))
        used += n * beams.size
        beams = _top_half(beams, sums)
    return beams, records, used


def run_sh(env: EnvironmentSpec, T: int, rng: np.random.Generator,
           sampler: Sampler | None = None) -> PolicyOutcome:
    depth = log2_exact(env.n_beams)
    if T < env.n_beams * depth:
        raise BudgetError(f"T={T} is below N log2 N = {env.n_beams * depth}")
    beams, records, used = _halving(env, T, rng, depth, sampler)
    return PolicyOutcome(int(beams[0]), tuple(records), used)


def kshes_cut_round(n_beams: int, K: int, offset: int = 0) -> int:
    """Number of halving rounds ``r* = log2(N / 2K) + offset`` before equal allocation."""
    if not 1 <= K <= n_beams // 2:
        raise ValueError(f"K={K} must lie in [1, N/2={n_beams // 2}]")
    depth = log2_exact(n_beams)
    r_star = int(np.floor(np.log2(n_beams / (2 * K)))) + offset
    if not 0 <= r_star <= depth:
        raise ValueError(f"r*={r_star} outside [0, {depth}] (offset={offset})")
    return r_star


def run_kshes(env: EnvironmentSpec, T: int, K: int, rng: np.random.Generator,
              offset: int = 0, sampler: Sampler | None = None,
              min_samples: int = 0) -> PolicyOutcome:
    """Halve for ``r*`` rounds, then spend every remaining slot evenly on the survivors.

    The final choice uses only the samples gathered after round ``r*``.
    ``min_samples=1`` keeps short budgets feasible by giving every beam at
    least one sample per halving round.
    """
    r_star = kshes_cut_round(env.n_beams, K, offset)
    beams, records, used = _halving(env, T, rng, r_star, sampler, min_samples)
    n = (T - used) // beams.size
    if n < 1:
        raise BudgetError(f"T={T} leaves no slot for the final {beams.size} beams")
    sums = _sample_round(env, beams, n, used + 1, rng, sampler)
    records.append(RoundRecord(r_star + 1, tuple(beams.tolist()), n, tuple(sums.tolist()), used + 1))
    used += n * beams.size
    return PolicyOutcome(int(beams[_argmax_low_index(sums)]), tuple(records), used)


def infer_gain_pair(env: EnvironmentSpec) -> tuple[float, float]:
    """``(G, g)`` as the best mean and the largest of the remaining means."""
    means = np.asarray(env.means)
    best = int(np.argmax(means))
    rest = np.delete(means, best)
    return float(means[best]), float(rest.max())


def run_cbe(env: EnvironmentSpec, T: int, rng: np.random.Generator,
            gains: Sequence[float] | None = None,
            group_sampler: Callable | None = None) -> PolicyOutcome:
    """Test every beam group for the user and decode the verdict pattern.

    ``gains = (G, g)`` is the prior the detector's threshold is built from;
    by default it is read off the environment. Running on a changing
    environment is allowed and marked with the ``"nonstationary"`` flag.
    """
    design = build_groups(env.n_beams)
    depth = design.n_groups
    if T < depth:
        raise BudgetError(f"T={T} is below the number of groups {depth}")
    t_group = T // depth
    G, g = gains if gains is not None else infer_gain_pair(env)
    params = detection.group_params(env.n_beams, G, g, env.noise_scale, t_group)
    draw = group_sampler or sample_group_block
    verdicts, records = [], []
    for k, members in enumerate(design.groups, start=1):
        first = (k - 1) * t_group + 1
        y = np.asarray(draw(env, sorted(members), np.arange(first, first + t_group), rng))
        verdicts.append(detection.detect_user(y, params))
        stat = detection.test_statistic(y)
        records.append(RoundRecord(k, tuple(sorted(members)), t_group, (stat,), first))
    flags = ("nonstationary",) if env.change is not None else ()
    return PolicyOutcome(decode(verdicts), tuple(records), t_group * depth,
                         verdicts=tuple(verdicts), flags=flags)


POLICIES = ("exhaustive", "cbe", "sh", "kshes")


def run_policy(name: str, env: EnvironmentSpec, T: int, rng: np.random.Generator,
               K: int | None = None, offset: int = 0, gains=None,
               min_samples: int = 0) -> PolicyOutcome:
    if name == "exhaustive":
        return run_exhaustive(env, T, rng)
    if name == "sh":
        return run_sh(env, T, rng)
    if name == "kshes":
        if K is None:
            raise ValueError("kshes needs K")
        return run_kshes(env, T, K, rng, offset=offset, min_samples=min_samples)
    if name == "cbe":
        return run_cbe(env, T, rng, gains=gains)
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICIES}")

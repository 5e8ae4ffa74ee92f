"""Monte Carlo harness: error estimation, comparison sweeps and the rate case study.

Trial ``k`` of sweep point ``p`` draws its environment from stream
``(seed, p, k, 0)`` and its rewards from ``(seed, p, k, 1)``. Every policy at
a point sees the same environment realizations and the same reward stream
(common random numbers), and results do not depend on the worker count.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import bounds
from .algorithms import POLICIES, BudgetError, kshes_cut_round, run_policy
from .environment import (
    CaseStudyChannel,
    EnvironmentSpec,
    SlotLaw,
    StationaryGainPair,
    derive_rng,
    directivity_gain,
    make_changing,
    make_stationary,
)

DEFAULT_FRAME_SLOTS = 35072


# --- statistics ------------------------------------------------------------------

def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


@dataclass
class ErrorEstimate:
    policy: str
    point: dict[str, Any]
    errors: int
    trials: int
    error_rate: float
    ci_lo: float
    ci_hi: float
    elapsed: float = 0.0
    outcomes: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_outcomes(cls, policy, point, outcomes, elapsed=0.0) -> "ErrorEstimate":
        outcomes = np.asarray(outcomes, dtype=bool)
        k, n = int(outcomes.sum()), int(outcomes.size)
        lo, hi = wilson_interval(k, n)
        return cls(policy, dict(point), k, n, k / n, lo, hi, elapsed, outcomes)


def paired_difference(a: ErrorEstimate, b: ErrorEstimate) -> tuple[float, float]:
    """Mean and standard error of ``error_a - error_b`` over shared trials."""
    if a.outcomes is None or b.outcomes is None or a.outcomes.size != b.outcomes.size:
        raise ValueError("paired difference needs per-trial outcomes of equal length")
    d = a.outcomes.astype(float) - b.outcomes.astype(float)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0


# --- scenarios -------------------------------------------------------------------

@dataclass(frozen=True)
class StationaryScenario:
    """User in one beam with gain ``big_gain``; every other beam has ``small_gain``."""

    n_beams: int = 16
    big_gain: float = 1.0
    small_gain: float = 1e-3
    noise_scale: float = 0.1
    random_best: bool = True

    def __call__(self, rng: np.random.Generator, T: int) -> EnvironmentSpec:
        best = int(rng.integers(self.n_beams)) if self.random_best else 0
        pair = StationaryGainPair(self.big_gain, self.small_gain, best)
        return make_stationary(self.n_beams, pair, self.noise_scale)


@dataclass(frozen=True)
class DistanceScenario:
    """Stationary CBE setting at a given distance: ``G = ref_snr * 2pi/N``, ``g = sidelobe * G``."""

    n_beams: int = 16
    distance_m: float = 100.0
    sidelobe_ratio: float = 1e-4
    noise_scale: float = 1.0
    random_best: bool = True

    def gains(self) -> tuple[float, float]:
        ch = CaseStudyChannel(distance_m=self.distance_m)
        G = ch.ref_snr * directivity_gain(self.n_beams)
        return G, self.sidelobe_ratio * G

    def __call__(self, rng, T):
        G, g = self.gains()
        return StationaryScenario(self.n_beams, G, g, self.noise_scale, self.random_best)(rng, T)


@dataclass(frozen=True)
class ChangeScenario:
    """Beams with means ``top - step * rank`` on a random ordering; one beam from
    the top ``top_fraction`` (never the leader) jumps to ``post_mean``.

    ``law`` places the change slot; relative laws scale with the horizon.
    """

    n_beams: int = 64
    top_mean: float = 1.0
    mean_step: float = 0.015
    post_mean: float = 1.2
    noise_scale: float = 0.05
    top_fraction: float = 0.2
    law: SlotLaw = field(default_factory=SlotLaw)

    @property
    def top_k(self) -> int:
        return max(2, math.ceil(self.top_fraction * self.n_beams))

    def __call__(self, rng, T):
        order = rng.permutation(self.n_beams)
        means = self.top_mean - self.mean_step * order
        if means.min() < 0:
            raise ValueError("mean profile goes negative; lower mean_step")
        rank = int(rng.integers(2, self.top_k + 1))
        env = make_changing(means, self.noise_scale, self.post_mean, self.law, changed_rank=rank)
        return env.realize(T, rng)


@dataclass(frozen=True)
class BlockageScenario:
    """Case-study link: the aligned beam is blocked until a uniform slot of the frame.

    Measured means are ``ref_snr * 2pi/N * training_gain`` in line of sight
    and ``blocked_loss_db`` lower before the change; misaligned beams receive
    nothing. ``training_gain_db`` converts the data-link SNR into the
    per-slot measurement SNR of the training signal.
    """

    n_beams: int = 64
    channel: CaseStudyChannel = field(default_factory=CaseStudyChannel)
    training_gain_db: float = 14.0
    blocked_loss_db: float = 15.0
    noise_scale: float = 1.0
    frame_slots: int = DEFAULT_FRAME_SLOTS

    @property
    def top_k(self) -> int:
        return 1

    def los_mean(self) -> float:
        return (self.channel.ref_snr * directivity_gain(self.n_beams)
                * 10.0 ** (self.training_gain_db / 10.0))

    def __call__(self, rng, T):
        best = int(rng.integers(self.n_beams))
        post = self.los_mean()
        pre = post * 10.0 ** (-self.blocked_loss_db / 10.0)
        means = [0.0] * self.n_beams
        means[best] = pre
        env = make_changing(means, self.noise_scale, post, SlotLaw.uniform(0.0, 1.0),
                            changed_beam=best)
        return env.with_change_slot(SlotLaw.uniform(0.0, 1.0).sample(self.frame_slots, rng))


SCENARIOS = {
    "stationary": StationaryScenario,
    "distance": DistanceScenario,
    "change": ChangeScenario,
    "blockage": BlockageScenario,
}


def early_window_law(T: int, n_beams: int, K: int) -> SlotLaw:
    """Change uniform over the K-SHES early window ``[0, safe_slot]``."""
    return SlotLaw.uniform(0, bounds.kshes_safe_slot(T, n_beams, K), relative=False)


def late_window_law(T: int, n_beams: int, K: int) -> SlotLaw:
    """Change uniform between the end of the last halving round and the deadline."""
    r_star = kshes_cut_round(n_beams, K)
    edge = int(bounds.sh_round_edges(T, n_beams)[r_star - 1]) if r_star > 0 else 0
    return SlotLaw.uniform(edge, T, relative=False)


# --- trial execution ---------------------------------------------------------------

@dataclass(frozen=True)
class PolicySpec:
    name: str
    K: int | None = None
    offset: int = 0
    min_samples: int = 0

    def __post_init__(self):
        if self.name not in POLICIES:
            raise ValueError(f"unknown policy {self.name!r}; expected one of {POLICIES}")

    @property
    def label(self) -> str:
        return self.name

    def run(self, env, T, rng, scenario=None):
        K = self.K
        if self.name == "kshes" and K is None:
            K = getattr(scenario, "top_k", None)
        gains = scenario.gains() if isinstance(scenario, DistanceScenario) else None
        return run_policy(self.name, env, T, rng, K=K, offset=self.offset,
                          gains=gains, min_samples=self.min_samples)


def _run_chunk(task) -> np.ndarray:
    scenario, policies, T, seed, point_id, start, stop = task
    out = np.zeros((stop - start, len(policies)), dtype=bool)
    for row, trial in enumerate(range(start, stop)):
        env = scenario(derive_rng(seed, point_id, trial, 0), T)
        truth = env.best_beam(T)
        for col, pol in enumerate(policies):
            outcome = pol.run(env, T, derive_rng(seed, point_id, trial, 1), scenario)
            out[row, col] = outcome.selected_beam != truth
    return out


def _chunks(trials: int, workers: int) -> list[tuple[int, int]]:
    size = max(1, math.ceil(trials / (4 * max(1, workers))))
    return [(s, min(trials, s + size)) for s in range(0, trials, size)]


def run_trials(scenario, policies: Sequence[PolicySpec], T: int, trials: int, seed: int,
               point_id: int = 0, workers: int = 1) -> np.ndarray:
    """Boolean error matrix of shape ``(trials, len(policies))``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    tasks = [(scenario, tuple(policies), T, seed, point_id, a, b) for a, b in _chunks(trials, workers)]
    if workers <= 1:
        parts = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    return np.concatenate(parts, axis=0)


def estimate_errors(scenario, policies, T, trials, seed, point=None, point_id=0, workers=1):
    t0 = time.perf_counter()
    matrix = run_trials(scenario, policies, T, trials, seed, point_id, workers)
    elapsed = time.perf_counter() - t0
    point = dict(point or {"T": T})
    return [ErrorEstimate.from_outcomes(p.label, point, matrix[:, i], elapsed)
            for i, p in enumerate(policies)]


def estimate_error(policy: PolicySpec | str, scenario, T: int, trials: int, seed: int,
                   workers: int = 1) -> ErrorEstimate:
    """Fraction of trials whose selection differs from the best beam at the deadline."""
    if isinstance(policy, str):
        policy = PolicySpec(policy)
    return estimate_errors(scenario, [policy], T, trials, seed, workers=workers)[0]


# --- sweeps ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentPlan:
    scenario: Any
    policies: tuple[PolicySpec, ...]
    T: int
    trials: int
    seed: int
    axes: dict[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.policies:
            raise ValueError("no policies")
        names = {f.name for f in fields(self.scenario)}
        for axis, values in self.axes.items():
            if len(values) == 0:
                raise ValueError(f"sweep axis {axis!r} is empty")
            if axis not in names | {"T", "K"}:
                raise ValueError(f"unknown sweep axis {axis!r}")

    def points(self) -> list[dict[str, Any]]:
        keys = list(self.axes)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.axes[k] for k in keys))]

    def resolve(self, point: dict[str, Any]):
        scen_kw = {k: v for k, v in point.items() if k not in ("T", "K")}
        scenario = replace(self.scenario, **scen_kw) if scen_kw else self.scenario
        T = int(point.get("T", self.T))
        policies = self.policies
        if "K" in point:
            policies = tuple(replace(p, K=int(point["K"])) if p.name == "kshes" else p
                             for p in policies)
        return scenario, T, policies


def run_comparison_sweep(plan: ExperimentPlan, workers: int = 1) -> list[ErrorEstimate]:
    rows = []
    for pid, point in enumerate(plan.points()):
        scenario, T, policies = plan.resolve(point)
        rows.extend(estimate_errors(scenario, policies, T, plan.trials, plan.seed,
                                    point={**point, "T": T}, point_id=pid, workers=workers))
    return rows


def run_change_location_study(scenario: ChangeScenario, T: int, trials: int, seed: int,
                              K: int | None = None, workers: int = 1) -> list[ErrorEstimate]:
    """SH vs K-SHES with the change confined to the early window or after round ``r*``."""
    K = K or scenario.top_k
    laws = {"early": early_window_law(T, scenario.n_beams, K),
            "late": late_window_law(T, scenario.n_beams, K)}
    policies = (PolicySpec("sh"), PolicySpec("kshes", K=K))
    rows = []
    for pid, (window, law) in enumerate(laws.items()):
        lo, hi = law.window(T)
        rows.extend(estimate_errors(replace(scenario, law=law), policies, T, trials, seed,
                                    point={"window": window, "t_lo": lo, "t_hi": hi, "T": T},
                                    point_id=pid, workers=workers))
    return rows


# --- rate case study ---------------------------------------------------------------------

def rate(n_beams: int, T: float, T_tot: float, bandwidth_hz: float, ref_snr: float,
         p_error: float, beam_gain: float = 1.0) -> float:
    """``(1 - P_e) (T_D / T_tot) W log2(1 + ref_snr * beam_gain)`` with ``T_D = T_tot - T``.

    ``n_beams`` only labels the point; the data-phase beamforming gain enters
    through ``beam_gain`` (1 gives the reference-SNR rate).
    """
    if not 0.0 <= p_error <= 1.0:
        raise ValueError("p_error must lie in [0, 1]")
    if not 0 <= T < T_tot:
        raise ValueError("need 0 <= T < T_tot")
    t_data = T_tot - T
    return (1.0 - p_error) * (t_data / T_tot) * bandwidth_hz * math.log2(1.0 + ref_snr * beam_gain)


def data_beam_gain(n_beams: int) -> float:
    """Boresight gain of a beam ``2pi/N`` wide, relative to an isotropic link: ``N``."""
    return 2.0 * math.pi / directivity_gain(n_beams)


@dataclass(frozen=True)
class RatePoint:
    n_beams: int
    fraction: float
    T: int
    p_error: float
    rate_bps: float
    feasible: bool = True


@dataclass
class CaseStudyResult:
    points: list[RatePoint]
    best_n: dict[float, int]
    best_fraction: dict[int, float]


def optimize_case_study(scenario: BlockageScenario, n_grid: Sequence[int], fractions: Sequence[float],
                        trials: int, seed: int, workers: int = 1) -> CaseStudyResult:
    """Estimate K-SHES error for every (N, budget fraction) and the resulting data rate."""
    if not n_grid or not fractions:
        raise ValueError("empty grid")
    policy = PolicySpec("kshes", K=1, min_samples=1)
    frame = scenario.frame_slots
    points = []
    pid = 0
    for n in n_grid:
        scen = replace(scenario, n_beams=int(n))
        for frac in fractions:
            T = int(math.floor(frac * frame))
            try:
                pe = estimate_errors(scen, [policy], T, trials, seed, point_id=pid, workers=workers)[0].error_rate
                feasible = True
            except BudgetError:
                pe, feasible = 1.0, False
            r = rate(n, T, frame, scen.channel.bandwidth_hz, scen.channel.ref_snr, pe,
                     beam_gain=data_beam_gain(n))
            points.append(RatePoint(int(n), float(frac), T, pe, r, feasible))
            pid += 1
    best_n = {}
    for frac in fractions:
        cands = [p for p in points if p.fraction == frac]
        best_n[float(frac)] = max(cands, key=lambda p: (p.rate_bps, -p.n_beams)).n_beams
    best_fraction = {}
    for n in n_grid:
        cands = [p for p in points if p.n_beams == n]
        best_fraction[int(n)] = max(cands, key=lambda p: (p.rate_bps, -p.fraction)).fraction
    return CaseStudyResult(points, best_n, best_fraction)


# --- artifacts ------------------------------------------------------------------------------

ESTIMATE_COLUMNS_VERSION = 1
BOUND_COLUMNS_VERSION = 1
RATE_COLUMNS_VERSION = 1


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def estimate_rows(estimates: Sequence[ErrorEstimate], seed: int) -> tuple[list[str], list[list[str]]]:
    axis_keys: list[str] = []
    for e in estimates:
        for k in e.point:
            if k not in axis_keys:
                axis_keys.append(k)
    header = ["policy", *axis_keys, "error", "ci_lo", "ci_hi", "errors", "trials", "seed"]
    rows = [[e.policy, *(_fmt(e.point.get(k, "")) for k in axis_keys), _fmt(e.error_rate),
             _fmt(e.ci_lo), _fmt(e.ci_hi), str(e.errors), str(e.trials), str(seed)]
            for e in estimates]
    return header, rows


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)  # default dialect: CRLF rows, minimal quoting
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_manifest(path: Path, config: dict, seed: int, artifacts: dict[str, dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "config": config,
        "seed": seed,
        "artifacts": artifacts,
        "created": datetime.now(timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default), encoding="utf-8")
    return path


def _json_default(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")

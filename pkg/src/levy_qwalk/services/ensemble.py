"""Disorder-averaged ensembles of walk realizations.

Realization ``i`` draws its step lengths from a generator seeded with
``realization_seed(master_seed, i)``, so every realization is independent of
scheduling. Realizations are grouped into fixed blocks whose boundaries
depend only on ``n_config``; blocks accumulate with Welford updates and are
merged in block order, which makes the averages bit-identical for any
worker count.
"""

import time
from collections import deque
from concurrent.futures import Future, ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
import structlog

from levy_qwalk.core.exceptions import (
    ConsistencyError,
    ParameterDomainError,
    RealizationError,
    WalkError,
)
from levy_qwalk.models.schemas import UINT64_MAX, RunConfig
from levy_qwalk.services.observables import (
    ObservableSeries,
    ProbabilityProfile,
    coin_density_from_components,
    moments,
    range_width,
    reduced_coin_density,
    von_neumann_entropy,
)
from levy_qwalk.services.steplen import (
    StepLengthDistribution,
    build_distribution,
    empirical_pmf,
    sample_steps,
    total_variation,
)
from levy_qwalk.services.walker import init_state, probability_profile, step, total_norm

logger = structlog.get_logger()

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

REALIZATIONS_PER_BLOCK = 8
# Finished blocks are folded in block order; at most this many per worker wait unmerged.
BLOCKS_IN_FLIGHT_PER_WORKER = 2
NORM_TOLERANCE = 1e-10

_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def realization_seed(master_seed: int, index: int) -> int:
    """SplitMix64 finalizer applied to ``master_seed ^ index``."""
    if not 0 <= master_seed <= UINT64_MAX or not 0 <= index <= UINT64_MAX:
        raise ParameterDomainError(
            "seed and index must be unsigned 64-bit integers",
            {"master_seed": master_seed, "index": index},
        )
    z = ((master_seed ^ index) + _GOLDEN_GAMMA) & UINT64_MAX
    z = ((z ^ (z >> 30)) * _MIX1) & UINT64_MAX
    z = ((z ^ (z >> 27)) * _MIX2) & UINT64_MAX
    return z ^ (z >> 31)


def padded_positions(t: int, lmax: int) -> IntArray:
    """Every position reachable at time t: [-lmax t, lmax t]."""
    return np.arange(-lmax * t, lmax * t + 1, dtype=np.int64)


@dataclass
class RealizationResult:
    """Everything one realization contributes to an ensemble.

    ``rho`` rows are rho_LL, rho_RR, Re rho_LR and Im rho_LR per time step.
    Snapshot profiles are padded to the full reachable window.
    """

    index: int
    seed: int
    series: ObservableSeries
    snapshots: dict[int, ProbabilityProfile]
    rho: FloatArray
    step_counts: IntArray


def run_realization(
    config: RunConfig,
    index: int,
    dist: StepLengthDistribution | None = None,
) -> RealizationResult:
    """Evolve one disorder realization for ``config.t_max`` steps."""
    dist = dist or build_distribution(config.delta, config.lmax)
    seed = realization_seed(config.master_seed, index)
    rng = np.random.default_rng(seed)
    lengths = sample_steps(dist, rng, config.t_max)

    state = init_state(
        config.coin, lmax=config.lmax, t_max=config.t_max, convention=config.convention
    )
    n = config.t_max
    mean_x = np.empty(n)
    mean_x2 = np.empty(n)
    ranges = np.empty(n)
    entropy = np.empty(n)
    rho = np.empty((4, n))
    snapshot_times = set(config.snapshot_times)
    snapshots: dict[int, ProbabilityProfile] = {}

    for i, ell in enumerate(lengths.tolist()):
        step(state, ell)
        norm = total_norm(state)
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ConsistencyError(
                "norm drifted from 1 during evolution",
                {"t": state.t, "norm": norm, "tolerance": NORM_TOLERANCE},
            )
        profile = probability_profile(state)
        mean_x[i], mean_x2[i] = moments(profile)
        ranges[i] = range_width(profile, config.range_threshold)
        density = reduced_coin_density(state)
        entropy[i] = von_neumann_entropy(density)
        rho[:, i] = (
            density.rho[0, 0].real,
            density.rho[1, 1].real,
            density.rho[0, 1].real,
            density.rho[0, 1].imag,
        )
        if state.t in snapshot_times:
            xs = padded_positions(state.t, config.lmax)
            f = np.zeros(len(xs))
            start = int(profile.xs[0] - xs[0])
            f[start : start + len(profile.f)] = profile.f
            snapshots[state.t] = ProbabilityProfile(t=state.t, xs=xs, f=f)

    series = ObservableSeries(
        ts=np.arange(1, n + 1, dtype=np.int64),
        mean_x=mean_x,
        mean_x2=mean_x2,
        range=ranges,
        entropy=entropy,
        entropy_of_mean_rho=entropy.copy(),
    )
    counts = np.bincount(lengths - 1, minlength=config.lmax).astype(np.int64)
    return RealizationResult(
        index=index, seed=seed, series=series, snapshots=snapshots, rho=rho, step_counts=counts
    )


@dataclass
class RunningMoments:
    """Elementwise Welford mean and sum of squared deviations."""

    count: int = 0
    mean: FloatArray = field(default_factory=lambda: np.zeros(0))
    m2: FloatArray = field(default_factory=lambda: np.zeros(0))

    def add(self, values: FloatArray) -> None:
        if self.count == 0:
            self.mean = np.zeros_like(values)
            self.m2 = np.zeros_like(values)
        self.count += 1
        delta = values - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (values - self.mean)

    def merge(self, other: "RunningMoments") -> None:
        """Chan's pairwise combination; ``other`` holds later realizations."""
        if other.count == 0:
            return
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean.copy(), other.m2.copy()
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / total)
        self.m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / total)
        self.count = total

    def stderr(self) -> FloatArray:
        """Sample standard deviation over sqrt(count); zero for fewer than two samples."""
        if self.count < 2:
            return np.zeros_like(self.mean)
        variance = np.maximum(self.m2, 0.0) / (self.count - 1)
        return np.sqrt(variance / self.count)


@dataclass
class BlockSummary:
    """Accumulated contributions of a contiguous range of realizations."""

    start: int
    stop: int
    series: RunningMoments = field(default_factory=RunningMoments)
    rho: RunningMoments = field(default_factory=RunningMoments)
    snapshots: dict[int, RunningMoments] = field(default_factory=dict)
    step_counts: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    seeds: list[int] = field(default_factory=list)

    def add(self, result: RealizationResult) -> None:
        s = result.series
        self.series.add(np.stack([s.mean_x, s.mean_x2, s.range, s.entropy]))
        self.rho.add(result.rho)
        for t, profile in result.snapshots.items():
            self.snapshots.setdefault(t, RunningMoments()).add(profile.f)
        if self.step_counts.size == 0:
            self.step_counts = np.zeros_like(result.step_counts)
        self.step_counts = self.step_counts + result.step_counts
        self.seeds.append(result.seed)

    def merge(self, other: "BlockSummary") -> None:
        self.series.merge(other.series)
        self.rho.merge(other.rho)
        for t, moments_t in other.snapshots.items():
            self.snapshots.setdefault(t, RunningMoments()).merge(moments_t)
        if self.step_counts.size == 0:
            self.step_counts = np.zeros_like(other.step_counts)
        self.step_counts = self.step_counts + other.step_counts
        self.seeds.extend(other.seeds)
        self.stop = other.stop


def run_block(config: RunConfig, start: int, stop: int) -> BlockSummary:
    """Run realizations ``start .. stop - 1`` in index order."""
    dist = build_distribution(config.delta, config.lmax)
    summary = BlockSummary(start=start, stop=stop)
    for index in range(start, stop):
        try:
            result = run_realization(config, index, dist)
        except WalkError as e:
            raise RealizationError(
                f"realization {index} failed: {e.message}",
                {"index": index, "error": type(e).__name__, **e.details},
            ) from e
        summary.add(result)
    return summary


@dataclass
class EnsembleResult:
    """Disorder averages of one grid point."""

    config: RunConfig
    series: ObservableSeries
    snapshots: dict[int, ProbabilityProfile]
    step_pmf: FloatArray
    empirical_step_pmf: FloatArray
    step_pmf_total_variation: float
    realization_seeds: list[int]
    wall_time_s: float = 0.0


def block_bounds(n_config: int) -> list[tuple[int, int]]:
    """Fixed realization blocks; independent of the worker count."""
    return [
        (start, min(start + REALIZATIONS_PER_BLOCK, n_config))
        for start in range(0, n_config, REALIZATIONS_PER_BLOCK)
    ]


def _summarize(config: RunConfig, total: BlockSummary, wall_time_s: float) -> EnsembleResult:
    dist = build_distribution(config.delta, config.lmax)
    n = config.t_max
    means = total.series.mean
    errors = total.series.stderr()

    rho_mean = total.rho.mean
    entropy_of_mean_rho = np.array(
        [
            von_neumann_entropy(
                coin_density_from_components(
                    rho_mean[0, i], rho_mean[1, i], complex(rho_mean[2, i], rho_mean[3, i])
                )
            )
            for i in range(n)
        ]
    )
    series = ObservableSeries(
        ts=np.arange(1, n + 1, dtype=np.int64),
        mean_x=means[0],
        mean_x2=means[1],
        range=means[2],
        entropy=means[3],
        entropy_of_mean_rho=entropy_of_mean_rho,
        stderr_x=errors[0],
        stderr_x2=errors[1],
        stderr_range=errors[2],
        stderr_entropy=errors[3],
    )
    snapshots = {
        t: ProbabilityProfile(
            t=t,
            xs=padded_positions(t, config.lmax),
            f=acc.mean,
            n_realizations=acc.count,
            stderr=acc.stderr(),
        )
        for t, acc in sorted(total.snapshots.items())
    }
    observed = empirical_pmf(total.step_counts)
    return EnsembleResult(
        config=config,
        series=series,
        snapshots=snapshots,
        step_pmf=np.array(dist.pmf),
        empirical_step_pmf=observed,
        step_pmf_total_variation=total_variation(dist, observed),
        realization_seeds=total.seeds,
        wall_time_s=wall_time_s,
    )


def run_ensemble(config: RunConfig, workers: int = 1) -> EnsembleResult:
    """Average ``config.n_config`` realizations over a pool of ``workers`` processes."""
    if workers < 1:
        raise ParameterDomainError("workers must be at least 1", {"workers": workers})

    bounds = block_bounds(config.n_config)
    logger.info(
        "Ensemble started",
        delta=config.delta,
        lmax=config.lmax,
        t_max=config.t_max,
        n_config=config.n_config,
        workers=workers,
        blocks=len(bounds),
    )
    started = time.perf_counter()

    total = BlockSummary(start=0, stop=0)
    if workers == 1 or len(bounds) == 1:
        for start, stop in bounds:
            total.merge(run_block(config, start, stop))
    else:
        pool_size = min(workers, len(bounds))
        window = BLOCKS_IN_FLIGHT_PER_WORKER * pool_size
        pending: deque[Future[BlockSummary]] = deque()
        with ProcessPoolExecutor(max_workers=pool_size) as pool:
            for start, stop in bounds:
                if len(pending) == window:
                    total.merge(pending.popleft().result())
                pending.append(pool.submit(run_block, config, start, stop))
            while pending:
                total.merge(pending.popleft().result())

    wall_time_s = time.perf_counter() - started
    result = _summarize(config, total, wall_time_s)
    logger.info(
        "Ensemble finished",
        delta=config.delta,
        lmax=config.lmax,
        wall_time_s=round(wall_time_s, 3),
        step_pmf_total_variation=result.step_pmf_total_variation,
    )
    return result

"""Tests for seeding, realizations and ensemble reduction."""

import math
import pickle
from collections.abc import Callable
from typing import Any

import numpy as np
import pytest

from levy_qwalk.cli.commands import EXIT_CONSISTENCY_ERROR, exit_code_for
from levy_qwalk.core.exceptions import (
    ConsistencyError,
    ParameterDomainError,
    RealizationError,
    WalkError,
)
from levy_qwalk.models.schemas import Moment, RunConfig
from levy_qwalk.services import ensemble as ensemble_module
from levy_qwalk.services.ensemble import (
    BLOCKS_IN_FLIGHT_PER_WORKER,
    REALIZATIONS_PER_BLOCK,
    RunningMoments,
    block_bounds,
    realization_seed,
    run_ensemble,
    run_realization,
)
from levy_qwalk.services.observables import moments
from levy_qwalk.services.scaling import fit_growth_exponent
from levy_qwalk.services.walker import WalkerState


def test_seed_is_deterministic() -> None:
    assert realization_seed(20240601, 17) == realization_seed(20240601, 17)
    assert realization_seed(20240601, 17) != realization_seed(20240601, 18)
    assert 0 <= realization_seed(2**64 - 1, 2**64 - 1) < 2**64


def test_seeds_unique_over_a_million_indices() -> None:
    """No two realizations under one master seed share a seed."""
    seeds = {realization_seed(99, i) for i in range(1_000_000)}
    assert len(seeds) == 1_000_000


def test_seed_avalanche() -> None:
    """Flipping one master-seed bit changes about half the derived-seed bits."""
    rng = np.random.default_rng(0)
    flipped = []
    for _ in range(200):
        master = int(rng.integers(0, 2**63))
        bit = int(rng.integers(0, 64))
        for index in range(5):
            diff = realization_seed(master, index) ^ realization_seed(master ^ (1 << bit), index)
            flipped.append(bin(diff).count("1") / 64)
    assert np.mean(flipped) >= 0.49


@pytest.mark.parametrize(("master", "index"), [(-1, 0), (0, -1), (2**64, 0)])
def test_seed_domain(master: int, index: int) -> None:
    with pytest.raises(ParameterDomainError):
        realization_seed(master, index)


def test_realization_is_reproducible(small_config: RunConfig) -> None:
    """Same config and index give bitwise-identical output."""
    first = run_realization(small_config, 3)
    second = run_realization(small_config, 3)
    assert first.seed == second.seed
    assert np.array_equal(first.series.mean_x2, second.series.mean_x2)
    assert np.array_equal(first.rho, second.rho)
    for t, profile in first.snapshots.items():
        assert np.array_equal(profile.f, second.snapshots[t].f)


def test_realization_without_disorder_matches_ordered_walk() -> None:
    """With lmax = 1 every index and delta gives the same trajectory."""
    a = run_realization(RunConfig(delta=0.0, lmax=1, t_max=50, n_config=1), 0)
    b = run_realization(RunConfig(delta=3.0, lmax=1, t_max=50, n_config=1, master_seed=5), 9)
    assert np.array_equal(a.series.mean_x, b.series.mean_x)
    assert np.array_equal(a.series.entropy, b.series.entropy)
    assert a.step_counts.tolist() == [50]


def test_snapshot_window_bound() -> None:
    """At t = 2 with lmax = 4 the profile lives on [-8, 8]."""
    config = RunConfig(delta=0.0, lmax=4, t_max=2, n_config=1, snapshot_times=(1, 2))
    result = run_realization(config, 0)
    profile = result.snapshots[2]
    assert profile.xs[0] == -8
    assert profile.xs[-1] == 8
    assert profile.total == pytest.approx(1.0, abs=1e-12)


def test_single_realization_ensemble(small_config: RunConfig) -> None:
    """n_config = 1 reproduces realization 0 with zero standard errors."""
    config = small_config.model_copy(update={"n_config": 1})
    ensemble = run_ensemble(config)
    single = run_realization(config, 0)
    assert np.array_equal(ensemble.series.mean_x, single.series.mean_x)
    assert np.array_equal(ensemble.series.mean_x2, single.series.mean_x2)
    assert np.array_equal(ensemble.series.entropy, single.series.entropy)
    assert np.all(ensemble.series.stderr_x == 0)
    assert np.all(ensemble.series.stderr_entropy == 0)
    assert ensemble.realization_seeds == [single.seed]


def test_degenerate_ensemble_has_zero_stderr() -> None:
    """lmax = 1 realizations are identical, so errors are exactly zero."""
    config = RunConfig(delta=1.0, lmax=1, t_max=30, n_config=100)
    ensemble = run_ensemble(config)
    single = run_realization(config, 0)
    np.testing.assert_allclose(ensemble.series.mean_x, single.series.mean_x, rtol=0, atol=1e-12)
    for errors in (
        ensemble.series.stderr_x,
        ensemble.series.stderr_x2,
        ensemble.series.stderr_range,
        ensemble.series.stderr_entropy,
    ):
        assert np.all(errors == 0.0)
    for profile in ensemble.snapshots.values():
        assert np.all(profile.stderr == 0.0)


def test_worker_count_does_not_change_results(small_config: RunConfig) -> None:
    """Serial and pooled runs agree bit for bit."""
    serial = run_ensemble(small_config, workers=1)
    pooled = run_ensemble(small_config, workers=3)
    assert len(block_bounds(small_config.n_config)) > 1
    assert np.array_equal(serial.series.mean_x, pooled.series.mean_x)
    assert np.array_equal(serial.series.stderr_x2, pooled.series.stderr_x2)
    assert np.array_equal(serial.series.entropy_of_mean_rho, pooled.series.entropy_of_mean_rho)
    assert serial.realization_seeds == pooled.realization_seeds
    for t, profile in serial.snapshots.items():
        assert np.array_equal(profile.f, pooled.snapshots[t].f)


def test_ensemble_prefix_property(small_config: RunConfig) -> None:
    """Growing n_config keeps the seeds of the first realizations."""
    smaller = run_ensemble(small_config.model_copy(update={"n_config": 5}))
    larger = run_ensemble(small_config)
    assert larger.realization_seeds[:5] == smaller.realization_seeds


def test_averaged_profile_moments_match_averaged_moments(small_config: RunConfig) -> None:
    """Moments are linear in f, so both averaging orders agree."""
    ensemble = run_ensemble(small_config)
    for t, profile in ensemble.snapshots.items():
        assert profile.total == pytest.approx(1.0, abs=1e-10)
        mean_x, mean_x2 = moments(profile)
        assert mean_x == pytest.approx(ensemble.series.mean_x[t - 1], abs=1e-12)
        assert mean_x2 == pytest.approx(ensemble.series.mean_x2[t - 1], rel=1e-12)


def test_entropy_of_mean_rho_bounded(small_config: RunConfig) -> None:
    """Mixing realizations cannot lower the coin entropy below the average entropy."""
    series = run_ensemble(small_config).series
    assert np.all(series.entropy_of_mean_rho >= series.entropy - 1e-12)
    assert np.all(series.entropy_of_mean_rho <= 1.0 + 1e-12)


def test_empirical_step_pmf_close_to_exact() -> None:
    """Total variation is below 3 sqrt(lmax / (n_config t_max))."""
    config = RunConfig(delta=1.0, lmax=4, t_max=200, n_config=24)
    result = run_ensemble(config)
    bound = 3 * math.sqrt(config.lmax / (config.n_config * config.t_max))
    assert result.step_pmf_total_variation < bound
    assert result.empirical_step_pmf.sum() == pytest.approx(1.0)


def test_running_moments_merge_equals_sequential() -> None:
    """Chan's merge reproduces sequential Welford accumulation."""
    rng = np.random.default_rng(1)
    samples = rng.normal(size=(REALIZATIONS_PER_BLOCK * 2 + 3, 5))
    sequential = RunningMoments()
    for row in samples:
        sequential.add(row)
    head, tail = RunningMoments(), RunningMoments()
    for row in samples[:7]:
        head.add(row)
    for row in samples[7:]:
        tail.add(row)
    head.merge(tail)
    np.testing.assert_allclose(head.mean, sequential.mean, atol=1e-14)
    np.testing.assert_allclose(head.stderr(), sequential.stderr(), atol=1e-14)
    np.testing.assert_allclose(
        sequential.stderr(), samples.std(axis=0, ddof=1) / math.sqrt(len(samples)), atol=1e-14
    )


def test_block_bounds() -> None:
    assert block_bounds(1) == [(0, 1)]
    assert block_bounds(20) == [(0, 8), (8, 16), (16, 20)]


def test_realization_errors_carry_the_index() -> None:
    """Failures inside a worker keep their index and details across pickling."""
    error = RealizationError("realization 4 failed", {"index": 4, "error": "CapacityError"})
    restored = pickle.loads(pickle.dumps(error))
    assert isinstance(restored, WalkError)
    assert restored.details["index"] == 4
    assert restored.message == "realization 4 failed"


def test_invalid_worker_count(small_config: RunConfig) -> None:
    with pytest.raises(ParameterDomainError):
        run_ensemble(small_config, workers=0)


class InlineFuture:
    """Runs its block when the result is first asked for."""

    def __init__(
        self, executor: "InlineExecutor", fn: Callable[..., Any], args: tuple[Any, ...]
    ) -> None:
        self.executor = executor
        self.fn = fn
        self.args = args

    def result(self) -> Any:
        self.executor.outstanding -= 1
        return self.fn(*self.args)


class InlineExecutor:
    """Single-process stand-in for the pool that records how many blocks wait unmerged."""

    peak = 0

    def __init__(self, max_workers: int) -> None:
        self.max_workers = max_workers
        self.outstanding = 0

    def __enter__(self) -> "InlineExecutor":
        return self

    def __exit__(self, *exc_info: object) -> None:
        return None

    def submit(self, fn: Callable[..., Any], *args: Any) -> InlineFuture:
        self.outstanding += 1
        InlineExecutor.peak = max(InlineExecutor.peak, self.outstanding)
        return InlineFuture(self, fn, args)


def test_pooled_blocks_are_merged_as_they_finish(monkeypatch: pytest.MonkeyPatch) -> None:
    """Only a bounded window of block summaries is held at once."""
    monkeypatch.setattr(ensemble_module, "ProcessPoolExecutor", InlineExecutor)
    monkeypatch.setattr(InlineExecutor, "peak", 0)
    config = RunConfig(delta=1.0, lmax=3, t_max=10, n_config=10 * REALIZATIONS_PER_BLOCK)

    pooled = run_ensemble(config, workers=2)
    assert InlineExecutor.peak == BLOCKS_IN_FLIGHT_PER_WORKER * 2

    serial = run_ensemble(config, workers=1)
    assert np.array_equal(serial.series.mean_x2, pooled.series.mean_x2)
    assert np.array_equal(serial.series.stderr_range, pooled.series.stderr_range)
    assert serial.realization_seeds == pooled.realization_seeds


def test_norm_drift_stops_the_realization(
    small_config: RunConfig, monkeypatch: pytest.MonkeyPatch
) -> None:
    """A step that leaks probability is caught at the step where it happens."""
    real_step = ensemble_module.step

    def leaky_step(state: WalkerState, ell: int) -> WalkerState:
        real_step(state, ell)
        state.psi_L *= 1.0 + 1e-6
        return state

    monkeypatch.setattr(ensemble_module, "step", leaky_step)
    with pytest.raises(ConsistencyError) as excinfo:
        run_realization(small_config, 0)
    assert excinfo.value.details["t"] == 1
    assert excinfo.value.details["norm"] > 1.0

    with pytest.raises(RealizationError) as wrapped:
        run_ensemble(small_config, workers=1)
    assert wrapped.value.details["error"] == "ConsistencyError"
    assert wrapped.value.details["index"] == 0
    assert exit_code_for(wrapped.value) == EXIT_CONSISTENCY_ERROR


def test_unitary_evolution_passes_the_norm_check() -> None:
    config = RunConfig(delta=0.5, lmax=8, t_max=400, n_config=1)
    result = run_realization(config, 3)
    assert result.series.mean_x2[-1] > 0.0


@pytest.mark.slow
def test_superdiffusive_growth() -> None:
    """(delta=1, lmax=4): <x^2> grows as t^1.5 over t in [500, 2000]."""
    config = RunConfig(delta=1.0, lmax=4, t_max=2000, n_config=500)
    result = run_ensemble(config, workers=4)
    assert fit_growth_exponent(result.series, Moment.SECOND, 500, 2000) == pytest.approx(
        1.5, abs=0.1
    )

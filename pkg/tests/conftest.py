"""Pytest fixtures for levy-qwalk tests."""

from collections.abc import Callable
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pytest

from levy_qwalk.models.schemas import CoinAmplitudes, CoinPreset, RunConfig
from levy_qwalk.services.observables import ObservableSeries

SeriesFactory = Callable[[npt.ArrayLike, npt.ArrayLike, npt.ArrayLike], ObservableSeries]


@pytest.fixture
def paper_coin() -> CoinAmplitudes:
    """Asymmetric initial coin state (sqrt(1/3), sqrt(2/3))."""
    return CoinAmplitudes.from_preset(CoinPreset.PAPER_ASYMMETRIC)


@pytest.fixture
def right_coin() -> CoinAmplitudes:
    """Walker starting in the right coin state only."""
    return CoinAmplitudes.from_preset(CoinPreset.RIGHT_ONLY)


@pytest.fixture
def small_config() -> RunConfig:
    """A disordered run small enough for every test."""
    return RunConfig(delta=1.0, lmax=4, t_max=40, n_config=20, master_seed=7)


@pytest.fixture
def ordered_config() -> RunConfig:
    """lmax = 1: the walk without disorder."""
    return RunConfig(delta=0.0, lmax=1, t_max=100, n_config=1)


@pytest.fixture
def make_series() -> SeriesFactory:
    """Build an ObservableSeries from moments; range and entropy are zero."""

    def _make(ts: npt.ArrayLike, mean_x: npt.ArrayLike, mean_x2: npt.ArrayLike) -> ObservableSeries:
        ts = np.asarray(ts, dtype=np.int64)
        zeros = np.zeros(len(ts))
        return ObservableSeries(
            ts=ts,
            mean_x=np.asarray(mean_x, dtype=np.float64),
            mean_x2=np.asarray(mean_x2, dtype=np.float64),
            range=zeros,
            entropy=zeros,
            entropy_of_mean_rho=zeros,
        )

    return _make


@pytest.fixture
def write_manifest(tmp_path: Path) -> Callable[[str], Path]:
    """Write a TOML manifest into tmp_path and return its path."""

    def _write(body: str) -> Path:
        path = tmp_path / "manifest.toml"
        path.write_text(body, encoding="utf-8")
        return path

    return _write

"""Tests for the truncated power-law step-length distribution."""

import math

import numpy as np
import pytest
from scipy.stats import chisquare

from levy_qwalk.core.exceptions import ParameterDomainError
from levy_qwalk.services.steplen import (
    build_distribution,
    empirical_pmf,
    pmf_at,
    sample_step,
    sample_steps,
    step_for_variate,
    total_variation,
    two_length_pmf,
)


@pytest.mark.parametrize("delta", [0.0, 0.5, 1.0, 3.0, 8.0])
def test_single_length_forces_pmf_one(delta: float) -> None:
    """With lmax = 1 every step has length 1."""
    dist = build_distribution(delta, 1)
    assert dist.pmf.tolist() == [1.0]
    assert pmf_at(dist, 1) == 1.0


def test_flat_exponent_four_lengths() -> None:
    """delta = 0, lmax = 4: A = 12/25 and pmf = [0.48, 0.24, 0.16, 0.12]."""
    dist = build_distribution(0.0, 4)
    assert dist.norm_A == pytest.approx(12 / 25, abs=1e-15)
    np.testing.assert_allclose(dist.pmf, [0.48, 0.24, 0.16, 0.12], atol=1e-15)
    assert pmf_at(dist, 3) == pytest.approx(0.16, abs=1e-15)


def test_two_lengths_match_closed_form() -> None:
    """lmax = 2 reproduces the two-length walk."""
    dist = build_distribution(1.0, 2)
    np.testing.assert_allclose(dist.pmf, [0.8, 0.2], atol=1e-15)
    assert pmf_at(dist, 2) == pytest.approx(0.2, abs=1e-15)
    for delta in (0.0, 0.7, 2.5):
        np.testing.assert_allclose(
            build_distribution(delta, 2).pmf, two_length_pmf(delta), atol=1e-15
        )


@pytest.mark.parametrize("lmax", [1, 2, 4, 12, 100])
@pytest.mark.parametrize("delta", [0.0, 0.5, 1.0, 4.0, 50.0, 800.0])
def test_pmf_normalized(delta: float, lmax: int) -> None:
    """The pmf sums to one and the cdf ends at exactly one."""
    dist = build_distribution(delta, lmax)
    assert math.fsum(dist.pmf.tolist()) == pytest.approx(1.0, abs=1e-12)
    assert dist.cdf[-1] == 1.0
    assert np.all(np.diff(dist.cdf) >= 0)


@pytest.mark.parametrize("delta", [0.0, 1.0, 2.5])
def test_pmf_ratio_independent_of_cutoff(delta: float) -> None:
    """pmf(l) / pmf(1) = l^(-1-delta) whatever lmax is."""
    for lmax in (4, 12):
        dist = build_distribution(delta, lmax)
        for ell in range(1, lmax + 1):
            assert pmf_at(dist, ell) / pmf_at(dist, 1) == pytest.approx(
                ell ** (-1.0 - delta), rel=1e-13
            )


def test_distribution_arrays_are_read_only() -> None:
    """Distributions are shared between workers and cannot be mutated."""
    dist = build_distribution(1.0, 4)
    with pytest.raises(ValueError):
        dist.pmf[0] = 0.5


@pytest.mark.parametrize(("delta", "lmax"), [(-0.1, 4), (1.0, 0), (math.nan, 4), (math.inf, 4)])
def test_invalid_parameters_rejected(delta: float, lmax: int) -> None:
    """Negative or non-finite delta and lmax < 1 are domain errors."""
    with pytest.raises(ParameterDomainError):
        build_distribution(delta, lmax)


@pytest.mark.parametrize("ell", [0, 5])
def test_pmf_at_out_of_range(ell: int) -> None:
    """Lengths outside [1, lmax] are domain errors."""
    with pytest.raises(ParameterDomainError):
        pmf_at(build_distribution(1.0, 4), ell)


def test_inverse_cdf_lookup() -> None:
    """u = 0.40 maps to l = 1 since cdf(1) = 0.48 >= u."""
    dist = build_distribution(0.0, 4)
    assert step_for_variate(dist, 0.40) == 1
    assert step_for_variate(dist, 0.0) == 1
    assert step_for_variate(dist, 0.5) == 2
    assert step_for_variate(dist, 0.999999) == 4
    assert step_for_variate(build_distribution(3.0, 1), 0.73) == 1


def test_vectorized_sampling_matches_single_draws() -> None:
    """sample_steps consumes one variate per step in order."""
    dist = build_distribution(1.0, 12)
    batch = sample_steps(dist, np.random.default_rng(11), 500)
    rng = np.random.default_rng(11)
    singles = [sample_step(dist, rng) for _ in range(500)]
    assert batch.tolist() == singles
    assert batch.min() >= 1
    assert batch.max() <= 12


def test_empirical_frequencies_two_lengths() -> None:
    """10^6 samples at (delta=1, lmax=2) land within 3 standard errors of [0.8, 0.2]."""
    n = 1_000_000
    dist = build_distribution(1.0, 2)
    lengths = sample_steps(dist, np.random.default_rng(2024), n)
    observed = empirical_pmf(np.bincount(lengths - 1, minlength=2))
    stderr = math.sqrt(0.8 * 0.2 / n)
    assert abs(observed[0] - 0.8) < 3 * stderr
    assert abs(observed[1] - 0.2) < 3 * stderr


@pytest.mark.parametrize(("delta", "lmax"), [(0.0, 4), (1.0, 4), (0.5, 12), (2.0, 12)])
def test_sampling_goodness_of_fit(delta: float, lmax: int) -> None:
    """Chi-square test of 10^6 samples passes at the 0.1% level."""
    n = 1_000_000
    dist = build_distribution(delta, lmax)
    counts = np.bincount(sample_steps(dist, np.random.default_rng(99), n) - 1, minlength=lmax)
    result = chisquare(counts, f_exp=dist.pmf * n)
    assert result.pvalue > 1e-3


def test_total_variation() -> None:
    """Distance is zero for the exact pmf and one for a disjoint one."""
    dist = build_distribution(0.0, 2)
    assert total_variation(dist, np.array(dist.pmf)) == 0.0
    assert total_variation(build_distribution(800.0, 2), np.array([0.0, 1.0])) == pytest.approx(1.0)
    with pytest.raises(ParameterDomainError):
        total_variation(dist, np.array([1.0]))


def test_empirical_pmf_of_no_samples() -> None:
    """No counts give an all-zero pmf rather than NaN."""
    assert empirical_pmf(np.zeros(3, dtype=np.int64)).tolist() == [0.0, 0.0, 0.0]


def test_metadata_echo() -> None:
    """Distribution parameters are echoed for meta.json."""
    echo = build_distribution(0.0, 4).to_metadata()
    assert echo.delta == 0.0
    assert echo.lmax == 4
    assert echo.norm_A == pytest.approx(0.48)

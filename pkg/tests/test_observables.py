"""Tests for moments, range and coin entanglement."""

import math

import numpy as np
import pytest

from levy_qwalk.core.exceptions import ConsistencyError
from levy_qwalk.models.schemas import CoinAmplitudes, CoinConvention
from levy_qwalk.services.observables import (
    CoinDensityMatrix,
    ProbabilityProfile,
    coin_density_from_components,
    moments,
    range_width,
    reduced_coin_density,
    variance,
    von_neumann_entropy,
)
from levy_qwalk.services.walker import init_state, probability_profile, step, total_norm


def profile_of(values: dict[int, float], t: int = 1) -> ProbabilityProfile:
    xs = np.arange(min(values), max(values) + 1, dtype=np.int64)
    f = np.array([values.get(int(x), 0.0) for x in xs])
    return ProbabilityProfile(t=t, xs=xs, f=f)


@pytest.mark.parametrize(
    ("values", "expected"),
    [
        ({0: 1.0}, (0.0, 0.0)),
        ({-1: 0.5, 1: 0.5}, (0.0, 1.0)),
        ({-2: 0.25, 0: 0.5, 2: 0.25}, (0.0, 2.0)),
        ({3: 1.0}, (3.0, 9.0)),
    ],
)
def test_moments(values: dict[int, float], expected: tuple[float, float]) -> None:
    """First and second moments of small profiles."""
    assert moments(profile_of(values)) == pytest.approx(expected)


def test_variance() -> None:
    assert variance(profile_of({0: 0.5, 2: 0.5})) == pytest.approx(1.0)


def test_unnormalized_profile_rejected() -> None:
    """A profile off by more than 1e-6 is a consistency error."""
    with pytest.raises(ConsistencyError):
        moments(profile_of({0: 0.5, 1: 0.4}))


@pytest.mark.parametrize(
    ("values", "expected"),
    [({0: 1.0}, 0.0), ({-3: 0.5, 3: 0.5}, 6.0), ({-2: 1e-13, 0: 1.0, 4: 1e-11}, 4.0)],
)
def test_range_width(values: dict[int, float], expected: float) -> None:
    """Width between the outermost sites above the threshold."""
    assert range_width(profile_of(values)) == expected


def test_range_width_of_empty_profile() -> None:
    assert range_width(ProbabilityProfile(t=1, xs=np.array([0]), f=np.array([0.0]))) == 0.0


def test_density_of_product_state() -> None:
    """A fresh walker has the rank-1 coin projector and zero entropy."""
    coin = CoinAmplitudes.from_user_input(0.6, 0.8)
    rho = reduced_coin_density(init_state(coin))
    expected = np.array([[0.64, 0.48], [0.48, 0.36]])
    np.testing.assert_allclose(rho.rho, expected, atol=1e-15)
    assert rho.eigenvalues()[1] == pytest.approx(0.0, abs=1e-15)
    assert von_neumann_entropy(rho) == pytest.approx(0.0, abs=1e-12)


def test_density_after_one_step(right_coin: CoinAmplitudes) -> None:
    """After one step the halves sit on different sites: rho = diag(1/2, 1/2), S = 1."""
    rho = reduced_coin_density(step(init_state(right_coin, lmax=1, t_max=1), 1))
    np.testing.assert_allclose(rho.rho, np.diag([0.5, 0.5]), atol=1e-15)
    assert von_neumann_entropy(rho) == pytest.approx(1.0, abs=1e-12)


def test_entropy_of_known_spectrum() -> None:
    """Eigenvalues (0.9, 0.1) give S = 0.4690 bits."""
    rho = coin_density_from_components(0.9, 0.1, 0j)
    assert von_neumann_entropy(rho) == pytest.approx(
        -0.9 * math.log2(0.9) - 0.1 * math.log2(0.1), abs=1e-12
    )
    assert von_neumann_entropy(rho) == pytest.approx(0.4690, abs=1e-4)


def test_entropy_rejects_unphysical_spectrum() -> None:
    """Eigenvalues outside [0, 1] are a consistency error."""
    with pytest.raises(ConsistencyError):
        von_neumann_entropy(coin_density_from_components(1.5, -0.5, 0j))


def test_density_is_hermitian_with_norm_trace(paper_coin: CoinAmplitudes) -> None:
    """rho stays Hermitian with trace equal to the norm, and S > 0 after the first step."""
    lengths = np.random.default_rng(8).integers(1, 5, size=200).tolist()
    state = init_state(paper_coin, lmax=4, t_max=200)
    for ell in lengths:
        step(state, ell)
        rho = reduced_coin_density(state)
        assert rho.is_hermitian()
        assert rho.trace == pytest.approx(total_norm(state), abs=1e-12)
        assert von_neumann_entropy(rho) > 0


def test_entropy_unchanged_by_mirror_convention(paper_coin: CoinAmplitudes) -> None:
    """Relabeling x -> -x leaves the coin spectrum, and so S, unchanged."""
    lengths = np.random.default_rng(4).integers(1, 4, size=60).tolist()
    standard = init_state(paper_coin, lmax=3, t_max=60)
    mirror = init_state(paper_coin, lmax=3, t_max=60, convention=CoinConvention.MIRROR)
    for ell in lengths:
        step(standard, ell)
        step(mirror, ell)
        assert von_neumann_entropy(reduced_coin_density(mirror)) == pytest.approx(
            von_neumann_entropy(reduced_coin_density(standard)), abs=1e-12
        )


def test_eigenvalues_ordered() -> None:
    rho = CoinDensityMatrix(rho=np.array([[0.3, 0.1j], [-0.1j, 0.7]], dtype=np.complex128))
    high, low = rho.eigenvalues()
    assert high >= low
    assert high + low == pytest.approx(1.0)
    np.testing.assert_allclose(sorted([high, low]), np.linalg.eigvalsh(rho.rho), atol=1e-14)


def test_ordered_range_approaches_ballistic_edge(paper_coin: CoinAmplitudes) -> None:
    """The thresholded range sits above the sqrt(2) t peak separation and closes in on it."""
    state = init_state(paper_coin, lmax=1, t_max=1000)
    ratios = {}
    for _ in range(1000):
        step(state, 1)
        if state.t in (100, 1000):
            ratios[state.t] = range_width(probability_profile(state)) / state.t
    assert ratios[1000] < ratios[100]
    assert math.sqrt(2) <= ratios[1000] <= 1.55

    profile = probability_profile(state)
    left = profile.xs < 0
    x_left = profile.xs[left][np.argmax(profile.f[left])]
    x_right = profile.xs[~left][np.argmax(profile.f[~left])]
    assert (x_right - x_left) / state.t == pytest.approx(math.sqrt(2), abs=0.05)

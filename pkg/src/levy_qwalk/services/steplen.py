"""Truncated power-law step-length distribution P(l) = A l^(-1-delta), 1 <= l <= lmax."""

import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from levy_qwalk.core.exceptions import ParameterDomainError
from levy_qwalk.models.schemas import DistributionEcho

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]


@dataclass(frozen=True)
class StepLengthDistribution:
    """Normalized pmf and cdf over step lengths 1..lmax.

    ``pmf[l - 1]`` is the probability of step length ``l``. Arrays are
    read-only so one instance can be shared between workers.
    """

    delta: float
    lmax: int
    norm_A: float
    pmf: FloatArray
    cdf: FloatArray

    def to_metadata(self) -> DistributionEcho:
        """Parameters echoed into meta.json."""
        return DistributionEcho(delta=self.delta, lmax=self.lmax, norm_A=self.norm_A)


def _compensated_cumsum(values: FloatArray) -> FloatArray:
    """Running sums with Neumaier compensation."""
    out = np.empty_like(values)
    total = 0.0
    compensation = 0.0
    for i, v in enumerate(values.tolist()):
        t = total + v
        if abs(total) >= abs(v):
            compensation += (total - t) + v
        else:
            compensation += (v - t) + total
        total = t
        out[i] = total + compensation
    return out


def build_distribution(delta: float, lmax: int) -> StepLengthDistribution:
    """Build the distribution for exponent ``delta`` truncated at ``lmax``.

    Weights small enough to underflow are stored as exact zeros.
    """
    if lmax < 1:
        raise ParameterDomainError("lmax must be at least 1", {"lmax": lmax})
    if not math.isfinite(delta) or delta < 0:
        raise ParameterDomainError("delta must be a finite nonnegative number", {"delta": delta})

    lengths = np.arange(1, lmax + 1, dtype=np.float64)
    with np.errstate(under="ignore"):
        weights = np.power(lengths, -1.0 - delta)

    norm_A = 1.0 / math.fsum(weights.tolist())
    pmf = weights * norm_A
    cdf = _compensated_cumsum(weights) * norm_A
    # u is drawn from [0, 1), so the last bin must close the interval exactly
    cdf[-1] = 1.0

    pmf.flags.writeable = False
    cdf.flags.writeable = False
    return StepLengthDistribution(delta=float(delta), lmax=lmax, norm_A=norm_A, pmf=pmf, cdf=cdf)


def two_length_pmf(delta: float) -> tuple[float, float]:
    """Closed form of the lmax = 2 case, the two-length walk."""
    w2 = 2.0 ** (-1.0 - delta)
    return 1.0 / (1.0 + w2), w2 / (1.0 + w2)


def pmf_at(dist: StepLengthDistribution, ell: int) -> float:
    """Probability of step length ``ell``."""
    if not 1 <= ell <= dist.lmax:
        raise ParameterDomainError(
            f"step length {ell} outside [1, {dist.lmax}]", {"ell": ell, "lmax": dist.lmax}
        )
    return float(dist.pmf[ell - 1])


def step_for_variate(dist: StepLengthDistribution, u: float) -> int:
    """Inverse-cdf lookup: the smallest l with cdf(l) >= u."""
    index = int(np.searchsorted(dist.cdf, u, side="left"))
    return min(index, dist.lmax - 1) + 1


def sample_step(dist: StepLengthDistribution, rng: np.random.Generator) -> int:
    """Draw one step length, consuming exactly one uniform variate."""
    return step_for_variate(dist, float(rng.random()))


def sample_steps(dist: StepLengthDistribution, rng: np.random.Generator, n: int) -> IntArray:
    """Draw ``n`` step lengths; same values as ``n`` calls to :func:`sample_step`."""
    u = rng.random(n)
    index = np.searchsorted(dist.cdf, u, side="left")
    return np.minimum(index, dist.lmax - 1).astype(np.int64) + 1


def empirical_pmf(counts: IntArray) -> FloatArray:
    """Observed frequency of each step length from per-length counts."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(len(counts), dtype=np.float64)
    return counts.astype(np.float64) / total


def total_variation(dist: StepLengthDistribution, empirical: FloatArray) -> float:
    """Total-variation distance between the exact and an empirical pmf."""
    if len(empirical) != dist.lmax:
        raise ParameterDomainError(
            "empirical pmf length does not match lmax",
            {"length": len(empirical), "lmax": dist.lmax},
        )
    return 0.5 * float(np.abs(dist.pmf - empirical).sum())

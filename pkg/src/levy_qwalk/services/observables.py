"""Observables of f(x, t): moments, range, and coin-position entanglement."""

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt
from scipy.special import entr

from levy_qwalk.core.exceptions import ConsistencyError

if TYPE_CHECKING:
    from levy_qwalk.services.walker import WalkerState

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
ComplexMatrix = npt.NDArray[np.complex128]

NORMALIZATION_TOLERANCE = 1e-6
EIGENVALUE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class ProbabilityProfile:
    """f(x) at time t, single-realization or disorder-averaged."""

    t: int
    xs: IntArray
    f: FloatArray
    n_realizations: int = 1
    stderr: FloatArray | None = None

    @property
    def total(self) -> float:
        """Sum of f."""
        return float(self.f.sum())


@dataclass(frozen=True)
class CoinDensityMatrix:
    """Reduced 2x2 coin density matrix, rows and columns ordered (L, R)."""

    rho: ComplexMatrix

    @property
    def trace(self) -> float:
        return float(self.rho[0, 0].real + self.rho[1, 1].real)

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.rho, self.rho.conj().T, rtol=0.0, atol=atol))

    def eigenvalues(self) -> tuple[float, float]:
        """Closed-form eigenvalues, larger first."""
        trace = self.trace
        det = float((self.rho[0, 0] * self.rho[1, 1]).real - abs(self.rho[0, 1]) ** 2)
        disc = max(trace * trace - 4.0 * det, 0.0)
        root = math.sqrt(disc)
        return 0.5 * (trace + root), 0.5 * (trace - root)


@dataclass
class ObservableSeries:
    """Per-time observables with standard errors (zero for one realization).

    ``entropy`` is the mean of per-realization entropies and
    ``entropy_of_mean_rho`` the entropy of the realization-averaged density
    matrix.
    """

    ts: IntArray
    mean_x: FloatArray
    mean_x2: FloatArray
    range: FloatArray
    entropy: FloatArray
    entropy_of_mean_rho: FloatArray
    stderr_x: FloatArray = field(default_factory=lambda: np.zeros(0))
    stderr_x2: FloatArray = field(default_factory=lambda: np.zeros(0))
    stderr_range: FloatArray = field(default_factory=lambda: np.zeros(0))
    stderr_entropy: FloatArray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        n = len(self.ts)
        for name in ("stderr_x", "stderr_x2", "stderr_range", "stderr_entropy"):
            if len(getattr(self, name)) == 0:
                setattr(self, name, np.zeros(n))

    def window(self, t_lo: int, t_hi: int | None = None) -> npt.NDArray[np.bool_]:
        """Mask of times in [t_lo, t_hi]."""
        upper = int(self.ts[-1]) if t_hi is None else t_hi
        return (self.ts >= t_lo) & (self.ts <= upper)


def moments(profile: ProbabilityProfile) -> tuple[float, float]:
    """(<x>, <x^2>) of a normalized profile."""
    total = profile.total
    if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        raise ConsistencyError("profile is not normalized", {"t": profile.t, "sum_f": total})
    xs = profile.xs.astype(np.float64)
    weighted = profile.f * xs
    return float(weighted.sum()), float((weighted * xs).sum())


def variance(profile: ProbabilityProfile) -> float:
    """<x^2> - <x>^2."""
    mean_x, mean_x2 = moments(profile)
    return mean_x2 - mean_x**2


def range_width(profile: ProbabilityProfile, threshold: float = 1e-12) -> float:
    """x_max - x_min over sites with f > threshold; 0 when none qualifies."""
    occupied = np.flatnonzero(profile.f > threshold)
    if occupied.size == 0:
        return 0.0
    return float(profile.xs[occupied[-1]] - profile.xs[occupied[0]])


def coin_density_from_components(
    rho_ll: float, rho_rr: float, rho_lr: complex
) -> CoinDensityMatrix:
    """Density matrix from its diagonal and the (L, R) off-diagonal element."""
    rho = np.array(
        [[rho_ll, rho_lr], [np.conj(rho_lr), rho_rr]],
        dtype=np.complex128,
    )
    return CoinDensityMatrix(rho=rho)


def reduced_coin_density(state: "WalkerState") -> CoinDensityMatrix:
    """Trace the position out of the walker state."""
    w = state.window
    left = state.psi_L[w]
    right = state.psi_R[w]
    rho_ll = float(np.vdot(left, left).real)
    rho_rr = float(np.vdot(right, right).real)
    # vdot conjugates its first argument: sum psi_L * conj(psi_R)
    rho_lr = complex(np.vdot(right, left))
    return coin_density_from_components(rho_ll, rho_rr, rho_lr)


def von_neumann_entropy(rho: CoinDensityMatrix) -> float:
    """-Tr(rho log2 rho) in bits."""
    eigenvalues = rho.eigenvalues()
    for value in eigenvalues:
        if value < -EIGENVALUE_TOLERANCE or value > 1.0 + EIGENVALUE_TOLERANCE:
            raise ConsistencyError(
                "density matrix eigenvalue outside [0, 1]",
                {"eigenvalues": list(eigenvalues)},
            )
    clamped = np.clip(np.asarray(eigenvalues), 0.0, 1.0)
    return float(entr(clamped).sum() / math.log(2.0))

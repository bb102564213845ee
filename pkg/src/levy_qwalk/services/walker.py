"""Single-realization evolution of the Hadamard walk with variable step length.

One step is a coin rotation on every site followed by a conditional shift
of both coin components by the same length l:

    (psi_L, psi_R) -> ((psi_L + psi_R)/sqrt2, (psi_L - psi_R)/sqrt2)
    psi_L(x) -> psi_L(x - l),  psi_R(x) -> psi_R(x + l)     (standard)

The mirror convention swaps the two shift directions.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt

from levy_qwalk.core.exceptions import CapacityError, ParameterDomainError
from levy_qwalk.models.schemas import CoinAmplitudes, CoinConvention
from levy_qwalk.services.observables import ProbabilityProfile

ComplexArray = npt.NDArray[np.complex128]
IntArray = npt.NDArray[np.int64]

INV_SQRT2 = 1.0 / math.sqrt(2.0)


@dataclass
class WalkerState:
    """Coin amplitudes over a preallocated position window.

    Array index ``i`` holds position ``i - offset``. Only ``[lo, hi]`` can
    hold nonzero amplitudes. Operations mutate the state in place and
    return it.
    """

    t: int
    offset: int
    psi_L: ComplexArray
    psi_R: ComplexArray
    lo: int
    hi: int
    lmax: int
    convention: CoinConvention = CoinConvention.STANDARD

    @property
    def capacity(self) -> int:
        """Largest |x| the arrays can hold."""
        return self.offset

    @property
    def window(self) -> slice:
        """Array slice of the occupied window."""
        return slice(self.lo + self.offset, self.hi + self.offset + 1)

    def positions(self) -> IntArray:
        """Positions of the occupied window."""
        return np.arange(self.lo, self.hi + 1, dtype=np.int64)

    def amplitudes_at(self, x: int) -> tuple[complex, complex]:
        """(psi_L(x), psi_R(x)); zero outside the arrays."""
        if abs(x) > self.offset:
            return 0j, 0j
        i = x + self.offset
        return complex(self.psi_L[i]), complex(self.psi_R[i])

    def copy(self) -> "WalkerState":
        """Independent copy of the state."""
        return replace(self, psi_L=self.psi_L.copy(), psi_R=self.psi_R.copy())


def init_state(
    coin: CoinAmplitudes,
    *,
    lmax: int = 1,
    t_max: int = 0,
    convention: CoinConvention = CoinConvention.STANDARD,
) -> WalkerState:
    """Walker at the origin with psi_R(0) = a0, psi_L(0) = b0.

    Arrays are sized 2 * lmax * t_max + 1, enough for ``t_max`` steps of
    length at most ``lmax``.
    """
    if lmax < 1 or t_max < 0:
        raise ParameterDomainError(
            "capacity needs lmax >= 1 and t_max >= 0", {"lmax": lmax, "t_max": t_max}
        )
    half = lmax * t_max
    psi_L = np.zeros(2 * half + 1, dtype=np.complex128)
    psi_R = np.zeros(2 * half + 1, dtype=np.complex128)
    psi_L[half] = coin.b0
    psi_R[half] = coin.a0
    return WalkerState(
        t=0, offset=half, psi_L=psi_L, psi_R=psi_R, lo=0, hi=0, lmax=lmax, convention=convention
    )


def apply_coin(state: WalkerState) -> WalkerState:
    """Hadamard rotation of the coin on every occupied site."""
    w = state.window
    left = state.psi_L[w]
    right = state.psi_R[w]
    new_left = (left + right) * INV_SQRT2
    new_right = (left - right) * INV_SQRT2
    state.psi_L[w] = new_left
    state.psi_R[w] = new_right
    return state


def _translate(amplitudes: ComplexArray, window: slice, shift: int) -> None:
    segment = amplitudes[window].copy()
    amplitudes[window] = 0.0
    amplitudes[window.start + shift : window.stop + shift] = segment


def apply_shift(state: WalkerState, ell: int) -> WalkerState:
    """Move the left-moving component by -ell and the other by +ell."""
    if not 1 <= ell <= state.lmax:
        raise ParameterDomainError(
            f"step length {ell} outside [1, {state.lmax}]", {"ell": ell, "lmax": state.lmax}
        )
    if state.lo - ell < -state.capacity or state.hi + ell > state.capacity:
        raise CapacityError(
            "shift exceeds the preallocated position window",
            {"lo": state.lo, "hi": state.hi, "ell": ell, "capacity": state.capacity},
        )

    if state.convention is CoinConvention.STANDARD:
        leftward, rightward = state.psi_L, state.psi_R
    else:
        leftward, rightward = state.psi_R, state.psi_L

    w = state.window
    _translate(leftward, w, -ell)
    _translate(rightward, w, ell)
    state.lo -= ell
    state.hi += ell
    return state


def step(state: WalkerState, ell: int) -> WalkerState:
    """Coin then shift by ``ell``; advances time by one."""
    apply_shift(apply_coin(state), ell)
    state.t += 1
    return state


def probability_profile(state: WalkerState) -> ProbabilityProfile:
    """f(x) = |psi_L(x)|^2 + |psi_R(x)|^2 over the occupied window."""
    w = state.window
    f = np.abs(state.psi_L[w]) ** 2 + np.abs(state.psi_R[w]) ** 2
    return ProbabilityProfile(t=state.t, xs=state.positions(), f=f)


def total_norm(state: WalkerState) -> float:
    """Sum of |psi_L|^2 + |psi_R|^2."""
    w = state.window
    left = state.psi_L[w]
    right = state.psi_R[w]
    return float(np.vdot(left, left).real + np.vdot(right, right).real)

"""Scaling analysis of disorder-averaged walks.

Data collapse g(z) = f(x, t) t^gamma against z = x / t^gamma, the
stretched-exponential form a exp(-b z^c) below z*, the z^-2 tail above it,
closed-form moment fits, growth exponents, the fits of <x>/sqrt(t) and R/t
across delta, and the crossover estimate delta*.

Nonlinear fits use Levenberg-Marquardt (damped Gauss-Newton) from
scipy.optimize.least_squares with analytic Jacobians.
"""

import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt
import structlog
from scipy.optimize import least_squares
from scipy.stats import linregress

from levy_qwalk.core.exceptions import ParameterDomainError
from levy_qwalk.models.schemas import (
    ABOVE_GRID_MAXIMUM,
    CrossoverReport,
    MeanScalingFit,
    Moment,
    MomentFit,
    RangeScalingFit,
    StretchedExpFit,
    TailCheck,
)
from levy_qwalk.services.observables import ObservableSeries, ProbabilityProfile

logger = structlog.get_logger()

FloatArray = npt.NDArray[np.float64]
Residuals = Callable[[FloatArray], FloatArray]

MAX_EVALUATIONS = 200
PARAMETER_TOLERANCE = 1e-8
MIN_STRETCHED_POINTS = 10
MIN_TAIL_POINTS = 8
MIN_SCAN_POINTS = 5
MAX_WINDOW_CANDIDATES = 200


@dataclass(frozen=True)
class CollapsedProfile:
    """Profile rescaled to z = x / t^gamma and g = f t^gamma."""

    t: int
    gamma: float
    zs: FloatArray
    gs: FloatArray
    stderr: FloatArray | None = None
    z_max_fit: float | None = None

    def with_cutoff(self, alpha: float) -> "CollapsedProfile":
        return replace(self, z_max_fit=alpha)

    @property
    def fit_limit(self) -> float:
        """Collapse cutoff if known, else the largest z."""
        return self.z_max_fit if self.z_max_fit is not None else float(self.zs[-1])

    def window(self, z_lo: float, z_hi: float) -> tuple[FloatArray, FloatArray]:
        """(z, g) with z_lo <= z <= z_hi."""
        mask = (self.zs >= z_lo) & (self.zs <= z_hi)
        return self.zs[mask], self.gs[mask]


def _levenberg_marquardt(
    residuals: Residuals, jacobian: Callable[[FloatArray], FloatArray], p0: FloatArray
) -> tuple[FloatArray, FloatArray, bool]:
    result = least_squares(
        residuals,
        p0,
        jac=jacobian,
        method="lm",
        xtol=PARAMETER_TOLERANCE,
        ftol=1e-14,
        gtol=1e-14,
        max_nfev=MAX_EVALUATIONS,
    )
    return result.x, result.fun, bool(result.success)


def _rms(values: FloatArray) -> float:
    return float(np.sqrt(np.mean(values**2)))


# =============================================================================
# Collapse
# =============================================================================


def collapse_profile(profile: ProbabilityProfile, gamma: float) -> CollapsedProfile:
    """Rescale a profile; positions stay in increasing order."""
    if profile.t <= 0:
        raise ParameterDomainError("cannot collapse a profile at t = 0", {"t": profile.t})
    if gamma <= 0:
        raise ParameterDomainError("gamma must be positive", {"gamma": gamma})
    scale = float(profile.t) ** gamma
    stderr = None if profile.stderr is None else profile.stderr * scale
    return CollapsedProfile(
        t=profile.t,
        gamma=gamma,
        zs=profile.xs.astype(np.float64) / scale,
        gs=profile.f * scale,
        stderr=stderr,
    )


def mirror_collapsed(collapsed: CollapsedProfile) -> CollapsedProfile:
    """Relabel z -> -z, keeping z increasing."""
    stderr = None if collapsed.stderr is None else collapsed.stderr[::-1].copy()
    return replace(
        collapsed, zs=-collapsed.zs[::-1], gs=collapsed.gs[::-1].copy(), stderr=stderr
    )


def _site_pairs(
    collapsed: CollapsedProfile, z_lo: float
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Average non-overlapping pairs of neighbouring sites from ``z_lo`` upward.

    Disorder-averaged profiles alternate between neighbouring sites; pairing
    removes that pattern before two times are compared.
    """
    mask = collapsed.zs >= z_lo
    zs = collapsed.zs[mask]
    gs = collapsed.gs[mask]
    se = np.zeros_like(zs) if collapsed.stderr is None else collapsed.stderr[mask]
    n = zs.size // 2 * 2
    z_pairs = 0.5 * (zs[0:n:2] + zs[1:n:2])
    g_pairs = 0.5 * (gs[0:n:2] + gs[1:n:2])
    se_pairs = 0.5 * np.sqrt(se[0:n:2] ** 2 + se[1:n:2] ** 2)
    return z_pairs, g_pairs, se_pairs


def collapse_residuals(
    earlier: CollapsedProfile, later: CollapsedProfile, z_lo: float = 0.0
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Site-paired comparison of two collapsed profiles on the later profile's pairs.

    Returns:
        (z, g_later - g_earlier, combined standard error), the earlier
        profile interpolated onto the later one's paired positions.
    """
    z_early, g_early, se_early = _site_pairs(earlier, z_lo)
    z_late, g_late, se_late = _site_pairs(later, z_lo)
    if z_early.size < 2 or z_late.size == 0:
        raise ParameterDomainError("collapsed profiles share no z range", {"z_lo": z_lo})
    keep = z_late <= z_early[-1]
    zs = z_late[keep]
    if zs.size == 0:
        raise ParameterDomainError("collapsed profiles share no z range", {"z_lo": z_lo})
    diff = g_late[keep] - np.interp(zs, z_early, g_early)
    sigma = np.sqrt(se_late[keep] ** 2 + np.interp(zs, z_early, se_early) ** 2)
    return zs, diff, sigma


def detect_collapse_cutoff(
    earlier: CollapsedProfile,
    later: CollapsedProfile,
    n_sigma: float = 3.0,
    z_lo: float = 0.0,
    min_run: int = 3,
) -> float:
    """Start of the first sustained disagreement between two collapsed profiles.

    Site pairs disagree when they differ by more than ``n_sigma`` combined
    standard errors; alpha is the first pair of a run of ``min_run``
    consecutive disagreeing pairs. Without such a run the whole compared
    range agrees and its largest z is returned.
    """
    if min_run < 1:
        raise ParameterDomainError("min_run must be at least 1", {"min_run": min_run})
    zs, diff, sigma = collapse_residuals(earlier, later, z_lo)
    exceed = np.where(sigma > 0, np.abs(diff) > n_sigma * sigma, diff != 0)
    if exceed.size >= min_run:
        runs = np.convolve(exceed.astype(np.int64), np.ones(min_run, dtype=np.int64), "valid")
        starts = np.flatnonzero(runs == min_run)
        if starts.size:
            return float(zs[starts[0]])
    return float(min(later.zs[-1], earlier.zs[-1]))


def collapse_quality(
    earlier: CollapsedProfile, later: CollapsedProfile, z_max: float, z_lo: float = 0.0
) -> float:
    """max |g_later - g_earlier| over site pairs with z_lo <= z < z_max."""
    zs, diff, _ = collapse_residuals(earlier, later, z_lo)
    below = zs < z_max
    if not below.any():
        return 0.0
    return float(np.max(np.abs(diff[below])))


# =============================================================================
# Scaling function g(z)
# =============================================================================


def _stretched_fit_arrays(
    z: FloatArray, g: FloatArray, z_lo: float, z_hi: float
) -> tuple[StretchedExpFit, FloatArray]:
    if z.size < MIN_STRETCHED_POINTS:
        raise ParameterDomainError(
            f"need at least {MIN_STRETCHED_POINTS} points to fit the stretched exponential",
            {"points": int(z.size), "z_lo": z_lo, "z_hi": z_hi},
        )
    if np.any(g <= 0):
        raise ParameterDomainError(
            "g(z) must be positive inside the fit window", {"z_lo": z_lo, "z_hi": z_hi}
        )
    z = np.abs(z)
    log_g = np.log(g)
    positive = z > 0
    log_z = np.where(positive, np.log(np.where(positive, z, 1.0)), 0.0)

    def powered(c: float) -> FloatArray:
        with np.errstate(over="ignore", divide="ignore"):
            return np.where(positive, np.power(np.where(positive, z, 1.0), c), 0.0)

    def residuals(p: FloatArray) -> FloatArray:
        log_a, log_b, c = p
        return log_a - math.exp(log_b) * powered(c) - log_g

    def jacobian(p: FloatArray) -> FloatArray:
        _, log_b, c = p
        bzc = math.exp(log_b) * powered(c)
        return np.column_stack([np.ones_like(z), -bzc, -bzc * log_z])

    # Initial guess: log a from a straight-line extrapolation to z = 0, c = 1,
    # b from the last point.
    slope = (log_g[1] - log_g[0]) / (z[1] - z[0]) if z[1] != z[0] else 0.0
    log_a0 = float(log_g[0] - slope * z[0])
    b0 = (log_a0 - log_g[-1]) / z[-1] if z[-1] > 0 else 1.0
    if not math.isfinite(b0) or b0 <= 0:
        b0 = 1.0
    params, fun, success = _levenberg_marquardt(
        residuals, jacobian, np.array([log_a0, math.log(b0), 1.0])
    )
    log_a, log_b, c = (float(v) for v in params)
    converged = success and c > 0
    fit = StretchedExpFit(
        a=math.exp(log_a),
        b=math.exp(log_b),
        c=c,
        z_lo=z_lo,
        z_star=z_hi,
        residual_rms=_rms(fun),
        converged=converged,
        n_points=int(z.size),
    )
    return fit, fun


def fit_stretched_exponential(
    collapsed: CollapsedProfile, z_lo: float, z_hi: float
) -> StretchedExpFit:
    """Fit log g = log a - b z^c on [z_lo, z_hi]."""
    z, g = collapsed.window(z_lo, z_hi)
    fit, _ = _stretched_fit_arrays(z, g, z_lo, z_hi)
    if not fit.converged:
        logger.warning("Stretched exponential fit did not converge", z_lo=z_lo, z_hi=z_hi)
    return fit


def check_power_tail(
    collapsed: CollapsedProfile, z_lo: float, z_hi: float, tolerance: float = 0.3
) -> TailCheck:
    """Log-log slope of g over [z_lo, z_hi]; a tail needs slope -2 +- tolerance over a factor 2."""
    z, g = collapsed.window(z_lo, z_hi)
    keep = (g > 0) & (z > 0)
    z, g = z[keep], g[keep]
    if z.size < MIN_TAIL_POINTS:
        raise ParameterDomainError(
            f"need at least {MIN_TAIL_POINTS} positive points to check the tail",
            {"points": int(z.size), "z_lo": z_lo, "z_hi": z_hi},
        )
    slope = float(linregress(np.log(z), np.log(g)).slope)
    spans_factor_two = z[-1] >= 2.0 * z[0]
    return TailCheck(
        slope=slope,
        tail_present=bool(spans_factor_two and abs(slope + 2.0) <= tolerance),
        z_lo=float(z[0]),
        z_hi=float(z[-1]),
        n_points=int(z.size),
    )


def select_crossover_window(
    collapsed: CollapsedProfile, z_lo: float, z_max: float | None = None
) -> tuple[float, StretchedExpFit]:
    """Choose z* by minimizing the combined residual of the two-piece g(z).

    Below z* the stretched exponential is fitted; above it, log g is
    compared with const - 2 log z with the best constant. ``z_max`` defaults
    to the profile's collapse cutoff, then to its largest z.
    """
    if z_max is None:
        z_max = collapsed.fit_limit
    z, g = collapsed.window(z_lo, z_max)
    best: tuple[float, float, StretchedExpFit] | None = None
    if z.size < MIN_STRETCHED_POINTS:
        raise ParameterDomainError(
            f"need at least {MIN_STRETCHED_POINTS} points below z_max",
            {"points": int(z.size), "z_lo": z_lo, "z_max": z_max},
        )
    candidates = np.unique(
        np.linspace(MIN_STRETCHED_POINTS, z.size, num=MAX_WINDOW_CANDIDATES).astype(np.int64)
    )
    for k in candidates.tolist():
        head_z, head_g = z[:k], g[:k]
        tail_z, tail_g = z[k:], g[k:]
        if np.any(head_g <= 0) or np.any(tail_g <= 0) or np.any(tail_z <= 0):
            continue
        fit, fun = _stretched_fit_arrays(head_z, head_g, z_lo, float(head_z[-1]))
        if not fit.converged:
            continue
        total = float(np.sum(fun**2))
        if tail_z.size:
            shifted = np.log(tail_g) + 2.0 * np.log(tail_z)
            total += float(np.sum((shifted - shifted.mean()) ** 2))
        if best is None or total < best[0]:
            best = (total, float(head_z[-1]), fit)
    if best is None:
        raise ParameterDomainError(
            "no usable crossover window in the collapsed profile", {"z_lo": z_lo, "z_max": z_max}
        )
    _, z_star, fit = best
    return z_star, fit


# =============================================================================
# Moments
# =============================================================================


def orientation_sign(series: ObservableSeries) -> int:
    """+1 when <x> ends nonnegative, -1 when the drift points to negative x."""
    return 1 if series.mean_x[-1] >= 0 else -1


def oriented_series(series: ObservableSeries, sign: int) -> ObservableSeries:
    """Series after the x -> sign * x relabeling."""
    if sign == 1:
        return series
    return replace(series, mean_x=-series.mean_x)


def fit_moment_closed_forms(series: ObservableSeries, t_lo: int) -> MomentFit:
    """Linearized fits t/<x> = b1 + b2 sqrt t and t^2/<x^2> = b3 + b4 sqrt t."""
    if t_lo < 1:
        raise ParameterDomainError("t_lo must be at least 1", {"t_lo": t_lo})
    mask = series.window(t_lo)
    if mask.sum() < 2:
        raise ParameterDomainError("need at least two times at or after t_lo", {"t_lo": t_lo})
    t = series.ts[mask].astype(np.float64)
    sqrt_t = np.sqrt(t)
    mean_x = series.mean_x[mask]
    mean_x2 = series.mean_x2[mask]

    b3, b4 = np.polynomial.polynomial.polyfit(sqrt_t, t**2 / mean_x2, 1)
    model_x2 = t**2 / (b3 + b4 * sqrt_t)
    fit: dict[str, float | None] = {
        "b1": None,
        "b2": None,
        "residual_rms_mean": None,
    }
    mean_fit_available = bool(np.all(mean_x > 0))
    if mean_fit_available:
        b1, b2 = np.polynomial.polynomial.polyfit(sqrt_t, t / mean_x, 1)
        model_x = t / (b1 + b2 * sqrt_t)
        fit = {
            "b1": float(b1),
            "b2": float(b2),
            "residual_rms_mean": _rms((model_x - mean_x) / mean_x),
        }
    return MomentFit(
        b3=float(b3),
        b4=float(b4),
        residual_rms_mean_sq=_rms((model_x2 - mean_x2) / mean_x2),
        mean_fit_available=mean_fit_available,
        physical=bool(b3 > 0),
        t_lo=t_lo,
        **fit,
    )


def fit_growth_exponent(series: ObservableSeries, which: Moment, t_lo: int, t_hi: int) -> float:
    """Log-log slope of <x> or <x^2> against t over [t_lo, t_hi]."""
    if t_lo < 1 or t_hi < 4 * t_lo:
        raise ParameterDomainError(
            "growth window must span at least a factor 4 in t", {"t_lo": t_lo, "t_hi": t_hi}
        )
    mask = series.window(t_lo, t_hi)
    values = series.mean_x[mask] if which is Moment.FIRST else series.mean_x2[mask]
    if values.size < 2 or np.any(values <= 0):
        raise ParameterDomainError(
            f"{which.value} moment must be positive across the window",
            {"t_lo": t_lo, "t_hi": t_hi},
        )
    t = series.ts[mask].astype(np.float64)
    return float(linregress(np.log(t), np.log(values)).slope)


# =============================================================================
# Sweeps across delta
# =============================================================================


def _scan_arrays(points: Sequence[tuple[float, float]]) -> tuple[FloatArray, FloatArray]:
    ordered = sorted(points)
    deltas = np.array([d for d, _ in ordered], dtype=np.float64)
    values = np.array([v for _, v in ordered], dtype=np.float64)
    return deltas, values


def _scan_weights(deltas: FloatArray, stderr: Mapping[float, float] | None) -> FloatArray:
    """Per-point residual scale: the standard errors when all are known and positive, else 1."""
    if stderr is None:
        return np.ones_like(deltas)
    sigma = np.array([stderr.get(float(d), 0.0) for d in deltas], dtype=np.float64)
    if not np.all(np.isfinite(sigma) & (sigma > 0)):
        logger.info("Sweep fit unweighted; some standard errors are zero or missing")
        return np.ones_like(deltas)
    return sigma


def fit_mean_scaling(
    points: Sequence[tuple[float, float]],
    delta_min: float = 0.5,
    stderr: Mapping[float, float] | None = None,
) -> MeanScalingFit:
    """Fit <x>/sqrt(t) = beta0 + beta delta^kappa over delta >= delta_min.

    With ``stderr`` (keyed by delta) residuals are weighted by 1/stderr.
    """
    deltas, values = _scan_arrays([p for p in points if p[0] >= delta_min])
    if deltas.size < MIN_SCAN_POINTS:
        raise ParameterDomainError(
            f"need at least {MIN_SCAN_POINTS} delta points >= {delta_min}",
            {"points": int(deltas.size)},
        )
    log_delta = np.log(deltas)
    sigma = _scan_weights(deltas, stderr)

    def residuals(p: FloatArray) -> FloatArray:
        beta0, beta, kappa = p
        return (beta0 + beta * np.power(deltas, kappa) - values) / sigma

    def jacobian(p: FloatArray) -> FloatArray:
        _, beta, kappa = p
        powered = np.power(deltas, kappa)
        columns = [np.ones_like(deltas), powered, beta * powered * log_delta]
        return np.column_stack(columns) / sigma[:, None]

    kappa0 = 2.0
    beta0_guess = float(values[0])
    beta_guess = float((values[-1] - values[0]) / (deltas[-1] ** kappa0 - deltas[0] ** kappa0))
    params, fun, success = _levenberg_marquardt(
        residuals, jacobian, np.array([beta0_guess, beta_guess, kappa0])
    )
    beta0, beta, kappa = (float(v) for v in params)
    converged = success and kappa > 0
    if not converged:
        logger.warning("Mean scaling fit did not converge", points=int(deltas.size))
    return MeanScalingFit(
        beta0=beta0,
        beta=beta,
        kappa=kappa,
        residual_rms=_rms(fun * sigma),
        converged=converged,
        delta_lo=float(deltas[0]),
        delta_hi=float(deltas[-1]),
        n_points=int(deltas.size),
    )


def fit_range_scaling(
    points: Sequence[tuple[float, float]], stderr: Mapping[float, float] | None = None
) -> RangeScalingFit:
    """Fit R/t = s + q exp(-r delta), weighted by 1/stderr when given."""
    deltas, values = _scan_arrays(points)
    if deltas.size < MIN_SCAN_POINTS:
        raise ParameterDomainError(
            f"need at least {MIN_SCAN_POINTS} delta points", {"points": int(deltas.size)}
        )
    sigma = _scan_weights(deltas, stderr)

    def residuals(p: FloatArray) -> FloatArray:
        s, q, r = p
        return (s + q * np.exp(-r * deltas) - values) / sigma

    def jacobian(p: FloatArray) -> FloatArray:
        _, q, r = p
        decay = np.exp(-r * deltas)
        columns = [np.ones_like(deltas), decay, -q * deltas * decay]
        return np.column_stack(columns) / sigma[:, None]

    # Endpoint heuristics: s from the largest delta, q from the smallest
    s0 = float(values[-1])
    q0 = float(values[0] - s0)
    r0 = 1.0
    excess = values[:-1] - s0
    usable = excess * np.sign(q0) > 0 if q0 != 0 else np.zeros_like(excess, dtype=bool)
    if usable.sum() >= 2:
        log_excess = np.log(np.abs(excess[usable]))
        slope = np.polynomial.polynomial.polyfit(deltas[:-1][usable], log_excess, 1)[1]
        if math.isfinite(slope) and slope < 0:
            r0 = -float(slope)
    params, fun, success = _levenberg_marquardt(residuals, jacobian, np.array([s0, q0, r0]))
    s, q, r = (float(v) for v in params)
    converged = success and s > 0 and r > 0
    if not converged:
        logger.warning("Range scaling fit did not converge", points=int(deltas.size))
    return RangeScalingFit(
        s=s,
        q=q,
        r=r,
        residual_rms=_rms(fun * sigma),
        converged=converged,
        delta_lo=float(deltas[0]),
        delta_hi=float(deltas[-1]),
        n_points=int(deltas.size),
    )


def _relative_spread(values: Sequence[float]) -> float | None:
    scale = float(np.mean(np.abs(values)))
    if scale == 0 or not math.isfinite(scale):
        return None
    return (max(values) - min(values)) / scale


def _row_spread(row: Sequence[StretchedExpFit | None]) -> float | None:
    """Largest relative spread of (a, b, c) across one delta, None if any fit is missing."""
    spreads: list[float] = []
    for name in ("a", "b", "c"):
        values = [getattr(fit, name) for fit in row if fit is not None]
        if len(values) < len(row):
            return None
        spread = _relative_spread(values)
        if spread is None:
            return None
        spreads.append(spread)
    return max(spreads)


def crossover_report(
    fits: Mapping[tuple[float, int], StretchedExpFit | None],
    tails: Mapping[tuple[float, int], bool],
    spread_threshold: float = 0.1,
) -> CrossoverReport:
    """Smallest delta with no z^-2 tail at any lmax and (a, b, c) agreeing across lmax."""
    lmaxes = sorted({lmax for _, lmax in fits} | {lmax for _, lmax in tails})
    if len(lmaxes) < 2:
        raise ParameterDomainError(
            "crossover needs fits at two or more lmax values", {"lmax_values": lmaxes}
        )
    grid = sorted(
        delta
        for delta in {d for d, _ in fits} | {d for d, _ in tails}
        if all((delta, lmax) in fits and (delta, lmax) in tails for lmax in lmaxes)
    )
    if not grid:
        raise ParameterDomainError(
            "no delta value is shared by every lmax", {"lmax_values": lmaxes}
        )

    tail_present: dict[float, bool] = {}
    # None marks a spread that cannot be measured and never qualifies for delta*.
    spread: dict[float, float | None] = {}
    delta_star: float | None = None
    for delta in grid:
        tail_present[delta] = any(tails[(delta, lmax)] for lmax in lmaxes)
        row = [fits[(delta, lmax)] for lmax in lmaxes]
        spread[delta] = _row_spread(row)
        measured = spread[delta]
        if (
            delta_star is None
            and not tail_present[delta]
            and measured is not None
            and measured < spread_threshold
        ):
            delta_star = delta

    return CrossoverReport(
        delta_star_estimate=ABOVE_GRID_MAXIMUM if delta_star is None else delta_star,
        tail_present_per_delta=tail_present,
        lmax_spread_per_delta=spread,
        lmax_values=lmaxes,
        spread_threshold=spread_threshold,
    )

"""Pydantic schemas for run configuration, fit results and output files."""

import math
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1
ABOVE_GRID_MAXIMUM = "above grid maximum"

UINT64_MAX = 2**64 - 1


# =============================================================================
# Enums
# =============================================================================


class CoinConvention(str, Enum):
    """Shift direction attached to each coin state.

    The Hadamard matrix is the same in both conventions; ``mirror`` swaps
    which component moves left, which relabels x -> -x.
    """

    STANDARD = "standard"
    MIRROR = "mirror"


class CoinPreset(str, Enum):
    """Named initial coin states."""

    PAPER_ASYMMETRIC = "paper-asymmetric"
    RIGHT_ONLY = "right-only"
    LEFT_ONLY = "left-only"


class Moment(str, Enum):
    """Which moment of f(x, t) a fit operates on."""

    FIRST = "first"
    SECOND = "second"


# =============================================================================
# Walk configuration
# =============================================================================


class CoinAmplitudes(BaseModel):
    """Real nonnegative coin amplitudes at the origin (a0 on R, b0 on L)."""

    model_config = ConfigDict(frozen=True)

    a0: float = Field(..., ge=0.0, description="Amplitude on the right coin state")
    b0: float = Field(..., ge=0.0, description="Amplitude on the left coin state")

    @model_validator(mode="after")
    def check_normalized(self) -> "CoinAmplitudes":
        """Require a0^2 + b0^2 = 1."""
        norm = self.a0**2 + self.b0**2
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"coin amplitudes not normalized: a0^2 + b0^2 = {norm!r}")
        return self

    @classmethod
    def from_preset(cls, preset: CoinPreset | str) -> "CoinAmplitudes":
        """Build one of the named initial states."""
        match CoinPreset(preset):
            case CoinPreset.PAPER_ASYMMETRIC:
                return cls(a0=math.sqrt(1.0 / 3.0), b0=math.sqrt(2.0 / 3.0))
            case CoinPreset.RIGHT_ONLY:
                return cls(a0=1.0, b0=0.0)
            case CoinPreset.LEFT_ONLY:
                return cls(a0=0.0, b0=1.0)

    @classmethod
    def from_user_input(cls, a0: float, b0: float, tolerance: float = 1e-9) -> "CoinAmplitudes":
        """Accept user-typed amplitudes normalized within ``tolerance`` and renormalize."""
        norm = math.hypot(a0, b0)
        if abs(norm**2 - 1.0) > tolerance:
            raise ValueError(f"a0^2 + b0^2 must equal 1 within {tolerance:g}, got {norm**2!r}")
        if abs(norm**2 - 1.0) <= 1e-12:
            return cls(a0=a0, b0=b0)
        return cls(a0=a0 / norm, b0=b0 / norm)


def default_snapshot_times(t_max: int) -> tuple[int, ...]:
    """Four collapse times t_max/8, t_max/4, t_max/2 and t_max."""
    candidates = {t_max // 8, t_max // 4, t_max // 2, t_max}
    return tuple(sorted(t for t in candidates if t >= 1))


class RunConfig(BaseModel):
    """One ensemble run at a single (delta, lmax) grid point."""

    model_config = ConfigDict(frozen=True)

    delta: float = Field(1.0, ge=0.0, description="Power-law exponent")
    lmax: int = Field(4, ge=1, description="Maximum step length")
    t_max: int = Field(2000, ge=1, description="Number of time steps")
    n_config: int = Field(500, ge=1, description="Number of disorder realizations")
    coin: CoinAmplitudes = Field(
        default_factory=lambda: CoinAmplitudes.from_preset(CoinPreset.PAPER_ASYMMETRIC)
    )
    master_seed: int = Field(20240601, ge=0, le=UINT64_MAX)
    snapshot_times: tuple[int, ...] = ()
    range_threshold: float = Field(1e-12, gt=0.0)
    convention: CoinConvention = CoinConvention.STANDARD

    @field_validator("coin", mode="before")
    @classmethod
    def parse_coin(cls, v: Any) -> Any:
        """Allow a preset name, or amplitudes typed to about nine digits."""
        if isinstance(v, str | CoinPreset):
            return CoinAmplitudes.from_preset(v)
        if isinstance(v, dict) and {"a0", "b0"} <= v.keys():
            return CoinAmplitudes.from_user_input(float(v["a0"]), float(v["b0"]))
        return v

    @model_validator(mode="after")
    def check_snapshots(self) -> "RunConfig":
        """Fill default snapshot times and keep them sorted within [1, t_max]."""
        if not self.snapshot_times:
            object.__setattr__(self, "snapshot_times", default_snapshot_times(self.t_max))
            return self
        times = tuple(sorted(set(self.snapshot_times)))
        if times[0] < 1 or times[-1] > self.t_max:
            raise ValueError(f"snapshot times must lie in [1, {self.t_max}], got {list(times)}")
        object.__setattr__(self, "snapshot_times", times)
        return self

    @property
    def grid_label(self) -> str:
        """Directory name of this grid point."""
        return f"delta{self.delta:g}_lmax{self.lmax}"


# =============================================================================
# Fit results
# =============================================================================


class StretchedExpFit(BaseModel):
    """g(z) = a exp(-b z^c) fitted on [z_lo, z_star]."""

    a: float
    b: float
    c: float
    z_lo: float
    z_star: float
    residual_rms: float
    converged: bool
    n_points: int


class TailCheck(BaseModel):
    """Log-log slope of g(z) over a window and whether it reads as z^-2."""

    slope: float
    tail_present: bool
    z_lo: float
    z_hi: float
    n_points: int


class MomentFit(BaseModel):
    """Closed forms <x> = t/(b1 + b2 sqrt t) and <x^2> = t^2/(b3 + b4 sqrt t)."""

    b1: float | None = None
    b2: float | None = None
    b3: float
    b4: float
    residual_rms_mean: float | None = None
    residual_rms_mean_sq: float
    mean_fit_available: bool
    physical: bool = Field(..., description="False when b3 <= 0")
    t_lo: int


class ParamScanFit(BaseModel):
    """Common fields of the fits across the delta sweep."""

    residual_rms: float
    converged: bool
    delta_lo: float
    delta_hi: float
    n_points: int


class MeanScalingFit(ParamScanFit):
    """<x>/sqrt(t) = beta0 + beta delta^kappa."""

    beta0: float
    beta: float
    kappa: float


class RangeScalingFit(ParamScanFit):
    """R/t = s + q exp(-r delta)."""

    s: float
    q: float
    r: float


class CrossoverReport(BaseModel):
    """Where the z^-2 tail disappears and g(z) stops depending on lmax."""

    delta_star_estimate: float | Literal["above grid maximum"]
    tail_present_per_delta: dict[float, bool]
    lmax_spread_per_delta: dict[float, float | None]
    lmax_values: list[int]
    spread_threshold: float


# =============================================================================
# Experiment manifest
# =============================================================================


class AnalysisParams(BaseModel):
    """Knobs of the analysis pipeline."""

    model_config = ConfigDict(frozen=True)

    gamma: float = Field(0.5, gt=0.0)
    z_lo: float = Field(0.0, ge=0.0)
    n_sigma: float = Field(3.0, gt=0.0, description="Collapse agreement in standard errors")
    tail_tolerance: float = Field(0.3, gt=0.0)
    spread_threshold: float = Field(0.1, gt=0.0)
    moment_fit_t_lo: int | None = Field(None, ge=1, description="Defaults to t_max // 10")
    growth_window: tuple[float, float] = (0.25, 1.0)
    mean_fit_delta_min: float = Field(0.5, ge=0.0)

    @field_validator("growth_window")
    @classmethod
    def check_growth_window(cls, v: tuple[float, float]) -> tuple[float, float]:
        """Fractions of t_max with the upper end at least 4x the lower end."""
        lo, hi = v
        if not 0.0 < lo < hi <= 1.0 or hi < 4 * lo:
            raise ValueError(f"growth window must satisfy 0 < lo, 4*lo <= hi <= 1, got {v}")
        return v


PositiveInt = Annotated[int, Field(ge=1)]
NonNegativeFloat = Annotated[float, Field(ge=0.0)]


class ExperimentManifest(BaseModel):
    """A run template plus sweep axes, output location and analysis knobs."""

    model_config = ConfigDict(frozen=True)

    run: RunConfig = Field(default_factory=RunConfig)
    deltas: list[NonNegativeFloat] = Field(default_factory=list)
    lmaxes: list[PositiveInt] = Field(default_factory=list)
    output_dir: Path = Path("./runs")
    workers: int | None = Field(None, ge=1)
    analysis: AnalysisParams = Field(default_factory=AnalysisParams)
    version: str = "0.1.0"

    @model_validator(mode="after")
    def fill_axes(self) -> "ExperimentManifest":
        """Empty axes fall back to the run template; deltas must give distinct directories."""
        if not self.deltas:
            object.__setattr__(self, "deltas", [self.run.delta])
        if not self.lmaxes:
            object.__setattr__(self, "lmaxes", [self.run.lmax])
        object.__setattr__(self, "deltas", sorted(set(self.deltas)))
        object.__setattr__(self, "lmaxes", sorted(set(self.lmaxes)))
        labels = [f"{delta:g}" for delta in self.deltas]
        if len(set(labels)) < len(labels):
            clashing = sorted({label for label in labels if labels.count(label) > 1})
            raise ValueError(f"deltas {clashing} map to the same grid directory")
        return self

    @property
    def coin_convention(self) -> CoinConvention:
        """Convention tag shared by every grid point."""
        return self.run.convention

    def grid_points(self) -> list[RunConfig]:
        """RunConfig for every (delta, lmax) pair, lmax-major."""
        base = self.run.model_dump()
        return [
            RunConfig.model_validate({**base, "delta": delta, "lmax": lmax})
            for lmax in self.lmaxes
            for delta in self.deltas
        ]


# =============================================================================
# Output files
# =============================================================================


class DistributionEcho(BaseModel):
    """Step-length distribution parameters echoed into run metadata."""

    delta: float
    lmax: int
    norm_A: float


class RunMetadata(BaseModel):
    """Contents of meta.json."""

    schema_version: int = SCHEMA_VERSION
    toolkit_version: str
    manifest: dict[str, Any]
    config: RunConfig
    coin_convention: CoinConvention
    coin_matrix: str = "(psi_L, psi_R) -> ((psi_L + psi_R)/sqrt2, (psi_L - psi_R)/sqrt2)"
    distribution: DistributionEcho
    seed_derivation: str = "splitmix64(master_seed ^ index)"
    realization_seeds: list[int]
    step_pmf: list[float]
    empirical_step_pmf: list[float]
    step_pmf_total_variation: float
    wall_time_s: float


class GridPointAnalysis(BaseModel):
    """Analysis of one (delta, lmax) run directory."""

    delta: float
    lmax: int
    directory: str
    t_max: int
    orientation: Literal[1, -1]
    mean_x_over_sqrt_t: float
    range_over_t: float
    stderr_mean_x_over_sqrt_t: float = 0.0
    stderr_range_over_t: float = 0.0
    entropy_at_t_max: float
    collapse_cutoff: float | None = None
    collapse_quality: float | None = None
    z_star: float | None = None
    stretched_fit: StretchedExpFit | None = None
    tail: TailCheck | None = None
    moment_fit: MomentFit | None = None
    growth_exponent_mean: float | None = None
    growth_exponent_mean_sq: float | None = None
    skipped: dict[str, str] = Field(default_factory=dict)


class SweepAnalysis(BaseModel):
    """Fits across delta at one lmax."""

    lmax: int
    mean_scaling: MeanScalingFit | None = None
    range_scaling: RangeScalingFit | None = None
    skipped: dict[str, str] = Field(default_factory=dict)


class AnalysisReport(BaseModel):
    """Contents of analysis.json."""

    schema_version: int = SCHEMA_VERSION
    toolkit_version: str
    gamma: float
    grid_points: list[GridPointAnalysis]
    sweeps: list[SweepAnalysis]
    crossover: CrossoverReport | None = None
    delta_star_estimate: float | Literal["above grid maximum"] | None = None
    skipped: dict[str, str] = Field(default_factory=dict)

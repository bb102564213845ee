"""Pydantic models for configuration, fit results and output files."""

from levy_qwalk.models.schemas import (
    ABOVE_GRID_MAXIMUM,
    SCHEMA_VERSION,
    AnalysisParams,
    AnalysisReport,
    CoinAmplitudes,
    CoinConvention,
    CoinPreset,
    CrossoverReport,
    DistributionEcho,
    ExperimentManifest,
    GridPointAnalysis,
    MeanScalingFit,
    Moment,
    MomentFit,
    ParamScanFit,
    RangeScalingFit,
    RunConfig,
    RunMetadata,
    StretchedExpFit,
    SweepAnalysis,
    TailCheck,
)

__all__ = [
    "ABOVE_GRID_MAXIMUM",
    "SCHEMA_VERSION",
    "AnalysisParams",
    "AnalysisReport",
    "CoinAmplitudes",
    "CoinConvention",
    "CoinPreset",
    "CrossoverReport",
    "DistributionEcho",
    "ExperimentManifest",
    "GridPointAnalysis",
    "MeanScalingFit",
    "Moment",
    "MomentFit",
    "ParamScanFit",
    "RangeScalingFit",
    "RunConfig",
    "RunMetadata",
    "StretchedExpFit",
    "SweepAnalysis",
    "TailCheck",
]

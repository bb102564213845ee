"""The ``run`` and ``analyze`` commands."""

import math
import shutil
import tempfile
from pathlib import Path

import structlog
from pydantic import ValidationError

from levy_qwalk import __version__
from levy_qwalk.cli.files import (
    ANALYSIS_FILE,
    META_FILE,
    MOMENTS_FILE,
    collapse_file,
    profile_file,
    read_meta,
    read_moments_csv,
    read_profile_csv,
    write_collapse_csv,
    write_json,
    write_moments_csv,
    write_profile_csv,
)
from levy_qwalk.core.config import settings
from levy_qwalk.core.exceptions import (
    ConsistencyError,
    InputFileError,
    ManifestError,
    ParameterDomainError,
    RealizationError,
)
from levy_qwalk.models.schemas import (
    AnalysisParams,
    AnalysisReport,
    CrossoverReport,
    ExperimentManifest,
    GridPointAnalysis,
    Moment,
    RunConfig,
    RunMetadata,
    StretchedExpFit,
    SweepAnalysis,
)
from levy_qwalk.services.ensemble import EnsembleResult, run_ensemble
from levy_qwalk.services.observables import ObservableSeries, ProbabilityProfile
from levy_qwalk.services.scaling import (
    CollapsedProfile,
    check_power_tail,
    collapse_profile,
    collapse_quality,
    crossover_report,
    detect_collapse_cutoff,
    fit_growth_exponent,
    fit_mean_scaling,
    fit_moment_closed_forms,
    fit_range_scaling,
    mirror_collapsed,
    orientation_sign,
    oriented_series,
    select_crossover_window,
)
from levy_qwalk.services.steplen import build_distribution

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_CONSISTENCY_ERROR = 3


def exit_code_for(error: Exception) -> int:
    """Process exit status for an error raised by a command."""
    if isinstance(error, ValidationError | ManifestError | ParameterDomainError):
        return EXIT_CONFIG_ERROR
    if isinstance(error, ConsistencyError):
        return EXIT_CONSISTENCY_ERROR
    if isinstance(error, RealizationError):
        # The original error class survives the worker pool only by name
        cause = error.details.get("error")
        if cause == ConsistencyError.__name__:
            return EXIT_CONSISTENCY_ERROR
        if cause == ParameterDomainError.__name__:
            return EXIT_CONFIG_ERROR
    return EXIT_FAILURE


# =============================================================================
# run
# =============================================================================


def write_grid_point(
    directory: Path, manifest: ExperimentManifest, result: EnsembleResult
) -> None:
    """Write meta.json, moments.csv and one profile CSV per snapshot."""
    config = result.config
    meta = RunMetadata(
        toolkit_version=__version__,
        manifest=manifest.model_dump(mode="json"),
        config=config,
        coin_convention=config.convention,
        distribution=build_distribution(config.delta, config.lmax).to_metadata(),
        realization_seeds=result.realization_seeds,
        step_pmf=result.step_pmf.tolist(),
        empirical_step_pmf=result.empirical_step_pmf.tolist(),
        step_pmf_total_variation=result.step_pmf_total_variation,
        wall_time_s=result.wall_time_s,
    )
    write_json(directory / META_FILE, meta)
    write_moments_csv(directory / MOMENTS_FILE, result.series)
    for t, profile in result.snapshots.items():
        write_profile_csv(directory / profile_file(t), profile)


def run_command(manifest: ExperimentManifest, workers: int | None = None) -> list[Path]:
    """
    Run the ensemble at every grid point of a manifest.

    Each grid point is written to a staging directory and renamed into
    ``<output_dir>/delta{delta}_lmax{lmax}`` once complete. A directory left by
    an earlier run is set aside until the whole call succeeds. If any grid point
    fails, every directory written by this call is removed and the earlier ones
    are put back.

    Args:
        manifest: Validated experiment manifest
        workers: Worker processes; falls back to the manifest, then settings

    Returns:
        The grid point directories, in manifest order
    """
    workers = workers or manifest.workers or settings.default_workers
    output_dir = manifest.output_dir
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ManifestError(
            f"cannot create output directory {output_dir}: {e.strerror}",
            {"output_dir": str(output_dir)},
        ) from e

    written: list[Path] = []
    previous: dict[Path, Path] = {}
    staging: Path | None = None
    try:
        for config in manifest.grid_points():
            result = run_ensemble(config, workers=workers)
            target = output_dir / config.grid_label
            try:
                staging = Path(tempfile.mkdtemp(prefix=f".{config.grid_label}.", dir=output_dir))
                write_grid_point(staging, manifest, result)
                if target.exists():
                    backup = output_dir / f".{config.grid_label}.previous"
                    if backup.exists():
                        shutil.rmtree(backup)
                    target.rename(backup)
                    previous[target] = backup
                staging.rename(target)
                staging = None
            except OSError as e:
                raise ManifestError(
                    f"cannot write grid point to {target}: {e.strerror}",
                    {"directory": str(target)},
                ) from e
            written.append(target)
            logger.info(
                "Grid point written",
                delta=config.delta,
                lmax=config.lmax,
                directory=str(target),
                wall_time_s=round(result.wall_time_s, 3),
            )
    except BaseException:
        for path in [*written, staging]:
            if path is not None:
                shutil.rmtree(path, ignore_errors=True)
        for target, backup in previous.items():
            if not target.exists():
                backup.rename(target)
        if previous:
            logger.warning("Earlier grid point directories restored", count=len(previous))
        raise
    for backup in previous.values():
        shutil.rmtree(backup, ignore_errors=True)
    return written


# =============================================================================
# analyze
# =============================================================================


def _growth_window(params: AnalysisParams, t_max: int) -> tuple[int, int]:
    lo, hi = params.growth_window
    return max(1, math.ceil(lo * t_max)), int(hi * t_max)


def analyze_grid_point(
    config: RunConfig,
    directory: Path,
    series: ObservableSeries,
    profiles: list[ProbabilityProfile],
    params: AnalysisParams,
) -> GridPointAnalysis:
    """Collapse, fit and check one grid point; failed steps are recorded in ``skipped``."""
    sign = orientation_sign(series)
    oriented = oriented_series(series, sign)
    t_max = int(series.ts[-1])
    skipped: dict[str, str] = {}

    collapsed: list[CollapsedProfile] = []
    for profile in profiles:
        scaled = collapse_profile(profile, params.gamma)
        ballistic = collapse_profile(profile, 1.0)
        if sign == -1:
            scaled, ballistic = mirror_collapsed(scaled), mirror_collapsed(ballistic)
        write_collapse_csv(directory / collapse_file(profile.t), scaled)
        write_collapse_csv(directory / collapse_file(profile.t, ballistic=True), ballistic)
        collapsed.append(scaled)

    analysis = GridPointAnalysis(
        delta=config.delta,
        lmax=config.lmax,
        directory=directory.name,
        t_max=t_max,
        orientation=sign,
        mean_x_over_sqrt_t=float(oriented.mean_x[-1] / math.sqrt(t_max)),
        range_over_t=float(series.range[-1] / t_max),
        stderr_mean_x_over_sqrt_t=float(series.stderr_x[-1] / math.sqrt(t_max)),
        stderr_range_over_t=float(series.stderr_range[-1] / t_max),
        entropy_at_t_max=float(series.entropy[-1]),
    )

    if len(collapsed) >= 2:
        earlier, latest = collapsed[-2], collapsed[-1]
        try:
            alpha = detect_collapse_cutoff(earlier, latest, params.n_sigma, params.z_lo)
            analysis.collapse_cutoff = alpha
            collapsed[-1] = latest = latest.with_cutoff(alpha)
            analysis.collapse_quality = collapse_quality(earlier, latest, alpha, params.z_lo)
        except ParameterDomainError as e:
            skipped["collapse"] = e.message
    else:
        skipped["collapse"] = "fewer than two snapshot times"

    if collapsed:
        latest = collapsed[-1]
        z_max = latest.fit_limit
        try:
            z_star, fit = select_crossover_window(latest, params.z_lo)
            analysis.z_star = z_star
            analysis.stretched_fit = fit
        except ParameterDomainError as e:
            skipped["stretched_fit"] = e.message
        if analysis.z_star is not None:
            try:
                analysis.tail = check_power_tail(
                    latest, analysis.z_star, z_max, params.tail_tolerance
                )
            except ParameterDomainError as e:
                skipped["tail"] = e.message

    t_lo = params.moment_fit_t_lo or max(1, t_max // 10)
    try:
        analysis.moment_fit = fit_moment_closed_forms(oriented, t_lo)
    except ParameterDomainError as e:
        skipped["moment_fit"] = e.message

    g_lo, g_hi = _growth_window(params, t_max)
    for which in Moment:
        try:
            exponent = fit_growth_exponent(oriented, which, g_lo, g_hi)
        except ParameterDomainError as e:
            skipped[f"growth_exponent_{which.value}"] = e.message
            continue
        if which is Moment.FIRST:
            analysis.growth_exponent_mean = exponent
        else:
            analysis.growth_exponent_mean_sq = exponent

    analysis.skipped = skipped
    return analysis


def analyze_sweep(
    lmax: int, grid: list[GridPointAnalysis], params: AnalysisParams
) -> SweepAnalysis:
    """Fits across delta of <x>/sqrt(t) and R/t at one lmax."""
    sweep = SweepAnalysis(lmax=lmax)
    rows = [gp for gp in grid if gp.lmax == lmax]
    try:
        sweep.mean_scaling = fit_mean_scaling(
            [(gp.delta, gp.mean_x_over_sqrt_t) for gp in rows],
            params.mean_fit_delta_min,
            stderr={gp.delta: gp.stderr_mean_x_over_sqrt_t for gp in rows},
        )
    except ParameterDomainError as e:
        sweep.skipped["mean_scaling"] = e.message
    try:
        sweep.range_scaling = fit_range_scaling(
            [(gp.delta, gp.range_over_t) for gp in rows],
            stderr={gp.delta: gp.stderr_range_over_t for gp in rows},
        )
    except ParameterDomainError as e:
        sweep.skipped["range_scaling"] = e.message
    return sweep


def analyze_crossover(
    grid: list[GridPointAnalysis], params: AnalysisParams
) -> CrossoverReport:
    fits: dict[tuple[float, int], StretchedExpFit | None] = {}
    tails: dict[tuple[float, int], bool] = {}
    for gp in grid:
        key = (gp.delta, gp.lmax)
        fit = gp.stretched_fit
        fits[key] = fit if fit is not None and fit.converged else None
        tails[key] = gp.tail is not None and gp.tail.tail_present
    return crossover_report(fits, tails, params.spread_threshold)


def analyze_command(manifest: ExperimentManifest) -> AnalysisReport:
    """
    Analyze the outputs of a previous ``run`` of the same manifest.

    Writes collapse CSVs next to each grid point's profiles and
    ``analysis.json`` into the output directory.

    Args:
        manifest: The manifest the outputs were produced from

    Returns:
        The analysis report written to analysis.json
    """
    params = manifest.analysis
    output_dir = manifest.output_dir
    grid: list[GridPointAnalysis] = []

    for config in manifest.grid_points():
        directory = output_dir / config.grid_label
        if not directory.is_dir():
            raise InputFileError(
                f"missing run outputs for grid point {config.grid_label}",
                {"directory": str(directory)},
            )
        meta = read_meta(directory)
        series = read_moments_csv(directory)
        profiles = [
            read_profile_csv(directory, t, meta.config.n_config)
            for t in meta.config.snapshot_times
        ]
        entry = analyze_grid_point(meta.config, directory, series, profiles, params)
        grid.append(entry)
        logger.info(
            "Grid point analyzed",
            delta=config.delta,
            lmax=config.lmax,
            orientation=entry.orientation,
            skipped=sorted(entry.skipped),
        )

    report = AnalysisReport(
        toolkit_version=__version__,
        gamma=params.gamma,
        grid_points=grid,
        sweeps=[analyze_sweep(lmax, grid, params) for lmax in manifest.lmaxes],
    )
    if len(manifest.lmaxes) >= 2:
        try:
            report.crossover = analyze_crossover(grid, params)
            report.delta_star_estimate = report.crossover.delta_star_estimate
        except ParameterDomainError as e:
            report.skipped["crossover"] = e.message
    else:
        report.skipped["crossover"] = "fewer than two lmax values"

    path = output_dir / ANALYSIS_FILE
    write_json(path, report)
    logger.info("Analysis written", path=str(path), delta_star=report.delta_star_estimate)
    return report

"""Readers and writers for manifests and run output files.

CSV files carry a header row, LF line endings and 17 significant digits so
that re-reading reproduces every float exactly. JSON files are UTF-8 with
keys in model field order.
"""

import sys
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from levy_qwalk.core.exceptions import InputFileError, ManifestError
from levy_qwalk.models.schemas import SCHEMA_VERSION, RunMetadata
from levy_qwalk.services.observables import ObservableSeries, ProbabilityProfile
from levy_qwalk.services.scaling import CollapsedProfile

logger = structlog.get_logger()

FLOAT_FORMAT = "%.17g"

META_FILE = "meta.json"
MOMENTS_FILE = "moments.csv"
ANALYSIS_FILE = "analysis.json"

MOMENT_COLUMNS = [
    "t",
    "mean_x",
    "stderr_x",
    "mean_x2",
    "stderr_x2",
    "range",
    "stderr_range",
    "entropy_mean_of_S",
    "entropy_of_mean_rho",
    "stderr_entropy",
]
PROFILE_COLUMNS = ["x", "f", "stderr"]


def profile_file(t: int) -> str:
    return f"profile_t{t}.csv"


def collapse_file(t: int, ballistic: bool = False) -> str:
    prefix = "collapse_ballistic" if ballistic else "collapse"
    return f"{prefix}_t{t}.csv"


# =============================================================================
# Manifest
# =============================================================================


def load_manifest_file(path: Path) -> dict[str, Any]:
    """Parse a TOML manifest into a plain dict."""
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as e:
        raise ManifestError(f"manifest not found: {path}", {"path": str(path)}) from e
    except tomllib.TOMLDecodeError as e:
        raise ManifestError(f"manifest is not valid TOML: {e}", {"path": str(path)}) from e


# =============================================================================
# Writers
# =============================================================================


def _write_frame(path: Path, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_json(path: Path, model: BaseModel) -> None:
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")


def write_moments_csv(path: Path, series: ObservableSeries) -> None:
    frame = pd.DataFrame(
        {
            "t": series.ts,
            "mean_x": series.mean_x,
            "stderr_x": series.stderr_x,
            "mean_x2": series.mean_x2,
            "stderr_x2": series.stderr_x2,
            "range": series.range,
            "stderr_range": series.stderr_range,
            "entropy_mean_of_S": series.entropy,
            "entropy_of_mean_rho": series.entropy_of_mean_rho,
            "stderr_entropy": series.stderr_entropy,
        },
        columns=MOMENT_COLUMNS,
    )
    _write_frame(path, frame)


def write_profile_csv(path: Path, profile: ProbabilityProfile) -> None:
    stderr = np.zeros_like(profile.f) if profile.stderr is None else profile.stderr
    _write_frame(path, pd.DataFrame({"x": profile.xs, "f": profile.f, "stderr": stderr}))


def write_collapse_csv(path: Path, collapsed: CollapsedProfile) -> None:
    _write_frame(path, pd.DataFrame({"z": collapsed.zs, "g": collapsed.gs}))


# =============================================================================
# Readers
# =============================================================================


def read_meta(directory: Path) -> RunMetadata:
    """Load meta.json and check its schema version."""
    path = directory / META_FILE
    if not path.is_file():
        raise InputFileError(f"missing {META_FILE} in {directory}", {"path": str(path)})
    try:
        meta = RunMetadata.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise InputFileError(
            f"{path}: invalid run metadata", {"path": str(path), "errors": e.error_count()}
        ) from e
    if meta.schema_version != SCHEMA_VERSION:
        raise InputFileError(
            f"{path}: schema version {meta.schema_version} is not supported",
            {"path": str(path), "expected": SCHEMA_VERSION},
        )
    return meta


def _read_numeric_csv(path: Path, columns: list[str]) -> pd.DataFrame:
    """Read a CSV of numbers, naming the file and line of the first bad value."""
    if not path.is_file():
        raise InputFileError(f"missing input file {path}", {"path": str(path)})
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputFileError(f"{path}: {e}", {"path": str(path)}) from e

    missing = [c for c in columns if c not in raw.columns]
    if missing:
        raise InputFileError(
            f"{path}: line 1: missing columns {missing}", {"path": str(path), "line": 1}
        )

    frame = pd.DataFrame(index=raw.index)
    for column in columns:
        values = pd.to_numeric(raw[column].str.strip(), errors="coerce")
        bad = values.isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            line = row + 2  # header is line 1
            raise InputFileError(
                f"{path}: line {line}: non-numeric {column} value {raw[column].iloc[row]!r}",
                {"path": str(path), "line": line, "column": column},
            )
        frame[column] = values
    return frame


def read_moments_csv(directory: Path) -> ObservableSeries:
    frame = _read_numeric_csv(directory / MOMENTS_FILE, MOMENT_COLUMNS)
    if frame.empty:
        raise InputFileError(f"{directory / MOMENTS_FILE}: no rows", {"path": str(directory)})
    return ObservableSeries(
        ts=frame["t"].to_numpy(dtype=np.int64),
        mean_x=frame["mean_x"].to_numpy(dtype=np.float64),
        mean_x2=frame["mean_x2"].to_numpy(dtype=np.float64),
        range=frame["range"].to_numpy(dtype=np.float64),
        entropy=frame["entropy_mean_of_S"].to_numpy(dtype=np.float64),
        entropy_of_mean_rho=frame["entropy_of_mean_rho"].to_numpy(dtype=np.float64),
        stderr_x=frame["stderr_x"].to_numpy(dtype=np.float64),
        stderr_x2=frame["stderr_x2"].to_numpy(dtype=np.float64),
        stderr_range=frame["stderr_range"].to_numpy(dtype=np.float64),
        stderr_entropy=frame["stderr_entropy"].to_numpy(dtype=np.float64),
    )


def read_profile_csv(directory: Path, t: int, n_realizations: int = 1) -> ProbabilityProfile:
    frame = _read_numeric_csv(directory / profile_file(t), PROFILE_COLUMNS)
    return ProbabilityProfile(
        t=t,
        xs=frame["x"].to_numpy(dtype=np.int64),
        f=frame["f"].to_numpy(dtype=np.float64),
        n_realizations=n_realizations,
        stderr=frame["stderr"].to_numpy(dtype=np.float64),
    )

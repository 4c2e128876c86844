import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.manifold.gaussian import ThetaPoint, metric_speed_sq
from src.services.dynamics import GeodesicTrajectory, JacobiTrajectory
from src.services.entropy import VolumeSeries
from src.services.maxent import DiscreteDistribution
from src.storage.models import RunRecord, SweepRow, VerificationReport

logger = logging.getLogger(__name__)

# Round-trips every double exactly, so reruns write identical bytes.
FLOAT_FORMAT = "%.17g"

RECORD_FILE = "record.json"
TIMING_FILE = "timing.json"
SUMMARY_FILE = "summary.csv"
VERIFY_FILE = "verify.json"

SUMMARY_COLUMNS = ["N", "lambda", "ricci", "slope", "slope_ratio", "lyapunov", "lyapunov_ratio", "status"]


def run_directory(root: Path, n: int, lambda_rate: float) -> Path:
    """Per-run output directory, e.g. out/N2_lambda0.5."""
    return Path(root) / f"N{n}_lambda{lambda_rate:g}"


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path)


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

def curvature_frame(points: Sequence[ThetaPoint], ricci: Sequence[float], ricci_fd: Sequence[float]) -> pd.DataFrame:
    return pd.DataFrame({
        "sample": np.arange(len(points)),
        "min_sigma": [float(p.sigma.min()) for p in points],
        "max_sigma": [float(p.sigma.max()) for p in points],
        "ricci": list(ricci),
        "ricci_fd": list(ricci_fd),
    })


def geodesic_frame(trajectory: GeodesicTrajectory) -> pd.DataFrame:
    """Long format: one row per (tau, block)."""
    n_blocks = trajectory.n_blocks
    n_samples = len(trajectory.points)
    speed = np.array([metric_speed_sq(p, v) for p, v in trajectory.states])
    return pd.DataFrame({
        "tau": np.repeat(trajectory.tau_grid, n_blocks),
        "block": np.tile(np.arange(n_blocks), n_samples),
        "mu": np.concatenate([p.mu for p in trajectory.points]),
        "sigma": np.concatenate([p.sigma for p in trajectory.points]),
        "dmu": np.concatenate([v.dmu for v in trajectory.velocities]),
        "dsigma": np.concatenate([v.dsigma for v in trajectory.velocities]),
        "speed_sq": np.repeat(speed, n_blocks),
    })


def entropy_frame(series: VolumeSeries) -> pd.DataFrame:
    return pd.DataFrame({
        "tau": series.tau_grid,
        "log_region_volume": series.log_region_volume,
        "log_avg_volume": series.log_avg_volume,
        "entropy": series.entropy,
    })


def jacobi_frame(trajectory: JacobiTrajectory) -> pd.DataFrame:
    return pd.DataFrame({
        "tau": trajectory.tau_grid,
        "intensity": trajectory.intensities,
        "running_rate": trajectory.running_rate(),
    })


def maxent_frame(distribution: DiscreteDistribution, reference: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({
        "x": distribution.grid,
        "weight": distribution.weights,
        "gaussian_reference": reference,
    })


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

def write_json(text: str, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_record(record: RunRecord, directory: Path) -> Path:
    """record.json holds everything reproducible; the wall-clock duration goes to timing.json."""
    directory = Path(directory)
    path = write_json(record.model_dump_json(indent=2), directory / RECORD_FILE)
    write_json(json.dumps({"duration_seconds": record.duration_seconds}, indent=2), directory / TIMING_FILE)
    return path


def read_record(path: Path) -> RunRecord:
    path = Path(path)
    if path.is_dir():
        path = path / RECORD_FILE
    record = RunRecord.model_validate_json(path.read_text(encoding="utf-8"))
    timing = path.parent / TIMING_FILE
    if timing.is_file():
        duration = json.loads(timing.read_text(encoding="utf-8")).get("duration_seconds", 0.0)
        record = record.model_copy(update={"duration_seconds": duration})
    return record


def summary_frame(rows: Iterable[SweepRow]) -> pd.DataFrame:
    frame = pd.DataFrame([row.model_dump() for row in rows])
    if frame.empty:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    return frame.rename(columns={"lambda_rate": "lambda"})[SUMMARY_COLUMNS]


def write_summary(rows: Iterable[SweepRow], path: Path) -> Path:
    return write_csv(summary_frame(rows), path)


def read_summary(path: Path) -> List[SweepRow]:
    frame = read_csv(path).rename(columns={"lambda": "lambda_rate"})
    frame = frame.astype(object).where(frame.notna(), None)
    return [SweepRow.model_validate(row) for row in frame.to_dict(orient="records")]


def write_verification(report: VerificationReport, path: Path) -> Path:
    return write_json(report.model_dump_json(indent=2), path)


def read_verification(path: Path) -> Optional[VerificationReport]:
    path = Path(path)
    if not path.is_file():
        return None
    return VerificationReport.model_validate_json(path.read_text(encoding="utf-8"))

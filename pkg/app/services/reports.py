"""CSV and text outputs. Comma-delimited, '.' decimals, LF line endings, floats via repr."""
import csv
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from app.models.distribution import BiGaussianParams
from app.models.scene import TrajectoryScene
from app.schemas.all_schemas import LossRecord, MetricsReport

PREDICTION_HEADER = ["pedestrian_id", "kind", "sample", "step", "x", "y", "sigma_x", "sigma_y", "rho"]


def _num(value: float) -> str:
    return repr(float(value))


def _open_csv(path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = path.open("w", newline="")
    return handle, csv.writer(handle, lineterminator="\n")


class LossLogWriter:
    def __init__(self, path: Path):
        self._handle, self._writer = _open_csv(path)
        self._writer.writerow(["epoch", "step", "nll", "lr"])

    def write(self, record: LossRecord) -> None:
        self._writer.writerow([record.epoch, record.step, _num(record.nll), _num(record.lr)])
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()


def write_metrics_csv(report: MetricsReport, path: Path) -> Path:
    handle, writer = _open_csv(path)
    with handle:
        writer.writerow(["index", "scene", "start_frame", "num_pedestrians", "ade", "fde"])
        for row in report.scenes:
            writer.writerow([row.index, row.scene, row.start_frame, row.num_pedestrians, _num(row.ade), _num(row.fde)])
        writer.writerow(["all", "", "", report.num_pedestrians, _num(report.ade), _num(report.fde)])
    return Path(path)


def write_summary(report: MetricsReport, path: Path, holdout: str, checkpoint: str) -> Path:
    # время только здесь, csv остаются побайтно воспроизводимыми
    lines = [
        f"generated: {datetime.now(timezone.utc).isoformat(timespec='seconds')}",
        f"holdout: {holdout}",
        f"checkpoint: {checkpoint}",
        f"windows: {report.num_windows}",
        f"pedestrians: {report.num_pedestrians}",
        f"samples per pedestrian: {report.num_samples}",
        f"ADE: {report.ade:.4f} m",
        f"FDE: {report.fde:.4f} m",
        f"wall clock: {report.wall_clock_s:.2f} s",
    ]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_prediction_csv(path: Path, scene: TrajectoryScene, params: BiGaussianParams,
                         samples: np.ndarray) -> Path:
    """Per pedestrian: observed points, the mean path with (sigma_x, sigma_y, rho), then K sampled paths."""
    mean_path = params.mean_path(scene.last_observed)
    sigma, rho = params.sigma.data, params.rho.data
    handle, writer = _open_csv(path)
    with handle:
        writer.writerow(PREDICTION_HEADER)
        for n, ped in enumerate(scene.pedestrian_ids):
            for t in range(scene.t_obs):
                x, y = scene.positions_obs[t, n]
                writer.writerow([ped, "obs", "", t, _num(x), _num(y), "", "", ""])
            for t in range(mean_path.shape[0]):
                x, y = mean_path[t, n]
                writer.writerow([ped, "mean", "", t, _num(x), _num(y),
                                 _num(sigma[t, n, 0]), _num(sigma[t, n, 1]), _num(rho[t, n])])
            for k in range(samples.shape[0]):
                for t in range(samples.shape[1]):
                    x, y = samples[k, t, n]
                    writer.writerow([ped, "sample", k, t, _num(x), _num(y), "", "", ""])
    return Path(path)


def write_matrix_blocks(path: Path, title: str, blocks: Iterable[Tuple[str, np.ndarray]],
                        row_labels: Sequence, col_labels: Sequence) -> Path:
    lines: List[str] = [f"# {title}"]
    for label, matrix in blocks:
        lines.append(f"[{label}]")
        lines.append(",".join([""] + [str(c) for c in col_labels]))
        for r, row in zip(row_labels, matrix):
            lines.append(",".join([str(r)] + [_num(v) for v in row]))
        lines.append("")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines))
    return path


def write_sweep_csv(path: Path, rows: Sequence[Tuple[float, MetricsReport]]) -> Path:
    handle, writer = _open_csv(path)
    with handle:
        writer.writerow(["xi", "ade", "fde"])
        for xi, report in rows:
            writer.writerow([_num(xi), _num(report.ade), _num(report.fde)])
    return Path(path)

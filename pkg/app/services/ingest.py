import dataclasses
import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ConfigurationError, DataError, EmptyTableError, IntegrityError, ParseError
from app.models.scene import DatasetSplit, RawTrajectoryTable, TrajectoryScene

logger = logging.getLogger(__name__)

DEFAULT_FIELD_ORDER = "frame,ped,x,y"


def _integral(token: str, what: str, line_no: int, path: str) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"{what} {token!r} is not a number", line_no, path) from None
    if not np.isfinite(value) or not value.is_integer():
        raise ParseError(f"{what} {token!r} is not integral", line_no, path)
    return int(value)


def load_scene_file(path, name: Optional[str] = None, field_order: str = DEFAULT_FIELD_ORDER) -> RawTrajectoryTable:
    """Parse a whitespace-delimited `frame_id pedestrian_id x y` file (column order configurable)."""
    path = Path(path)
    order = [f.strip() for f in field_order.split(",")]
    if sorted(order) != ["frame", "ped", "x", "y"]:
        raise ConfigurationError(f"field order {field_order!r} is not a permutation of frame,ped,x,y")
    column = {f: i for i, f in enumerate(order)}

    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read trajectory file {path}: {exc.strerror}") from exc

    frames, peds, xs, ys = [], [], [], []
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 4:
            raise ParseError(f"expected 4 fields, got {len(tokens)}", line_no, str(path))
        frames.append(_integral(tokens[column["frame"]], "frame id", line_no, str(path)))
        peds.append(_integral(tokens[column["ped"]], "pedestrian id", line_no, str(path)))
        try:
            x, y = float(tokens[column["x"]]), float(tokens[column["y"]])
        except ValueError:
            raise ParseError("position is not a number", line_no, str(path)) from None
        if not (np.isfinite(x) and np.isfinite(y)):
            raise ParseError("position is not finite", line_no, str(path))
        xs.append(x)
        ys.append(y)

    if not frames:
        raise EmptyTableError(f"trajectory file {path} has no rows")

    frames_arr = np.asarray(frames, dtype=np.int64)
    peds_arr = np.asarray(peds, dtype=np.int64)
    order_idx = np.lexsort((peds_arr, frames_arr))
    frames_arr, peds_arr = frames_arr[order_idx], peds_arr[order_idx]
    positions = np.stack([np.asarray(xs), np.asarray(ys)], axis=1)[order_idx]

    dup = (np.diff(frames_arr) == 0) & (np.diff(peds_arr) == 0)
    if np.any(dup):
        k = int(np.argmax(dup))
        raise IntegrityError(
            f"{path}: duplicate row for frame {frames_arr[k]} pedestrian {peds_arr[k]}"
        )

    table = RawTrajectoryTable(name or path.stem.upper(), frames_arr, peds_arr, positions)
    logger.debug("loaded %s: %d rows, %d pedestrians", table.name, len(table), len(np.unique(peds_arr)))
    return table


def frame_step(frames: np.ndarray) -> int:
    unique = np.unique(frames)
    if unique.size < 2:
        return 1
    return int(np.min(np.diff(unique)))


def _pedestrian_tracks(table: RawTrajectoryTable, frame_list: np.ndarray) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    """pedestrian id -> (sorted indices into frame_list, positions at those frames)."""
    frame_idx = np.searchsorted(frame_list, table.frames)
    tracks = {}
    for ped in np.unique(table.pedestrian_ids):
        rows = table.pedestrian_ids == ped
        tracks[int(ped)] = (frame_idx[rows], table.positions[rows])
    return tracks


def _spans(track_idx: np.ndarray, start: int, length: int) -> Optional[int]:
    """Row offset where the track covers frame indices start..start+length-1, else None."""
    k = int(np.searchsorted(track_idx, start))
    end = k + length - 1
    if k < track_idx.size and end < track_idx.size and track_idx[k] == start and track_idx[end] == start + length - 1:
        return k
    return None


def window_scenes(table: RawTrajectoryTable, t_obs: int, t_pred: int, stride: int = 1) -> List[TrajectoryScene]:
    """
    One window per start frame (advancing by ``stride`` frames) in which at least one
    pedestrian is present at all t_obs + t_pred consecutive dataset frames. Frames
    must be evenly spaced by the dataset frame step; partial pedestrians are left out.
    """
    if t_obs < 1 or t_pred < 1 or stride < 1:
        raise ConfigurationError(f"t_obs, t_pred and stride must be >= 1, got {t_obs}, {t_pred}, {stride}")

    frame_list = np.unique(table.frames)
    step = frame_step(frame_list)
    length = t_obs + t_pred
    tracks = _pedestrian_tracks(table, frame_list)

    scenes = []
    for start in range(0, frame_list.size - length + 1, stride):
        if frame_list[start + length - 1] - frame_list[start] != step * (length - 1):
            continue
        ids, paths = [], []
        for ped, (track_idx, positions) in tracks.items():
            k = _spans(track_idx, start, length)
            if k is not None:
                ids.append(ped)
                paths.append(positions[k:k + length])
        if not ids:
            continue
        full = np.stack(paths, axis=1)  # [L, N, 2]
        scene = TrajectoryScene(
            name=table.name,
            start_frame=int(frame_list[start]),
            pedestrian_ids=tuple(ids),
            positions_obs=full[:t_obs].copy(),
            positions_fut=full[t_obs:].copy(),
        )
        scenes.append(to_displacements(scene))
    return scenes


def observation_window(table: RawTrajectoryTable, t_obs: int) -> TrajectoryScene:
    """Observation-only scene over the last ``t_obs`` frames of the table."""
    frame_list = np.unique(table.frames)
    tracks = _pedestrian_tracks(table, frame_list)
    start = frame_list.size - t_obs
    if start < 0:
        raise DataError(
            f"{table.name}: {frame_list.size} frames, need {t_obs}; "
            f"pedestrians dropped: {sorted(tracks)}"
        )
    step = frame_step(frame_list)
    if frame_list[-1] - frame_list[start] != step * (t_obs - 1):
        missing = sorted(set(range(int(frame_list[start]), int(frame_list[-1]) + 1, step)) - set(frame_list.tolist()))
        raise DataError(
            f"{table.name}: last {t_obs} frames are not evenly spaced by {step}; missing frames: {missing}"
        )

    ids, paths, dropped = [], [], []
    for ped, (track_idx, positions) in tracks.items():
        k = _spans(track_idx, start, t_obs)
        if k is None:
            dropped.append(ped)
        else:
            ids.append(ped)
            paths.append(positions[k:k + t_obs])
    if not ids:
        raise DataError(
            f"{table.name}: no pedestrian observed for the last {t_obs} frames; pedestrians dropped: {dropped}"
        )
    if dropped:
        logger.warning("%s: pedestrians dropped (observed < %d frames): %s", table.name, t_obs, dropped)

    scene = TrajectoryScene(
        name=table.name,
        start_frame=int(frame_list[start]),
        pedestrian_ids=tuple(ids),
        positions_obs=np.stack(paths, axis=1),
    )
    return to_displacements(scene)


def to_displacements(scene: TrajectoryScene) -> TrajectoryScene:
    disp = np.zeros_like(scene.positions_obs)
    disp[1:] = scene.positions_obs[1:] - scene.positions_obs[:-1]
    return dataclasses.replace(scene, displacements_obs=disp)


def reconstruct_positions(displacements: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Inverse of to_displacements: origin plus running sum of the deltas."""
    return origin[None] + np.cumsum(displacements, axis=0)


def load_scene_tables(data_root, scenes: Sequence[str], field_order: str = DEFAULT_FIELD_ORDER) -> Dict[str, RawTrajectoryTable]:
    root = Path(data_root)
    if not root.is_dir():
        raise DataError(f"data root {root} does not exist or is not a directory")
    tables = {}
    for name in scenes:
        path = root / f"{name.lower()}.txt"
        if not path.is_file():
            raise DataError(f"scene {name}: file {path} not found")
        tables[name.upper()] = load_scene_file(path, name=name.upper(), field_order=field_order)
    return tables


def leave_one_out_split(
    scene_tables: Mapping[str, RawTrajectoryTable],
    holdout: str,
    t_obs: int,
    t_pred: int,
    stride: int = 1,
) -> DatasetSplit:
    tables = {name.upper(): table for name, table in scene_tables.items()}
    key = holdout.upper()
    if key not in tables:
        raise ConfigurationError(f"unknown holdout {holdout!r}, available: {', '.join(sorted(tables))}")

    split = DatasetSplit(holdout_name=key)
    for name, table in tables.items():
        windows = window_scenes(table, t_obs, t_pred, stride)
        if name == key:
            split.test_scenes.extend(windows)
        else:
            split.train_scenes.extend(windows)

    if not split.train_scenes:
        logger.warning("leave-one-out with holdout %s leaves an empty training set", key)
    logger.info(
        "split holdout=%s: %d train windows, %d test windows",
        key, len(split.train_scenes), len(split.test_scenes),
    )
    return split


def subsample(scenes: Sequence[TrajectoryScene], fraction: float = 1.0, limit: Optional[int] = None,
              seed: int = 0) -> List[TrajectoryScene]:
    """Deterministic subset keeping the original order."""
    count = len(scenes)
    keep = count if fraction >= 1.0 else max(1, int(round(count * fraction))) if count else 0
    if limit is not None:
        keep = min(keep, limit)
    if keep >= count:
        return list(scenes)
    picked = np.sort(np.random.default_rng(seed).choice(count, size=keep, replace=False))
    return [scenes[i] for i in picked]

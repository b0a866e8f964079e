"""Kinematic feature extraction: tracks -> fixed-length node feature vectors.

Each (instrument, phase) unit of a clip becomes one 14-dimensional vector.
Derivatives use first-order forward differences throughout:

    v_i = (p_{i+1} - p_i) / (t_{i+1} - t_i)

so velocity/acceleration/jerk are 1/2/3 samples shorter than position within
a contiguous segment. Invisible-sample gaps of at most ``max_gap`` samples are
linearly interpolated; longer gaps split the track into segments and no
difference ever straddles a split.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataio import ClipRecord, InstrumentTrack, PhaseAnnotation
from .errors import KinematicsError, SkillGraphError
from .util import get_logger

log = get_logger(__name__)

FEATURE_NAMES = (
    "path_length",
    "mean_speed",
    "std_speed",
    "max_speed",
    "mean_accel_magnitude",
    "std_accel_magnitude",
    "mean_jerk_magnitude",
    "idle_fraction",
    "bbox_area",
    "duration_s",
    "visibility_fraction",
    "turning_rate_mean",
    "curvature_proxy",
    "motion_smoothness",
)
FEATURE_COUNT = len(FEATURE_NAMES)
FEATURE_SCHEMA_VERSION = "kin14-v1"

IDLE_SPEED_THRESHOLD = 0.01  # units/s
CURVATURE_CAP = 100.0
MIN_SEGMENT_SAMPLES = 4  # jerk needs four positions
DEFAULT_MAX_GAP = 5


def feature_schema_id(mode: str) -> str:
    return f"{FEATURE_SCHEMA_VERSION}-{mode.lower()}"


@dataclass(frozen=True)
class Segment:
    """One contiguous run of usable samples with its forward differences."""

    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    speed: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray


@dataclass(frozen=True)
class KinematicSeries:
    clip_id: str
    instrument_id: str
    segments: tuple[Segment, ...]
    visibility_fraction: float

    @property
    def t(self) -> np.ndarray:
        return np.concatenate([s.t for s in self.segments])

    @property
    def position(self) -> np.ndarray:
        return np.concatenate([s.position for s in self.segments])

    @property
    def velocity(self) -> np.ndarray:
        return np.concatenate([s.velocity for s in self.segments])

    @property
    def speed(self) -> np.ndarray:
        return np.concatenate([s.speed for s in self.segments])

    @property
    def acceleration(self) -> np.ndarray:
        return np.concatenate([s.acceleration for s in self.segments])

    @property
    def jerk(self) -> np.ndarray:
        return np.concatenate([s.jerk for s in self.segments])


@dataclass(frozen=True)
class NodeFeatureVector:
    clip_id: str
    instrument_id: str
    phase_name: str
    features: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature z-score parameters fitted on the training split.

    Population standard deviation; features flagged constant transform to 0.
    """

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES


def _usable_runs(track: InstrumentTrack, max_gap: int) -> list[np.ndarray]:
    """Index runs of usable samples after gap interpolation and splitting.

    Returns index arrays into the (possibly interpolated) position array.
    Leading/trailing invisible samples are dropped; interior invisible runs
    of length <= max_gap are filled by linear interpolation in t, longer
    runs split the track.
    """
    vis = track.visible.copy()
    pos = track.positions.astype(np.float64).copy()
    n = len(track)
    vis_idx = np.flatnonzero(vis)
    if vis_idx.size == 0:
        return []
    first, last = vis_idx[0], vis_idx[-1]
    runs: list[list[int]] = [[first]]
    i = first + 1
    while i <= last:
        if vis[i]:
            runs[-1].append(i)
            i += 1
            continue
        j = i
        while not vis[j]:  # bounded: a visible sample exists at `last`
            j += 1
        gap = j - i
        if gap <= max_gap:
            t0, t1 = track.t[i - 1], track.t[j]
            for k in range(i, j):
                w = 0.0 if t1 == t0 else (track.t[k] - t0) / (t1 - t0)
                pos[k] = (1 - w) * pos[i - 1] + w * pos[j]
                runs[-1].append(k)
        else:
            runs.append([])
        runs[-1].append(j)
        i = j + 1
    out = []
    for run in runs:
        if len(run) >= MIN_SEGMENT_SAMPLES:
            out.append((np.array(run, dtype=np.int64), pos))
        elif run:
            log.debug(
                "dropping %d-sample segment of (%s, %s)",
                len(run), track.clip_id, track.instrument_id,
            )
    return out


def _segment_from(t: np.ndarray, p: np.ndarray) -> Segment:
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise KinematicsError("zero dt: duplicate timestamps in segment")
    v = np.diff(p, axis=0) / dt[:, None]
    speed = np.linalg.norm(v, axis=1)
    a = np.diff(v, axis=0) / dt[:-1, None]
    j = np.diff(a, axis=0) / dt[:-2, None]
    return Segment(t, p, v, speed, a, j)


def compute_kinematics(
    track: InstrumentTrack, max_gap: int = DEFAULT_MAX_GAP
) -> KinematicSeries:
    """Forward-difference velocity, speed, acceleration, and jerk for a track.

    Raises
    ------
    KinematicsError
        "track too short" when fewer than four usable samples survive gap
        handling; "zero dt" on duplicate timestamps.
    """
    runs = _usable_runs(track, max_gap)
    total = sum(len(idx) for idx, _ in runs)
    if total < MIN_SEGMENT_SAMPLES:
        raise KinematicsError(
            f"track too short: ({track.clip_id}, {track.instrument_id}) has "
            f"{total} usable samples, need {MIN_SEGMENT_SAMPLES}"
        )
    segments = tuple(_segment_from(track.t[idx], pos[idx]) for idx, pos in runs)
    visibility = float(np.mean(track.visible)) if len(track) else 0.0
    return KinematicSeries(track.clip_id, track.instrument_id, segments, visibility)


def _turning_rates(seg: Segment) -> np.ndarray:
    """Unsigned angle change per second between consecutive velocity vectors."""
    v = seg.velocity
    if len(v) < 2:
        return np.empty(0)
    n1 = np.linalg.norm(v[:-1], axis=1)
    n2 = np.linalg.norm(v[1:], axis=1)
    ok = (n1 > 1e-12) & (n2 > 1e-12)
    if not np.any(ok):
        return np.empty(0)
    dots = np.einsum("ij,ij->i", v[:-1], v[1:])[ok] / (n1[ok] * n2[ok])
    angles = np.arccos(np.clip(dots, -1.0, 1.0))
    dt = np.diff(seg.t)[:-1][ok]
    return angles / dt


def summarize_unit(
    series: KinematicSeries,
    phase_name: str = "",
    idle_threshold: float = IDLE_SPEED_THRESHOLD,
    curvature_cap: float = CURVATURE_CAP,
) -> NodeFeatureVector:
    """Reduce a kinematic series to the 14-feature schema.

    bbox_area is the axis-aligned extent product: raw area in 2D,
    log1p(volume) in 3D so flat tracks stay finite. motion_smoothness is
    -log1p of the dimensionless jerk T^5/L^2 * integral(|jerk|^2 dt), zero
    for jerk-free motion; smaller (more negative) means jerkier.
    """
    if not series.segments:
        raise SkillGraphError("empty kinematic series")
    pos = series.position
    speeds = series.speed
    accel_mag = np.linalg.norm(series.acceleration, axis=1)
    jerk_mag = np.linalg.norm(series.jerk, axis=1)

    path_length = float(
        sum(np.linalg.norm(np.diff(s.position, axis=0), axis=1).sum() for s in series.segments)
    )
    duration = float(series.segments[-1].t[-1] - series.segments[0].t[0])

    extent = pos.max(axis=0) - pos.min(axis=0)
    raw_extent = float(np.prod(extent))
    bbox = raw_extent if pos.shape[1] == 2 else float(np.log1p(raw_extent))

    rates = [_turning_rates(s) for s in series.segments]
    rates = np.concatenate(rates) if rates else np.empty(0)
    turning_rate = float(rates.mean()) if rates.size else 0.0

    disp = float(np.linalg.norm(pos[-1] - pos[0]))
    if disp <= 1e-12:
        curvature = curvature_cap
    else:
        curvature = min(path_length / disp, curvature_cap)

    jerk_sq_int = float(
        sum(
            ((np.linalg.norm(s.jerk, axis=1) ** 2) * np.diff(s.t)[: len(s.jerk)]).sum()
            for s in series.segments
        )
    )
    if jerk_sq_int <= 0.0 or path_length <= 0.0 or duration <= 0.0:
        dimless_jerk = 0.0
    else:
        dimless_jerk = duration**5 * jerk_sq_int / path_length**2
    smoothness = float(-np.log1p(dimless_jerk))

    values = np.array(
        [
            path_length,
            float(speeds.mean()),
            float(speeds.std()),
            float(speeds.max()),
            float(accel_mag.mean()),
            float(accel_mag.std()),
            float(jerk_mag.mean()),
            float(np.mean(speeds < idle_threshold)),
            bbox,
            duration,
            series.visibility_fraction,
            turning_rate,
            curvature,
            smoothness,
        ],
        dtype=np.float64,
    )
    if not np.all(np.isfinite(values)):
        bad = [FEATURE_NAMES[i] for i in np.flatnonzero(~np.isfinite(values))]
        raise SkillGraphError(f"non-finite features {bad} for "
                              f"({series.clip_id}, {series.instrument_id})")
    return NodeFeatureVector(series.clip_id, series.instrument_id, phase_name, values)


def slice_track(track: InstrumentTrack, phase: PhaseAnnotation) -> InstrumentTrack:
    """Samples of a track whose frames fall inside a phase (inclusive bounds)."""
    m = (track.frames >= phase.start_frame) & (track.frames <= phase.end_frame)
    return InstrumentTrack(
        track.clip_id,
        track.instrument_id,
        track.frames[m],
        track.t[m],
        track.positions[m],
        track.visible[m],
    )


def clip_node_features(clip: ClipRecord, max_gap: int = DEFAULT_MAX_GAP) -> list[NodeFeatureVector]:
    """One feature vector per (instrument, phase) unit of the clip.

    Units that are too short for kinematics are skipped with a warning; the
    graph for this clip simply has fewer nodes.
    """
    out = []
    for track in clip.tracks:
        for phase in clip.phases:
            sub = slice_track(track, phase)
            try:
                series = compute_kinematics(sub, max_gap=max_gap)
            except KinematicsError as e:
                log.warning(
                    "skipping unit (%s, %s, %s): %s",
                    clip.clip_id, track.instrument_id, phase.phase_name, e,
                )
                continue
            out.append(summarize_unit(series, phase.phase_name))
    return out


def fit_scaler(train_vectors: list[NodeFeatureVector]) -> FeatureScaler:
    if len(train_vectors) < 2:
        raise SkillGraphError("need at least 2 training vectors to fit a scaler")
    names = train_vectors[0].feature_names
    X = np.stack([v.features for v in train_vectors])
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = std <= 1e-12
    return FeatureScaler(mean, std, constant, names)


def apply_scaler(scaler: FeatureScaler, vector: NodeFeatureVector) -> NodeFeatureVector:
    safe = np.where(scaler.constant, 1.0, scaler.std)
    z = np.where(scaler.constant, 0.0, (vector.features - scaler.mean) / safe)
    return replace(vector, features=z)


def write_feature_table(vectors: list[NodeFeatureVector], path) -> None:
    """Feature table CSV: clip_id, instrument_id, phase_name, then F columns."""
    names = vectors[0].feature_names if vectors else FEATURE_NAMES
    lines = [",".join(("clip_id", "instrument_id", "phase_name") + tuple(names))]
    for v in vectors:
        vals = ",".join(repr(float(x)) for x in v.features)
        lines.append(f"{v.clip_id},{v.instrument_id},{v.phase_name},{vals}")
    from pathlib import Path

    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_feature_table(path) -> list[NodeFeatureVector]:
    import csv
    from pathlib import Path

    from .errors import DataFormatError

    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"feature table not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:3] != ["clip_id", "instrument_id", "phase_name"]:
            raise DataFormatError(f"{path}: bad feature table header")
        names = tuple(header[3:])
        out = []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 3 + len(names):
                raise DataFormatError(f"{path} row {i}: wrong field count")
            feats = np.array([float(x) for x in row[3:]], dtype=np.float64)
            out.append(NodeFeatureVector(row[0], row[1], row[2], feats, names))
    return out

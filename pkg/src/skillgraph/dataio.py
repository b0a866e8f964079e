"""Dataset loading, validation, and persistence.

File formats
------------
Manifest (``manifest.json``), key-sorted canonical JSON::

    {
      "categories": ["Overall", ...],
      "clips": ["clips/c0000.json", ...],      // paths relative to manifest dir
      "ordinal_scale": [1, 5],
      "split": {"c0000": "train", ...}
    }

Clip record (one JSON file per clip)::

    {
      "clip_id": "c0000",
      "mode": "2D",                            // or "3D"
      "trajectories": "traj/c0000.csv",        // relative to manifest dir
      "phases": [{"phase_name": "calot", "start_frame": 0, "end_frame": 149}, ...],
      "labels": {"Overall": 4, ...},
      "skill_class": "expert"                  // or null
    }

Trajectory CSV: header exactly ``clip_id,instrument_id,frame,t,x,y[,z],visible``,
UTF-8, LF line endings, '.' decimal separator, visible in {true,false,1,0}.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .util import canonical_json_dumps, read_json, get_logger

log = get_logger(__name__)

SPLITS = ("train", "val", "test")
SKILL_CLASSES = ("novice", "intermediate", "expert")
TRAJECTORY_COLUMNS_2D = ["clip_id", "instrument_id", "frame", "t", "x", "y", "visible"]
TRAJECTORY_COLUMNS_3D = ["clip_id", "instrument_id", "frame", "t", "x", "y", "z", "visible"]


@dataclass(frozen=True)
class InstrumentTrack:
    """Time-stamped positions of one instrument in one clip.

    ``positions`` is (n, 2) or (n, 3); rows with ``visible == False`` are
    retained but may hold non-finite coordinates.
    """

    clip_id: str
    instrument_id: str
    frames: np.ndarray
    t: np.ndarray
    positions: np.ndarray
    visible: np.ndarray

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class PhaseAnnotation:
    phase_name: str
    start_frame: int
    end_frame: int


@dataclass
class ClipRecord:
    clip_id: str
    mode: str
    tracks: list[InstrumentTrack]
    phases: list[PhaseAnnotation]
    labels: dict[str, int]
    skill_class: str | None = None
    trajectory_path: str = ""


@dataclass
class DatasetManifest:
    root: Path
    ordinal_scale: tuple[int, int]
    categories: list[str]
    clip_paths: list[str]
    clips: list[ClipRecord]
    split: dict[str, str]

    def clips_in_split(self, name: str) -> list[ClipRecord]:
        return [c for c in self.clips if self.split[c.clip_id] == name]


@dataclass(frozen=True)
class Violation:
    clip_id: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, clip_id: str, message: str) -> None:
        self.violations.append(Violation(clip_id, message))

    def __str__(self) -> str:
        if self.ok:
            return "dataset valid: no violations"
        lines = [f"{v.clip_id}: {v.message}" for v in self.violations]
        return "dataset invalid:\n" + "\n".join(lines)


def _parse_visible(token: str, row: int) -> bool:
    t = token.strip().lower()
    if t in ("true", "1"):
        return True
    if t in ("false", "0"):
        return False
    raise DataFormatError(f"row {row}: bad visible flag {token!r}")


def load_trajectories(path: Path | str) -> list[InstrumentTrack]:
    """Parse a trajectory CSV into one track per (clip_id, instrument_id).

    Rows may arrive in any order; each track is sorted by frame. Dimensionality
    (2 or 3) is inferred from the presence of the z column.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"trajectory file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty trajectory file") from None
        if header == TRAJECTORY_COLUMNS_2D:
            dim = 2
        elif header == TRAJECTORY_COLUMNS_3D:
            dim = 3
        else:
            raise DataFormatError(
                f"{path}: bad header {header!r}; expected "
                f"{TRAJECTORY_COLUMNS_2D} or {TRAJECTORY_COLUMNS_3D}"
            )
        groups: dict[tuple[str, str], list[tuple]] = {}
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path} row {i}: expected {len(header)} fields")
            clip_id, instrument_id = row[0], row[1]
            try:
                frame = int(row[2])
                t = float(row[3])
                coords = tuple(float(v) for v in row[4 : 4 + dim])
            except ValueError as e:
                raise DataFormatError(f"{path} row {i}: {e}") from None
            visible = _parse_visible(row[4 + dim], i)
            if visible and not all(math.isfinite(c) for c in coords):
                raise DataFormatError(
                    f"{path} row {i}: non-finite position on a visible sample"
                )
            groups.setdefault((clip_id, instrument_id), []).append(
                (frame, t, coords, visible, i)
            )

    tracks = []
    for (clip_id, instrument_id), rows in sorted(groups.items()):
        rows.sort(key=lambda r: r[0])
        frames = np.array([r[0] for r in rows], dtype=np.int64)
        if np.any(np.diff(frames) <= 0):
            raise DataFormatError(
                f"{path}: duplicate frame in track ({clip_id}, {instrument_id})"
            )
        t = np.array([r[1] for r in rows], dtype=np.float64)
        if np.any(np.diff(t) < 0):
            raise DataFormatError(
                f"{path}: timestamps decrease in track ({clip_id}, {instrument_id})"
            )
        positions = np.array([r[2] for r in rows], dtype=np.float64)
        visible = np.array([r[3] for r in rows], dtype=bool)
        tracks.append(
            InstrumentTrack(clip_id, instrument_id, frames, t, positions, visible)
        )
    return tracks


def write_trajectories(tracks: list[InstrumentTrack], path: Path | str) -> None:
    """Write tracks to the trajectory CSV format (LF, full float precision)."""
    path = Path(path)
    dims = {tr.dim for tr in tracks}
    if len(dims) != 1:
        raise DataFormatError(f"mixed dimensionality across tracks: {sorted(dims)}")
    dim = dims.pop()
    header = TRAJECTORY_COLUMNS_3D if dim == 3 else TRAJECTORY_COLUMNS_2D
    lines = [",".join(header)]
    for tr in sorted(tracks, key=lambda tr: (tr.clip_id, tr.instrument_id)):
        for k in range(len(tr)):
            coords = ",".join(repr(float(c)) for c in tr.positions[k])
            vis = "true" if tr.visible[k] else "false"
            lines.append(
                f"{tr.clip_id},{tr.instrument_id},{int(tr.frames[k])},"
                f"{repr(float(tr.t[k]))},{coords},{vis}"
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DataFormatError(msg)


def load_clip(path: Path | str, root: Path, scale: tuple[int, int]) -> ClipRecord:
    """Load one clip record plus its trajectory CSV. Paths resolve under root."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"clip file not found: {path}")
    obj = read_json(path)
    for key in ("clip_id", "mode", "trajectories", "phases", "labels"):
        _require(key in obj, f"{path}: missing key '{key}'")
    clip_id = obj["clip_id"]
    mode = obj["mode"]
    _require(mode in ("2D", "3D"), f"{path}: mode must be '2D' or '3D', got {mode!r}")
    phases = []
    for k, ph in enumerate(obj["phases"]):
        for key in ("phase_name", "start_frame", "end_frame"):
            _require(key in ph, f"{path}: phases[{k}] missing '{key}'")
        _require(
            int(ph["start_frame"]) < int(ph["end_frame"]),
            f"{path}: phases[{k}] start_frame must be < end_frame",
        )
        phases.append(
            PhaseAnnotation(ph["phase_name"], int(ph["start_frame"]), int(ph["end_frame"]))
        )
    labels = {}
    for cat, score in obj["labels"].items():
        _require(
            isinstance(score, int) and not isinstance(score, bool),
            f"{path}: labels['{cat}'] must be an integer",
        )
        if not scale[0] <= score <= scale[1]:
            raise DataFormatError(
                f"{path}: labels['{cat}']={score} label out of scale {list(scale)}"
            )
        labels[cat] = score
    skill_class = obj.get("skill_class")
    if skill_class is not None:
        _require(
            skill_class in SKILL_CLASSES,
            f"{path}: skill_class must be one of {SKILL_CLASSES}",
        )
    traj_rel = obj["trajectories"]
    traj_path = root / traj_rel
    if not traj_path.exists():
        raise DataFormatError(f"{path}: trajectory file missing: {traj_path}")
    tracks = [tr for tr in load_trajectories(traj_path) if tr.clip_id == clip_id]
    return ClipRecord(clip_id, mode, tracks, phases, labels, skill_class, traj_rel)


def load_manifest(path: Path | str) -> DatasetManifest:
    """Load and eagerly resolve a dataset manifest.

    Every referenced clip file is loaded (including its trajectories) so that
    dangling references and out-of-scale labels surface here. Clips are
    ordered by clip_id regardless of on-disk order.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"manifest not found: {path}")
    root = path.parent
    obj = read_json(path)
    for key in ("ordinal_scale", "categories", "clips", "split"):
        _require(key in obj, f"{path}: missing key '{key}'")
    scale_raw = obj["ordinal_scale"]
    _require(
        isinstance(scale_raw, list) and len(scale_raw) == 2,
        f"{path}: ordinal_scale must be [min, max]",
    )
    scale = (int(scale_raw[0]), int(scale_raw[1]))
    _require(scale[0] < scale[1], f"{path}: ordinal_scale min must be < max")
    categories = list(obj["categories"])
    _require(len(categories) > 0, f"{path}: categories must be non-empty")

    clips = []
    for rel in obj["clips"]:
        clips.append(load_clip(root / rel, root, scale))
    order = np.argsort([c.clip_id for c in clips])
    clips = [clips[i] for i in order]
    clip_paths = [obj["clips"][i] for i in order]
    ids = [c.clip_id for c in clips]
    _require(len(set(ids)) == len(ids), f"{path}: duplicate clip_id")

    split = dict(obj["split"])
    for cid, s in split.items():
        _require(s in SPLITS, f"{path}: split['{cid}']={s!r} not in {SPLITS}")
    missing = sorted(set(ids) - set(split))
    extra = sorted(set(split) - set(ids))
    _require(not missing, f"{path}: clips missing from split: {missing}")
    _require(not extra, f"{path}: split names unknown clips: {extra}")

    return DatasetManifest(root, scale, categories, clip_paths, clips, split)


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "ordinal_scale": list(manifest.ordinal_scale),
        "categories": list(manifest.categories),
        "clips": list(manifest.clip_paths),
        "split": {cid: manifest.split[cid] for cid in sorted(manifest.split)},
    }


def write_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    """Canonical (key-sorted) serialization; load → write is a fixpoint."""
    Path(path).write_text(canonical_json_dumps(manifest_to_dict(manifest)), encoding="utf-8")


def clip_to_dict(clip: ClipRecord) -> dict:
    return {
        "clip_id": clip.clip_id,
        "mode": clip.mode,
        "trajectories": clip.trajectory_path,
        "phases": [
            {
                "phase_name": ph.phase_name,
                "start_frame": ph.start_frame,
                "end_frame": ph.end_frame,
            }
            for ph in clip.phases
        ],
        "labels": {k: clip.labels[k] for k in sorted(clip.labels)},
        "skill_class": clip.skill_class,
    }


def write_clip(clip: ClipRecord, path: Path | str) -> None:
    Path(path).write_text(canonical_json_dumps(clip_to_dict(clip)), encoding="utf-8")


def derive_skill_class(score: int, scale: tuple[int, int]) -> str:
    """Tertile of the ordinal scale: lower third novice, upper third expert."""
    pos = (score - scale[0]) / (scale[1] - scale[0])
    if pos < 1 / 3:
        return "novice"
    if pos < 2 / 3:
        return "intermediate"
    return "expert"


def effective_skill_class(clip: ClipRecord, scale: tuple[int, int]) -> str | None:
    """Stored skill class, or the tertile of the Overall score when absent."""
    if clip.skill_class is not None:
        return clip.skill_class
    if "Overall" in clip.labels:
        return derive_skill_class(clip.labels["Overall"], scale)
    return None


def validate_dataset(manifest: DatasetManifest) -> ValidationReport:
    """Collect invariant violations without raising.

    The dataset is accepted iff the report lists no violations. Checks repeat
    load-time guarantees (defense in depth) and add the structural ones that
    loading alone cannot see.
    """
    report = ValidationReport()
    if not manifest.categories:
        report.add("<manifest>", "categories empty")
    for clip in manifest.clips:
        cid = clip.clip_id
        if not clip.tracks:
            report.add(cid, "no instrument tracks")
        if not clip.phases:
            report.add(cid, "no phases")
        for ph in clip.phases:
            if ph.start_frame >= ph.end_frame:
                report.add(cid, f"phase '{ph.phase_name}' start >= end")
        for a, b in zip(clip.phases, clip.phases[1:]):
            if b.start_frame <= a.end_frame:
                report.add(cid, f"phases overlap: '{a.phase_name}' and '{b.phase_name}'")
        for cat, score in clip.labels.items():
            if cat not in manifest.categories:
                report.add(cid, f"label category '{cat}' not declared in manifest")
            if not manifest.ordinal_scale[0] <= score <= manifest.ordinal_scale[1]:
                report.add(cid, f"label out of scale: {cat}={score}")
        if clip.phases:
            lo = min(ph.start_frame for ph in clip.phases)
            hi = max(ph.end_frame for ph in clip.phases)
            for tr in clip.tracks:
                if len(tr) and (tr.frames[0] < lo or tr.frames[-1] > hi):
                    report.add(
                        cid,
                        f"track '{tr.instrument_id}' frames outside clip range [{lo},{hi}]",
                    )
        want_dim = 3 if clip.mode == "3D" else 2
        for tr in clip.tracks:
            if tr.dim != want_dim:
                report.add(
                    cid, f"track '{tr.instrument_id}' is {tr.dim}D in a {clip.mode} clip"
                )
    return report

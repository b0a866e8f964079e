"""Deterministic synthetic trajectory datasets with controllable skill signal.

Each clip gets a latent skill scalar u in [0, 1]. The ordinal label is drawn
first (from the bins compatible with the clip's skill class) and u is placed
in the middle of that label's bin, so adjacent labels are separated by a gap
in u. Motion properties are smooth functions of u and inject signal through
exactly the channels the feature extractor measures:

* idle fraction 0.05 + 0.30 (1 - u)          (novices hesitate more)
* meander amplitude grows with 1 - u         (path overhead, curvature)
* tremor amplitude ~ 3^(1-u), frequency up   (jerk, smoothness)

Labels for every category correlate with u by construction; generation
asserts rank correlation >= 0.8 per category and a violation-free dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import (
    ClipRecord,
    DatasetManifest,
    InstrumentTrack,
    PhaseAnnotation,
    validate_dataset,
    write_clip,
    write_manifest,
    write_trajectories,
)
from .errors import SkillGraphError
from .evaluation import spearman

DEFAULT_CATEGORIES = ("Overall", "Economy of movements", "Time and Motion")
CLASS_NAMES = ("novice", "intermediate", "expert")
CLASS_LABEL_BINS = {"novice": (1, 2), "intermediate": (3,), "expert": (4, 5)}
ORDINAL_SCALE = (1, 5)


@dataclass(frozen=True)
class SynthSpec:
    n_clips: int = 300
    class_proportions: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    instruments: int = 2
    phases: tuple[str, ...] = ("calot", "dissection")
    frames_per_phase: int = 150
    sample_rate_hz: float = 15.0
    noise_level: float = 0.0002  # measurement noise std, scene units
    seed: int = 0
    mode: str = "2D"
    categories: tuple[str, ...] = DEFAULT_CATEGORIES

    def __post_init__(self):
        if self.n_clips < 3:
            raise SkillGraphError("need at least 3 clips")
        if abs(sum(self.class_proportions) - 1.0) > 1e-9:
            raise SkillGraphError("class proportions must sum to 1")
        if self.mode not in ("2D", "3D"):
            raise SkillGraphError("mode must be '2D' or '3D'")
        if self.instruments < 1 or self.frames_per_phase < 8:
            raise SkillGraphError("degenerate spec")


def _perp_basis(direction: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    """Unit vectors orthogonal to the travel direction (1 in 2D, 2 in 3D)."""
    d = direction / np.linalg.norm(direction)
    if len(d) == 2:
        return [np.array([-d[1], d[0]])]
    ref = np.array([0.0, 0.0, 1.0])
    if abs(d @ ref) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    u = np.cross(d, ref)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    return [u, v / np.linalg.norm(v)]


def _draw_ordinal_labels(skill: str, spec: SynthSpec, rng: np.random.Generator):
    """Overall label from the class's bins; other categories jittered +-1."""
    bins = CLASS_LABEL_BINS[skill]
    overall = int(bins[rng.integers(0, len(bins))])
    labels = {"Overall": overall} if "Overall" in spec.categories else {}
    for cat in spec.categories:
        if cat == "Overall":
            continue
        delta = int(rng.choice([-1, 0, 0, 0, 0, 0, 0, 0, 1]))
        labels[cat] = int(np.clip(overall + delta, ORDINAL_SCALE[0], ORDINAL_SCALE[1]))
    return labels, overall


def _unit_positions(
    u: float,
    t: np.ndarray,
    dim: int,
    spec: SynthSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """One instrument's positions over one phase: travel + meander + tremor."""
    n = len(t)
    a = rng.uniform(0.2, 0.8, size=dim)
    b = rng.uniform(0.2, 0.8, size=dim)
    tries = 0
    while np.linalg.norm(b - a) < 0.25 and tries < 64:
        b = rng.uniform(0.2, 0.8, size=dim)
        tries += 1
    span = np.linalg.norm(b - a)
    perp = _perp_basis(b - a, rng)

    idle_fraction = 0.05 + 0.30 * (1.0 - u)
    n_front = int(round(idle_fraction * 0.6 * n))
    n_back = int(round(idle_fraction * 0.4 * n))
    n_move = n - n_front - n_back

    tau = np.linspace(0.0, 1.0, n_move)
    s = 3 * tau**2 - 2 * tau**3  # smooth start/stop
    meander_amp = (0.03 + 0.22 * (1.0 - u)) * span
    waves = 2
    phase_shift = rng.uniform(0.0, 2 * np.pi)
    tremor_amp = 0.004 * 3.0 ** (1.0 - u)
    tremor_hz = 2.0 + 3.0 * (1.0 - u)
    t_move = t[n_front : n_front + n_move]

    pos = a[None, :] + s[:, None] * (b - a)[None, :]
    pos = pos + (meander_amp * np.sin(np.pi * waves * s))[:, None] * perp[0][None, :]
    tremor = tremor_amp * np.sin(2 * np.pi * tremor_hz * t_move + phase_shift)
    # taper keeps idle endpoints truly still
    taper = np.sin(np.pi * tau)
    pos = pos + (tremor * taper)[:, None] * perp[-1][None, :]

    front = np.tile(a, (n_front, 1)) + rng.normal(0.0, 1e-5, size=(n_front, dim))
    back = np.tile(pos[-1], (n_back, 1)) + rng.normal(0.0, 1e-5, size=(n_back, dim))
    full = np.vstack([front, pos, back])
    full += rng.normal(0.0, spec.noise_level, size=full.shape)
    return full


def generate_clip(
    skill: str, spec: SynthSpec, rng: np.random.Generator, clip_id: str = "c0000"
) -> tuple[ClipRecord, float]:
    """One clip of the requested skill class; returns (record, latent u)."""
    if skill not in CLASS_NAMES:
        raise SkillGraphError(f"unknown skill class {skill!r}")
    labels, overall = _draw_ordinal_labels(skill, spec, rng)
    u = (overall - 0.5 + rng.uniform(-0.25, 0.25)) / 5.0

    dim = 3 if spec.mode == "3D" else 2
    dt = 1.0 / spec.sample_rate_hz
    n_f = spec.frames_per_phase
    phases = [
        PhaseAnnotation(name, k * n_f, (k + 1) * n_f - 1)
        for k, name in enumerate(spec.phases)
    ]
    tracks = []
    for inst in range(spec.instruments):
        frames = np.arange(len(spec.phases) * n_f, dtype=np.int64)
        t = frames * dt
        chunks = [
            _unit_positions(u, t[k * n_f : (k + 1) * n_f], dim, spec, rng)
            for k in range(len(spec.phases))
        ]
        positions = np.vstack(chunks)
        tracks.append(
            InstrumentTrack(
                clip_id,
                f"tool{inst}",
                frames,
                t,
                positions,
                np.ones(len(frames), dtype=bool),
            )
        )
    record = ClipRecord(
        clip_id=clip_id,
        mode=spec.mode,
        tracks=tracks,
        phases=phases,
        labels=labels,
        skill_class=skill,
        trajectory_path=f"traj/{clip_id}.csv",
    )
    return record, float(u)


def _class_counts(spec: SynthSpec) -> list[int]:
    """Largest-remainder apportionment of n_clips to the three classes."""
    exact = [p * spec.n_clips for p in spec.class_proportions]
    counts = [int(np.floor(e)) for e in exact]
    rem = spec.n_clips - sum(counts)
    order = sorted(range(3), key=lambda i: -(exact[i] - counts[i]))
    for i in order[:rem]:
        counts[i] += 1
    return counts


def generate_dataset(spec: SynthSpec, out_dir: Path | str) -> DatasetManifest:
    """Write a complete dataset (manifest, clip JSONs, trajectory CSVs).

    Deterministic in the spec: regenerating produces byte-identical files.
    Raises if the latent-to-label rank correlation drops below 0.8 for any
    category or if the dataset fails validation.
    """
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    (out / "traj").mkdir(parents=True, exist_ok=True)

    counts = _class_counts(spec)
    assignments = [CLASS_NAMES[c] for c in range(3) for _ in range(counts[c])]
    master = np.random.default_rng(spec.seed)
    master.shuffle(assignments)

    clips = []
    latents = []
    for i, skill in enumerate(assignments):
        cid = f"c{i:04d}"
        rng = np.random.default_rng([spec.seed, i])
        record, u = generate_clip(skill, spec, rng, clip_id=cid)
        clips.append(record)
        latents.append(u)

    for cat in spec.categories:
        rho = spearman(latents, [c.labels[cat] for c in clips])
        if rho < 0.8:
            raise SkillGraphError(
                f"latent-label correlation too weak for {cat!r}: {rho:.3f}"
            )

    ids = [c.clip_id for c in clips]
    shuffled = list(ids)
    master.shuffle(shuffled)
    n_train = int(np.floor(0.7 * len(ids)))
    n_val = int(np.floor(0.15 * len(ids)))
    split = {}
    for k, cid in enumerate(shuffled):
        split[cid] = "train" if k < n_train else ("val" if k < n_train + n_val else "test")

    for c in clips:
        write_trajectories(c.tracks, out / c.trajectory_path)
        write_clip(c, out / "clips" / f"{c.clip_id}.json")
    manifest = DatasetManifest(
        root=out,
        ordinal_scale=ORDINAL_SCALE,
        categories=list(spec.categories),
        clip_paths=[f"clips/{cid}.json" for cid in ids],
        clips=clips,
        split=split,
    )
    write_manifest(manifest, out / "manifest.json")

    report = validate_dataset(manifest)
    if not report.ok:
        raise SkillGraphError(f"generated dataset failed validation:\n{report}")
    return manifest

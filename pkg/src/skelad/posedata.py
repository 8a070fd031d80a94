"""Pose sequences: file ingestion, sliding windows, normalization, and a
seeded synthetic motion generator with controllable anomaly injection.

File formats
------------
Pose file (UTF-8 text, line-delimited)::

    #poses v1 J=<int> C=<int>
    <video_id>,<frame:int>,<actor_id>,<x1>,<y1>,...,<xJ>,<yJ>

Label file::

    #labels v1
    <video_id>,<frame:int>,<0|1>
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .rng import RngStream

# ---------------------------------------------------------------------------
# Skeleton templates
# ---------------------------------------------------------------------------

COCO_JOINTS = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
]

COCO_BONES = [
    (0, 1), (0, 2), (1, 3), (2, 4), (0, 5), (0, 6),
    (5, 6), (5, 11), (6, 12), (11, 12),
    (5, 7), (7, 9), (6, 8), (8, 10),
    (11, 13), (13, 15), (12, 14), (14, 16),
]

COCO_REGIONS = {
    "head": [0, 1, 2, 3, 4],
    "torso": [5, 6, 11, 12],
    "left_arm": [7, 9],
    "right_arm": [8, 10],
    "left_leg": [13, 15],
    "right_leg": [14, 16],
}

COCO_BASE_POSE = np.array([
    [0.50, 0.20], [0.48, 0.18], [0.52, 0.18], [0.46, 0.19], [0.54, 0.19],
    [0.42, 0.32], [0.58, 0.32], [0.38, 0.45], [0.62, 0.45],
    [0.36, 0.57], [0.64, 0.57], [0.44, 0.55], [0.56, 0.55],
    [0.43, 0.72], [0.57, 0.72], [0.42, 0.90], [0.58, 0.90],
])


@dataclass(frozen=True)
class SkeletonTemplate:
    """Joint names, bone list, named joint regions, and a rest pose."""

    joints: tuple[str, ...]
    bones: tuple[tuple[int, int], ...]
    regions: dict[str, tuple[int, ...]]
    base_pose: np.ndarray  # (J, 2)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def region_joints(self, name: str) -> tuple[int, ...]:
        key = name.strip().lower().replace(" ", "_")
        if key not in self.regions:
            raise ConfigError(f"unknown region '{name}'; known: {sorted(self.regions)}")
        return self.regions[key]

    def adjacency(self) -> np.ndarray:
        """Symmetric binary bone adjacency, (J, J)."""
        J = self.n_joints
        A = np.zeros((J, J))
        for a, b in self.bones:
            A[a, b] = 1.0
            A[b, a] = 1.0
        return A


def default_skeleton() -> SkeletonTemplate:
    return SkeletonTemplate(
        joints=tuple(COCO_JOINTS),
        bones=tuple(COCO_BONES),
        regions={k: tuple(v) for k, v in COCO_REGIONS.items()},
        base_pose=COCO_BASE_POSE.copy(),
    )


def chain_skeleton(n_joints: int) -> SkeletonTemplate:
    """Fallback template for non-default joint counts: a simple chain."""
    if n_joints < 2:
        raise ConfigError("chain skeleton needs at least 2 joints")
    bones = tuple((j, j + 1) for j in range(n_joints - 1))
    n_regions = min(6, n_joints)
    regions = {}
    bounds = np.linspace(0, n_joints, n_regions + 1).astype(int)
    for r in range(n_regions):
        regions[f"seg{r}"] = tuple(range(bounds[r], bounds[r + 1]))
    ys = np.linspace(0.1, 0.9, n_joints)
    base = np.stack([np.full(n_joints, 0.5), ys], axis=1)
    return SkeletonTemplate(
        joints=tuple(f"j{j}" for j in range(n_joints)),
        bones=bones,
        regions=regions,
        base_pose=base,
    )


def skeleton_for(n_joints: int) -> SkeletonTemplate:
    return default_skeleton() if n_joints == 17 else chain_skeleton(n_joints)


# ---------------------------------------------------------------------------
# Core data types
# ---------------------------------------------------------------------------


@dataclass
class PoseTrack:
    """One actor's contiguous pose sequence within one video."""

    video_id: str
    actor_id: str
    start_frame: int
    coords: np.ndarray  # (n_frames, J, C)

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def frames(self) -> range:
        return range(self.start_frame, self.start_frame + self.n_frames)


@dataclass
class Window:
    """An L-frame observation split at l into past and future blocks."""

    past: np.ndarray    # (l, J, C)
    future: np.ndarray  # (L - l, J, C)
    video_id: str
    actor_id: str
    start_frame: int

    @property
    def L(self) -> int:
        return self.past.shape[0] + self.future.shape[0]

    @property
    def l(self) -> int:
        return self.past.shape[0]


@dataclass
class NormalizeRecord:
    """Inverse transform for one normalized window."""

    policy: str
    center: np.ndarray  # (J, C)
    scale: float


# Label sets are plain dicts: (video_id, frame) -> bool.
LabelSet = dict[tuple[str, int], bool]


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def write_pose_file(tracks: list[PoseTrack], path, n_joints: int, n_channels: int = 2) -> None:
    path = Path(path)
    lines = [f"#poses v1 J={n_joints} C={n_channels}"]
    records = []
    for tr in tracks:
        for i, f in enumerate(tr.frames):
            records.append((tr.video_id, f, tr.actor_id, tr.coords[i]))
    records.sort(key=lambda r: (r[0], r[1], r[2]))
    for video, frame, actor, coords in records:
        vals = ",".join(repr(float(v)) for v in coords.reshape(-1))
        lines.append(f"{video},{frame},{actor},{vals}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_label_file(labels: LabelSet, path) -> None:
    path = Path(path)
    lines = ["#labels v1"]
    for (video, frame), flag in sorted(labels.items()):
        lines.append(f"{video},{frame},{1 if flag else 0}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_label_file(path) -> LabelSet:
    path = Path(path)
    labels: LabelSet = {}
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "#labels v1":
            raise ParseError(f"{path}:1: bad label header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            video, frame_s, flag_s = parts
            try:
                frame = int(frame_s)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad frame {frame_s!r}") from exc
            if flag_s not in ("0", "1"):
                raise ParseError(f"{path}:{lineno}: label must be 0 or 1, got {flag_s!r}")
            key = (video, frame)
            if key in labels:
                raise DataError(f"{path}:{lineno}: duplicate label for {key}")
            labels[key] = flag_s == "1"
    return labels


def load_pose_dataset(path, with_labels: bool = False) -> tuple[list[PoseTrack], LabelSet | None]:
    """Parse a pose file into per-(video, actor) tracks.

    With ``with_labels``, the sibling file with suffix ``.labels`` is read
    as the ground-truth label set.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"pose file not found: {path}")

    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if (len(parts) != 4 or parts[0] != "#poses" or parts[1] != "v1"
                or not parts[2].startswith("J=") or not parts[3].startswith("C=")):
            raise ParseError(f"{path}:1: bad pose header {header!r}")
        try:
            J = int(parts[2][2:])
            C = int(parts[3][2:])
        except ValueError as exc:
            raise ParseError(f"{path}:1: bad J/C in header") from exc

        rows: dict[tuple[str, str], list[tuple[int, np.ndarray]]] = {}
        seen: set[tuple[str, int, str]] = set()
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) < 3:
                raise ParseError(f"{path}:{lineno}: expected at least 3 fields")
            video, frame_s, actor = fields[0], fields[1], fields[2]
            try:
                frame = int(frame_s)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad frame index {frame_s!r}") from exc
            coord_fields = fields[3:]
            if len(coord_fields) != J * C:
                raise DataError(
                    f"{path}:{lineno}: expected {J * C} coordinates (J={J}, C={C}), "
                    f"got {len(coord_fields)}")
            try:
                coords = np.array([float(v) for v in coord_fields]).reshape(J, C)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad coordinate value") from exc
            if not np.all(np.isfinite(coords)):
                raise DataError(f"{path}:{lineno}: non-finite coordinate")
            key = (video, frame, actor)
            if key in seen:
                raise DataError(f"{path}:{lineno}: duplicate record for {key}")
            seen.add(key)
            rows.setdefault((video, actor), []).append((frame, coords))

    tracks: list[PoseTrack] = []
    for (video, actor), items in sorted(rows.items()):
        items.sort(key=lambda it: it[0])
        frames = [f for f, _ in items]
        for a, b in zip(frames, frames[1:]):
            if b != a + 1:
                raise DataError(
                    f"track ({video!r}, {actor!r}) has non-contiguous frames {a} -> {b}")
        coords = np.stack([c for _, c in items], axis=0)
        tracks.append(PoseTrack(video, actor, frames[0], coords))

    labels: LabelSet | None = None
    if with_labels:
        labels = load_label_file(path.with_suffix(".labels"))
    return tracks, labels


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


def make_windows(track: PoseTrack, L: int, l: int, stride: int = 1) -> list[Window]:
    if not (0 < l < L):
        raise ConfigError(f"need 0 < l < L, got l={l}, L={L}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    n = track.n_frames
    if n < L:
        return []
    windows = []
    for start in range(0, n - L + 1, stride):
        block = track.coords[start : start + L]
        windows.append(Window(
            past=block[:l].copy(),
            future=block[l:].copy(),
            video_id=track.video_id,
            actor_id=track.actor_id,
            start_frame=track.start_frame + start,
        ))
    return windows


def normalize_window(w: Window, policy: str = "center-scale") -> tuple[Window, NormalizeRecord]:
    """Center by the past-frames mean pose, scale by the past std (floor 1e-6)."""
    if policy == "none":
        rec = NormalizeRecord("none", np.zeros_like(w.past[0]), 1.0)
        return Window(w.past.copy(), w.future.copy(), w.video_id, w.actor_id, w.start_frame), rec
    if policy != "center-scale":
        raise ConfigError(f"unknown normalization policy {policy!r}")
    center = w.past.mean(axis=0)
    centered_past = w.past - center
    scale = float(max(centered_past.std(), 1e-6))
    rec = NormalizeRecord("center-scale", center, scale)
    out = Window(
        past=centered_past / scale,
        future=(w.future - center) / scale,
        video_id=w.video_id,
        actor_id=w.actor_id,
        start_frame=w.start_frame,
    )
    return out, rec


def denormalize_window(w: Window, rec: NormalizeRecord) -> Window:
    return Window(
        past=w.past * rec.scale + rec.center,
        future=w.future * rec.scale + rec.center,
        video_id=w.video_id,
        actor_id=w.actor_id,
        start_frame=w.start_frame,
    )


# ---------------------------------------------------------------------------
# Synthetic motion
# ---------------------------------------------------------------------------

ANOMALY_KINDS = ("region-freeze", "region-jitter", "global-speedup")

# Per-region sinusoid amplitude scales for the default motion model; limbs
# swing, the torso barely translates.
REGION_AMPLITUDE = {
    "head": 0.03, "torso": 0.02,
    "left_arm": 0.09, "right_arm": 0.09,
    "left_leg": 0.08, "right_leg": 0.08,
}
DEFAULT_AMPLITUDE = 0.06

# Gait-style phase offsets: opposite arms swing in antiphase, each leg moves
# with the contralateral arm. Joints within an actor share one stride rate,
# so the motion stays on a low-dimensional, predictable manifold.
REGION_PHASE = {
    "head": math.pi / 2, "torso": math.pi / 2,
    "left_arm": 0.0, "right_arm": math.pi,
    "left_leg": math.pi, "right_leg": 0.0,
}


@dataclass
class AnomalySpan:
    kind: str
    region: str
    start: int
    stop: int  # exclusive

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ConfigError(f"unknown anomaly kind {self.kind!r}; known: {ANOMALY_KINDS}")


@dataclass
class SyntheticSpec:
    """Recipe for one synthetic video."""

    video_id: str = "v0"
    n_frames: int = 200
    actors: int = 1
    n_joints: int = 17
    freq: float = 0.08        # shared stride rate, cycles/frame
    amp: float = 1.0          # global multiplier on region amplitudes
    drift: float = 0.0005     # horizontal translation per frame
    noise_scale: float = 0.01
    jitter_factor: float = 5.0
    region_phase_jitter: float = 0.0  # radians of per-region phase spread
    anomalies: list[AnomalySpan] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        template = skeleton_for(self.n_joints)
        for a in self.anomalies:
            template.region_joints(a.region)  # raises ConfigError on bad names
            if not (0 <= a.start < a.stop <= self.n_frames):
                raise DataError(
                    f"anomaly span [{a.start}, {a.stop}) outside track of {self.n_frames} frames")


def _joint_motion(template: SkeletonTemplate, spec: SyntheticSpec, rng: RngStream):
    """Per-joint sinusoid parameters, deterministic in the spec seed.

    All joints of an actor share one stride rate; per-joint phases follow
    the gait offsets of their region plus a small template-fixed jitter.
    Amplitude texture across joints is a template constant; per-actor
    variation enters only through region-level scale factors, so an
    actor's whole motion state stays low-dimensional and predictable.
    """
    J = template.n_joints
    region_of = {}
    for idx, (name, joints) in enumerate(template.regions.items()):
        for j in joints:
            region_of[j] = (name, idx)
    amp_scale = np.empty(J)
    base_phase = np.empty(J)
    region_idx = np.empty(J, dtype=int)
    for j in range(J):
        name, idx = region_of.get(j, ("", 0))
        amp_scale[j] = REGION_AMPLITUDE.get(name, DEFAULT_AMPLITUDE)
        base_phase[j] = REGION_PHASE.get(name, (idx % 2) * math.pi)
        region_idx[j] = idx

    texture_rng = RngStream(773100 + J)  # template-level constants
    texture = 1.0 + 0.15 * texture_rng.normal((J, 2))
    phase_jitter = 0.2 * texture_rng.normal((J,))

    rate = spec.freq * (0.8 + 0.4 * rng.uniform(()))
    freqs = np.full(J, rate)
    n_regions = len(template.regions)
    region_gain = 0.8 + 0.4 * rng.uniform((n_regions,))
    amps = spec.amp * amp_scale[:, None] * region_gain[region_idx, None] * texture
    offsets = spec.region_phase_jitter * (rng.uniform((n_regions,)) - 0.5)
    phases = base_phase + offsets[region_idx] + phase_jitter
    return freqs, amps, phases


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[PoseTrack], LabelSet]:
    """Sinusoidal multi-joint motion plus Gaussian noise, with anomaly spans
    mutating only the named region (freeze / jitter) or the global tempo.

    Deterministic: identical spec (seed included) gives bit-identical output,
    and non-anomalous joints match the anomaly-free generation draw for draw.
    """
    template = skeleton_for(spec.n_joints)
    J = template.n_joints
    T = spec.n_frames
    root = RngStream(spec.seed)

    speedup_mask = np.zeros(T, dtype=bool)
    for a in spec.anomalies:
        if a.kind == "global-speedup":
            speedup_mask[a.start : a.stop] = True

    tracks: list[PoseTrack] = []
    for actor_idx in range(spec.actors):
        a_rng = root.split(actor_idx)
        freqs, amps, phases = _joint_motion(template, spec, a_rng.split(0))
        actor_phase = 2.0 * math.pi * a_rng.split(1).uniform(())
        noise = spec.noise_scale * a_rng.split(2).normal((T, J, 2))

        # Phase accumulates per frame so global speedup doubles frequency
        # inside its spans without a positional jump at the boundaries.
        rate = np.where(speedup_mask, 2.0, 1.0)
        steps = np.concatenate([[0.0], rate[:-1]])
        progress = np.cumsum(steps)  # (T,)
        theta = 2.0 * math.pi * freqs[None, :] * progress[:, None] + phases[None, :] + actor_phase

        base = template.base_pose.copy()
        base[:, 0] += 0.22 * (actor_idx - (spec.actors - 1) / 2.0)
        coords = base[None, :, :] + amps[None, :, :] * np.sin(theta)[:, :, None]
        coords[:, :, 0] += spec.drift * np.arange(T)[:, None]

        # Jitter multiplies the same noise draws, preserving paired-seed
        # equality outside the anomalous region.
        for a in spec.anomalies:
            if a.kind == "region-jitter":
                joints = list(template.region_joints(a.region))
                noise[a.start : a.stop, joints, :] *= spec.jitter_factor
        coords = coords + noise
        for a in spec.anomalies:
            if a.kind == "region-freeze":
                joints = list(template.region_joints(a.region))
                coords[a.start : a.stop, joints, :] = coords[a.start, joints, :]

        tracks.append(PoseTrack(spec.video_id, f"a{actor_idx}", 0, coords))

    labels: LabelSet = {(spec.video_id, f): False for f in range(T)}
    for a in spec.anomalies:
        for f in range(a.start, a.stop):
            labels[(spec.video_id, f)] = True
    return tracks, labels

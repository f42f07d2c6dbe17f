"""Keypoint sequences: layout, JSONL ingestion, preprocessing and splits.

The JSON Lines format holds one sequence per line::

    {"source_id": str, "identity": str, "fps": number,
     "layout": "coco-wholebody-133",
     "frames": [[[x, y(, conf)] x 133] x T]}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LAYOUT_NAME = "coco-wholebody-133"


@dataclass(frozen=True)
class JointLayout:
    """Ordered joint segments. Indices follow the COCO-WholeBody convention."""

    name: str = LAYOUT_NAME
    segments: tuple[tuple[str, int], ...] = (
        ("body", 17),
        ("feet", 6),
        ("face", 68),
        ("left_hand", 21),
        ("right_hand", 21),
    )

    @property
    def n_joints(self) -> int:
        return sum(n for _, n in self.segments)

    def indices(self, segment: str) -> range:
        start = 0
        for name, n in self.segments:
            if name == segment:
                return range(start, start + n)
            start += n
        raise KeyError(segment)


WHOLEBODY = JointLayout()
N_JOINTS = WHOLEBODY.n_joints


class LayoutError(ValueError):
    pass


@dataclass
class KeypointSequence:
    frames: np.ndarray  # (T, V, C), C = 2 or 3 (x, y[, confidence])
    fps: float
    identity: str
    source_id: str
    layout: str = LAYOUT_NAME

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        validate_frames(self.frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def coords(self) -> np.ndarray:
        return self.frames[..., :2]


def validate_frames(frames: np.ndarray, n_joints: int = N_JOINTS) -> None:
    if frames.ndim != 3:
        raise LayoutError(f"frames must be (T, V, C), got shape {frames.shape}")
    t, v, c = frames.shape
    if t < 1:
        raise LayoutError("sequence has no frames")
    if v != n_joints:
        raise LayoutError(f"expected {n_joints} joints per frame, got {v}")
    if c not in (2, 3):
        raise LayoutError(f"expected 2 or 3 channels, got {c}")
    if not np.isfinite(frames).all():
        raise ValueError("non-finite coordinate in frames")
    if c == 3:
        conf = frames[..., 2]
        if conf.min() < 0 or conf.max() > 1:
            raise ValueError("confidence outside [0, 1]")


@dataclass
class Dataset:
    sequences: list[KeypointSequence] = field(default_factory=list)
    label_index: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_sequences(cls, sequences: Iterable[KeypointSequence]) -> "Dataset":
        seqs = list(sequences)
        ids = sorted({s.identity for s in seqs})
        return cls(seqs, {name: i for i, name in enumerate(ids)})

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_classes(self) -> int:
        return len(self.label_index)

    @property
    def labels(self) -> np.ndarray:
        return np.array([self.label_index[s.identity] for s in self.sequences], dtype=np.int64)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset([self.sequences[i] for i in indices], dict(self.label_index))


# -- JSONL -----------------------------------------------------------------
def _record_to_sequence(rec: dict, lineno: int) -> KeypointSequence:
    for key in ("source_id", "identity", "fps", "frames"):
        if key not in rec:
            raise ValueError(f"line {lineno}: missing field {key!r}")
    layout = rec.get("layout", LAYOUT_NAME)
    if layout != LAYOUT_NAME:
        raise LayoutError(f"line {lineno}: unsupported layout {layout!r}")
    frames = rec["frames"]
    for t, frame in enumerate(frames):
        if len(frame) != N_JOINTS:
            raise LayoutError(f"line {lineno}: frame {t} has {len(frame)} joints, expected {N_JOINTS}")
    try:
        arr = np.asarray(frames, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"line {lineno}: ragged or non-numeric frames ({exc})") from None
    try:
        return KeypointSequence(arr, float(rec["fps"]), str(rec["identity"]), str(rec["source_id"]), layout)
    except ValueError as exc:
        raise type(exc)(f"line {lineno}: {exc}") from None


def load_jsonl(path: str | Path) -> Dataset:
    """Read and validate a JSONL keypoint file."""
    seqs: list[KeypointSequence] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            seq = _record_to_sequence(rec, lineno)
            if seq.source_id in seen:
                raise ValueError(f"line {lineno}: duplicate source_id {seq.source_id!r}")
            seen.add(seq.source_id)
            seqs.append(seq)
    return Dataset.from_sequences(seqs)


def sequence_to_record(seq: KeypointSequence) -> dict:
    return {
        "source_id": seq.source_id,
        "identity": seq.identity,
        "fps": seq.fps,
        "layout": seq.layout,
        "frames": seq.frames.tolist(),
    }


def save_jsonl(dataset: Dataset | Iterable[KeypointSequence], path: str | Path) -> None:
    # repr-based float output round-trips float64 exactly
    seqs = dataset.sequences if isinstance(dataset, Dataset) else dataset
    with open(path, "w", encoding="utf-8") as fh:
        for seq in seqs:
            fh.write(json.dumps(sequence_to_record(seq), separators=(",", ":")))
            fh.write("\n")


# -- preprocessing ---------------------------------------------------------
def normalize_sequence(seq: KeypointSequence, conf_threshold: float = 0.0) -> KeypointSequence:
    """Center the sequence bounding box at the origin and scale its longer side to 2.

    With a confidence channel, only joints whose confidence exceeds
    ``conf_threshold`` define the box.
    """
    xy = seq.frames[..., :2]
    if seq.frames.shape[-1] == 3:
        mask = seq.frames[..., 2] > conf_threshold
        if not mask.any(axis=1).all():
            raise ValueError(f"{seq.source_id}: a frame has no joint above confidence {conf_threshold}")
        pts = xy[mask]
    else:
        pts = xy.reshape(-1, 2)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    side = float((hi - lo).max())
    if side <= 0:
        raise ValueError(f"{seq.source_id}: degenerate bounding box (all joints coincide)")
    center = (lo + hi) / 2
    out = seq.frames.copy()
    out[..., :2] = (xy - center) * (2.0 / side)
    return replace(seq, frames=out)


def resample_to_length(seq: KeypointSequence, stride: int = 2, target_T: int = 30) -> KeypointSequence:
    """Keep every ``stride``-th frame, then center-crop or last-frame-pad to ``target_T``."""
    kept = seq.frames[::stride]
    n = kept.shape[0]
    if n > target_T:
        start = (n - target_T) // 2
        kept = kept[start:start + target_T]
    elif n < target_T:
        pad = np.repeat(kept[-1:], target_T - n, axis=0)
        kept = np.concatenate([kept, pad], axis=0)
    return replace(seq, frames=kept.copy(), fps=seq.fps / stride)


def velocity(frames: np.ndarray) -> np.ndarray:
    """First difference along the frame axis: ``out[t] = frames[t + 1] - frames[t]``."""
    frames = np.asarray(frames)
    if frames.shape[0] < 2:
        raise ValueError("velocity needs at least 2 frames")
    return frames[1:] - frames[:-1]


def subsample_stride(frames: np.ndarray, k: int) -> np.ndarray:
    """Frames at indices 0, k, 2k, ...; length ``ceil(T / k)``."""
    if k < 1:
        raise ValueError(f"stride must be >= 1, got {k}")
    return np.asarray(frames)[::k]


# -- splitting -------------------------------------------------------------
@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    unit: str = "utterance"


def n_held_out(n: int, train_fraction: float = 0.8) -> int:
    """Held-out count for an identity with ``n`` sequences: floor of the test share, at least 1."""
    return max(1, math.floor(round(n * (1.0 - train_fraction), 9)))


def split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    """Per-identity stratified split, deterministic in ``spec.seed``."""
    by_id: dict[str, list[int]] = {}
    for i, s in enumerate(dataset.sequences):
        by_id.setdefault(s.identity, []).append(i)
    rng = np.random.default_rng(spec.seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for ident in sorted(by_id):
        idx = by_id[ident]
        if len(idx) < 2:
            raise ValueError(f"identity {ident!r} has only {len(idx)} sequence; need at least 2 to split")
        perm = rng.permutation(len(idx))
        n_test = n_held_out(len(idx), spec.train_fraction)
        test_idx.extend(idx[j] for j in sorted(perm[:n_test]))
        train_idx.extend(idx[j] for j in sorted(perm[n_test:]))
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(test_idx))


# -- model input -----------------------------------------------------------
@dataclass(frozen=True)
class PrepConfig:
    normalize: bool = True
    stride: int = 2
    target_T: int = 30
    include_confidence: bool = False


def to_arrays(dataset: Dataset, prep: PrepConfig = PrepConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Stack preprocessed sequences into ``X (N, T, V, C_in)`` and labels ``y (N,)``."""
    xs = []
    for seq in dataset.sequences:
        if prep.normalize:
            seq = normalize_sequence(seq)
        seq = resample_to_length(seq, prep.stride, prep.target_T)
        f = seq.frames
        if prep.include_confidence:
            if f.shape[-1] != 3:
                raise ValueError(f"{seq.source_id}: no confidence channel to include")
        else:
            f = f[..., :2]
        xs.append(f)
    if not xs:
        c = 3 if prep.include_confidence else 2
        return np.zeros((0, prep.target_T, N_JOINTS, c)), np.zeros(0, dtype=np.int64)
    return np.stack(xs), dataset.labels

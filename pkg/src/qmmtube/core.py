"""Geometry primitives and record types shared by the linkers, scorers and metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class NoEvaluableFrames(ValueError):
    """Raised when a 3D IoU would average over an empty frame set."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates, ``x1 < x2`` and ``y1 < y2``."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"non-finite box coordinate {name}={v}")
            object.__setattr__(self, name, v)
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {self.as_list()}")

    @classmethod
    def from_seq(cls, xs: Sequence[float]) -> "BBox":
        if len(xs) != 4:
            raise ValueError(f"box needs 4 coordinates, got {len(xs)}")
        return cls(*xs)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))


def _frozen_array(x, ndim=1) -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DetectionRecord:
    """One detector query at one frame.

    ``class_scores`` are the object-class probabilities (person plus the
    other classes); ``query`` is the raw query vector fed to the encoder.
    ``gt_person``/``gt_action`` are optional supervision labels.
    """

    frame: int
    box: BBox
    class_scores: np.ndarray
    query: np.ndarray
    gt_person: int | None = None
    gt_action: int | None = None

    def __post_init__(self):
        if int(self.frame) != self.frame or self.frame < 0:
            raise ValueError(f"frame must be a non-negative integer, got {self.frame!r}")
        object.__setattr__(self, "frame", int(self.frame))
        scores = _frozen_array(self.class_scores)
        if np.any(scores < 0.0) or np.any(scores > 1.0):
            raise ValueError("class scores must lie in [0, 1]")
        object.__setattr__(self, "class_scores", scores)
        object.__setattr__(self, "query", _frozen_array(self.query))

    def person_score(self, person_class_index: int) -> float:
        return float(self.class_scores[person_class_index])


@dataclass(frozen=True)
class GroundTruthTube:
    """Annotated person: ``entries[frame] = (box, action)``.

    The action id equal to the number of action classes means "no action".
    """

    person_id: int
    entries: Mapping[int, tuple[BBox, int]] = field(default_factory=dict)

    def __post_init__(self):
        ordered = dict(sorted((int(t), (b, int(a))) for t, (b, a) in self.entries.items()))
        object.__setattr__(self, "entries", ordered)

    @property
    def frames(self) -> list[int]:
        return list(self.entries)

    @property
    def boxes(self) -> dict[int, BBox]:
        return {t: b for t, (b, _) in self.entries.items()}

    def action_at(self, frame: int) -> int | None:
        e = self.entries.get(frame)
        return None if e is None else e[1]

    def boxes_with_action(self, action: int) -> dict[int, BBox]:
        return {t: b for t, (b, a) in self.entries.items() if a == action}


@dataclass(frozen=True)
class Tube:
    """Predicted action tube: one person, one action class, a score and per-frame boxes."""

    person_id: int
    action: int
    score: float
    boxes: Mapping[int, BBox]

    def __post_init__(self):
        if not self.boxes:
            raise ValueError("a tube needs at least one box")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"tube score {self.score} outside [0, 1]")
        object.__setattr__(self, "boxes", dict(sorted(self.boxes.items())))


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    if not a or not b:
        return np.zeros((len(a), len(b)))
    A = np.array([x.as_list() for x in a])[:, None, :]
    B = np.array([x.as_list() for x in b])[None, :, :]
    iw = np.clip(np.minimum(A[..., 2], B[..., 2]) - np.maximum(A[..., 0], B[..., 0]), 0, None)
    ih = np.clip(np.minimum(A[..., 3], B[..., 3]) - np.maximum(A[..., 1], B[..., 1]), 0, None)
    inter = iw * ih
    area_a = (A[..., 2] - A[..., 0]) * (A[..., 3] - A[..., 1])
    area_b = (B[..., 2] - B[..., 0]) * (B[..., 3] - B[..., 1])
    return inter / (area_a + area_b - inter)


def tube_iou_3d(a: Mapping[int, BBox], b: Mapping[int, BBox], frame_set: str = "union") -> float:
    """Mean per-frame IoU between two frame->box maps.

    ``frame_set="union"`` averages over every frame present in either tube;
    ``"restrict_to_first"`` averages only over the frames of ``a`` (pass the
    ground truth first). A frame missing from one side contributes 0.
    """
    if not a or not b:
        raise ValueError("tube_iou_3d needs two non-empty tubes")
    if frame_set == "union":
        frames = set(a) | set(b)
    elif frame_set == "restrict_to_first":
        frames = set(a)
    else:
        raise ValueError(f"unknown frame_set {frame_set!r}")
    if not frames:
        raise NoEvaluableFrames("no evaluable frames")
    total = 0.0
    for t in sorted(frames):
        if t in a and t in b:
            total += iou(a[t], b[t])
    return total / len(frames)


def interpolate_box(a: BBox, b: BBox, alpha: float) -> BBox:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 0.0:
        return a
    if alpha == 1.0:
        return b
    return BBox(*((1.0 - alpha) * p + alpha * q for p, q in zip(a.as_list(), b.as_list())))


def interpolate_gaps(boxes: Mapping[int, BBox]) -> dict[int, BBox]:
    """Fill the missing frames between known boxes by linear interpolation."""
    frames = sorted(boxes)
    out = dict(boxes)
    for t0, t1 in zip(frames, frames[1:]):
        for t in range(t0 + 1, t1):
            out[t] = interpolate_box(boxes[t0], boxes[t1], (t - t0) / (t1 - t0))
    return dict(sorted(out.items()))


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named stage (``"sim"``, ``"init"``, ``"train"``...) of one seed."""
    key = int.from_bytes(name.encode(), "little") % (2**63)
    return np.random.default_rng([int(seed), key])

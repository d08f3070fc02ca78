"""Per-frame action scores along a track turned into scored action tubes.

For a track with per-frame scores over ``C+1`` classes (the last being
"no action"):

* the class set is every class that reaches the per-frame top-k somewhere;
* the time set of class ``c`` is the frames where ``c`` is in the top-k;
* the tube score of ``c`` is the mean score of ``c`` over its time set, or 0
  when the time set has ``tau_k`` frames or fewer;
* the tube boxes of ``c`` are the track boxes on its time set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BBox, GroundTruthTube, Tube, interpolate_gaps
from .encoder import assign_person_ids
from .linking import TrackList


@dataclass(frozen=True, eq=False)
class ActionScoreSeq:
    """``scores[i]`` is the ``C+1`` score vector at ``frames[i]``."""

    frames: tuple[int, ...]
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != len(self.frames):
            raise ValueError(f"scores shape {s.shape} does not match {len(self.frames)} frames")
        if s.size and (s.min() < 0.0 or s.max() > 1.0):
            raise ValueError("action scores must lie in [0, 1]")
        object.__setattr__(self, "frames", tuple(int(f) for f in self.frames))
        object.__setattr__(self, "scores", s)

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class ScoringConfig:
    """``k``: top-k size; ``tau_k``: a class needs more than this many top-k frames.

    ``no_action``: class index never emitted as a tube (``None`` emits all).
    ``drop_below_no_action``: also drop frames where the class scores below
    "no action". ``fill_gaps``: interpolate boxes over gaps in emitted tubes.
    """

    k: int = 1
    tau_k: int = 8
    no_action: int | None = None
    drop_below_no_action: bool = False
    fill_gaps: bool = False

    def __post_init__(self):
        if self.k < 1 or self.tau_k < 0:
            raise ValueError("k must be >= 1 and tau_k >= 0")
        if self.drop_below_no_action and self.no_action is None:
            raise ValueError("drop_below_no_action needs the no_action class index")


def _topk_mask(scores: np.ndarray, k: int) -> np.ndarray:
    """Boolean ``(n_frames, C+1)`` mask of per-frame top-k classes; lower index wins ties."""
    if k > scores.shape[1]:
        raise ValueError(f"k={k} exceeds the number of classes {scores.shape[1]}")
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    mask = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def topk_class_set(seq: ActionScoreSeq, k: int) -> set[int]:
    if len(seq) == 0:
        raise ValueError("empty score sequence")
    return {int(c) for c in np.flatnonzero(_topk_mask(seq.scores, k).any(axis=0))}


def class_time_set(seq: ActionScoreSeq, c: int, k: int, no_action: int | None = None) -> set[int]:
    """Frames where class ``c`` is in the top-k.

    With ``no_action`` given, frames where ``c`` scores below that class are
    excluded as well.
    """
    rows = _topk_mask(seq.scores, k)[:, c]
    if no_action is not None:
        rows &= seq.scores[:, c] >= seq.scores[:, no_action]
    return {seq.frames[i] for i in np.flatnonzero(rows)}


def tube_score(seq: ActionScoreSeq, c: int, k: int, tau_k: int, no_action: int | None = None) -> float:
    frames = class_time_set(seq, c, k, no_action)
    if len(frames) <= tau_k:
        return 0.0
    rows = [i for i, f in enumerate(seq.frames) if f in frames]
    return float(np.mean(seq.scores[rows, c]))


def tube_boxes(track: TrackList, frames) -> dict[int, BBox]:
    boxes = track.boxes
    missing = set(frames) - set(boxes)
    if missing:
        raise KeyError(f"frames {sorted(missing)} are not in track {track.id}")
    return {t: boxes[t] for t in sorted(frames)}


def build_tubes(track: TrackList, seq: ActionScoreSeq, cfg: ScoringConfig) -> list[Tube]:
    if tuple(track.frames) != seq.frames:
        raise ValueError(f"score sequence is not aligned with track {track.id}")
    gate = cfg.no_action if cfg.drop_below_no_action else None
    tubes = []
    for c in sorted(topk_class_set(seq, cfg.k)):
        if c == cfg.no_action:
            continue
        score = tube_score(seq, c, cfg.k, cfg.tau_k, gate)
        if score <= 0.0:
            continue
        boxes = tube_boxes(track, class_time_set(seq, c, cfg.k, gate))
        if cfg.fill_gaps:
            boxes = interpolate_gaps(boxes)
        tubes.append(Tube(person_id=track.id, action=c, score=score, boxes=boxes))
    return tubes


def assign_action_labels(track: TrackList, gts: Sequence[GroundTruthTube], tau_iou: float,
                         no_action: int) -> list[int]:
    """Per-frame action label of a track: the matched GT person's action, else ``no_action``."""
    by_id = {g.person_id: g for g in gts}
    labels = []
    for e in track.entries:
        (pid,) = assign_person_ids([e.record], gts, tau_iou)
        action = by_id[pid].action_at(e.frame) if pid >= 0 else None
        labels.append(no_action if action is None else action)
    return labels


def action_ce_loss(seq: ActionScoreSeq, labels: Sequence[int], eps: float = 1e-12) -> float:
    """Summed cross-entropy; each score row is renormalized and clamped at ``eps``."""
    if len(labels) != len(seq):
        raise ValueError("labels and score sequence differ in length")
    if len(seq) == 0:
        return 0.0
    s = seq.scores
    totals = s.sum(axis=1, keepdims=True)
    p = np.divide(s, totals, out=np.full_like(s, 1.0 / s.shape[1]), where=totals > 0)
    picked = p[np.arange(len(labels)), np.asarray(labels)]
    return float(-np.sum(np.log(np.maximum(picked, eps))))


def oracle_scorer(track: TrackList, gts: Sequence[GroundTruthTube], n_classes: int, sigma: float = 0.0,
                  seed: int = 0, tau_iou: float = 0.2, peak: float = 4.0, temperature: float = 1.0,
                  one_hot: bool = False) -> ActionScoreSeq:
    """Stand-in action head: scores peaked at the ground-truth label of each frame.

    ``n_classes`` counts the real action classes; "no action" is index
    ``n_classes``. Logits are ``peak`` on the label plus Gaussian noise of
    scale ``sigma``, then softmax at ``temperature`` (or one-hot of the
    arg-max with ``one_hot``).
    """
    labels = assign_action_labels(track, gts, tau_iou, no_action=n_classes)
    rng = np.random.default_rng([int(seed), int(track.id)])
    logits = np.zeros((len(labels), n_classes + 1))
    logits[np.arange(len(labels)), labels] = peak
    logits += sigma * rng.standard_normal(logits.shape)
    if one_hot:
        scores = np.zeros_like(logits)
        scores[np.arange(len(labels)), np.argmax(logits, axis=1)] = 1.0
    else:
        z = logits / temperature
        z -= z.max(axis=1, keepdims=True)
        scores = np.exp(z)
        scores /= scores.sum(axis=1, keepdims=True)
    return ActionScoreSeq(frames=tuple(track.frames), scores=scores)

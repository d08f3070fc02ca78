"""Tube recall with motion-category breakdown, video-mAP, frame-mAP and linker comparison.

Two matchers are used on purpose. Recall lets one prediction cover several
ground-truth tubes and measures 3D IoU only on the ground-truth frames.
Video-mAP matches one-to-one by descending score with 3D IoU over the
union of frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import BBox, GroundTruthTube, Tube, iou, tube_iou_3d
from .encoder import EncoderParams
from .linking import LinkConfig, iou_link, qmm_link
from .sim import MOTION_THRESHOLDS, Scenario, motion_category

CATEGORIES = ("L", "M", "S")


def _boxes(pred) -> Mapping[int, BBox]:
    return pred.boxes


@dataclass
class RecallReport:
    """Recall of one set of predictions at one 3D-IoU threshold.

    ``counts[cat] = (matched, total)`` for ``"All"`` and each motion category.
    """

    linker: str
    theta: float
    counts: dict[str, tuple[int, int]]
    thresholds: tuple[float, float] = MOTION_THRESHOLDS

    def recall(self, category: str = "All") -> float | None:
        matched, total = self.counts.get(category, (0, 0))
        return matched / total if total else None

    def to_dict(self) -> dict:
        return {
            "linker": self.linker,
            "theta": self.theta,
            "motion_thresholds": list(self.thresholds),
            "counts": {k: list(v) for k, v in self.counts.items()},
            "recall": {k: self.recall(k) for k in self.counts},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RecallReport":
        return cls(linker=obj["linker"], theta=float(obj["theta"]),
                   counts={k: tuple(v) for k, v in obj["counts"].items()},
                   thresholds=tuple(obj.get("motion_thresholds", MOTION_THRESHOLDS)))


@dataclass
class APReport:
    """Per-class AP and their mean over classes that have ground truth."""

    metric: str
    theta: float
    ap: dict[int, float] = field(default_factory=dict)
    n_gt: dict[int, int] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.ap.values()))) if self.ap else 0.0

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "theta": self.theta,
            "mean_ap": self.mean,
            "ap": {str(c): v for c, v in sorted(self.ap.items())},
            "n_gt": {str(c): v for c, v in sorted(self.n_gt.items())},
        }


def _category(gt: GroundTruthTube, thresholds) -> str | None:
    return motion_category(gt, thresholds) if len(gt.entries) >= 2 else None


def tube_recall(gts: Sequence[GroundTruthTube], preds: Iterable, theta: float, linker: str = "pred",
                thresholds: Sequence[float] = MOTION_THRESHOLDS) -> RecallReport:
    """Fraction of GT tubes covered by some prediction with GT-frame 3D IoU >= theta.

    ``preds`` may hold track lists or tubes (anything with a ``boxes`` map).
    """
    pred_boxes = [b for b in (_boxes(p) for p in preds) if b]
    counts = {k: [0, 0] for k in ("All",) + CATEGORIES}
    for g in gts:
        gb = g.boxes
        hit = any(tube_iou_3d(gb, pb, "restrict_to_first") >= theta for pb in pred_boxes)
        cats = ["All"]
        cat = _category(g, thresholds)
        if cat is not None:
            cats.append(cat)
        for c in cats:
            counts[c][0] += hit
            counts[c][1] += 1
    return RecallReport(linker=linker, theta=float(theta),
                        counts={k: (int(m), int(n)) for k, (m, n) in counts.items()},
                        thresholds=tuple(thresholds))


def average_precision(scores: Sequence[float], matched: Sequence[bool], n_gt: int) -> float | None:
    """All-point interpolated AP of score-ranked predictions; ``None`` when ``n_gt == 0``."""
    if n_gt == 0:
        return None
    if len(scores) == 0:
        return 0.0
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    tp = np.array([bool(matched[i]) for i in order], dtype=float)
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


def _greedy_match(preds: list[tuple[float, object]], gts: list, overlap, theta: float) -> list[bool]:
    """Match predictions (by descending score) to the best still-free GT with overlap >= theta."""
    free = [True] * len(gts)
    flags = []
    for _, p in sorted(preds, key=lambda sp: -sp[0]):
        best, best_v = -1, theta
        for j, g in enumerate(gts):
            if not free[j]:
                continue
            v = overlap(g, p)
            if v >= best_v and (best < 0 or v > best_v):
                best, best_v = j, v
        if best >= 0:
            free[best] = False
        flags.append(best >= 0)
    return flags


def _gt_instances(gts: Sequence[GroundTruthTube], no_action: int | None) -> dict[int, list[dict]]:
    """Per action class, the GT sub-tubes (frames labelled with that class)."""
    out: dict[int, list[dict]] = {}
    for g in gts:
        for a in sorted({a for _, a in g.entries.values()}):
            if a == no_action:
                continue
            out.setdefault(a, []).append(g.boxes_with_action(a))
    return out


def video_map(gts: Sequence[GroundTruthTube], tubes: Sequence[Tube], theta: float,
              no_action: int | None = None, frame_set: str = "union") -> APReport:
    instances = _gt_instances(gts, no_action)
    report = APReport(metric="video-mAP", theta=float(theta))
    for c in sorted(instances):
        preds = [(t.score, t.boxes) for t in tubes if t.action == c]
        flags = _greedy_match(preds, instances[c], lambda g, p: tube_iou_3d(g, p, frame_set), theta)
        scores = sorted((s for s, _ in preds), reverse=True)
        report.ap[c] = average_precision(scores, flags, len(instances[c]))
        report.n_gt[c] = len(instances[c])
    return report


def frame_map(gts: Sequence[GroundTruthTube], tubes: Sequence[Tube], theta: float,
              keyframes: Iterable[int] | None = None, no_action: int | None = None) -> APReport:
    """Frame-level AP on ``keyframes`` (default: every annotated frame), pooled across frames."""
    if keyframes is None:
        keyframes = {t for g in gts for t in g.entries}
    keyframes = sorted(set(keyframes))
    report = APReport(metric="frame-mAP", theta=float(theta))
    classes = sorted({a for g in gts for _, a in g.entries.values() if a != no_action})
    for c in classes:
        all_scores, all_flags, n_gt = [], [], 0
        for k in keyframes:
            gt_boxes = [g.entries[k][0] for g in gts if k in g.entries and g.entries[k][1] == c]
            preds = [(t.score, t.boxes[k]) for t in tubes if t.action == c and k in t.boxes]
            n_gt += len(gt_boxes)
            flags = _greedy_match(preds, gt_boxes, iou, theta)
            all_scores.extend(sorted((s for s, _ in preds), reverse=True))
            all_flags.extend(flags)
        if n_gt == 0:
            continue
        report.ap[c] = average_precision(all_scores, all_flags, n_gt)
        report.n_gt[c] = n_gt
    return report


def compare_linkers(scenario: Scenario, link_cfg: LinkConfig, encoder: EncoderParams,
                    iou_thresholds: Sequence[float] = (0.25, 0.5, 0.75), theta: float = 0.5,
                    iou_cfg: LinkConfig | None = None,
                    thresholds: Sequence[float] = MOTION_THRESHOLDS) -> list[RecallReport]:
    """Recall table: one row per IoU-linking threshold, then the query-matching row."""
    if iou_cfg is None:
        iou_cfg = replace(link_cfg, max_gap=None)
    frames = scenario.frames()
    rows = [tube_recall(scenario.gts, iou_link(frames, thr, iou_cfg), theta, f"IoU>={thr:g}", thresholds)
            for thr in iou_thresholds]
    rows.append(tube_recall(scenario.gts, qmm_link(frames, encoder, link_cfg), theta, "QMM", thresholds))
    return rows


def merge_reports(tables: Sequence[Sequence[RecallReport]]) -> list[RecallReport]:
    """Sum counts row-wise over several comparison tables (e.g. a scenario suite)."""
    merged = []
    for rows in zip(*tables):
        counts: dict[str, list[int]] = {}
        for r in rows:
            for k, (m, n) in r.counts.items():
                c = counts.setdefault(k, [0, 0])
                c[0] += m
                c[1] += n
        merged.append(RecallReport(rows[0].linker, rows[0].theta,
                                   {k: (m, n) for k, (m, n) in counts.items()}, rows[0].thresholds))
    return merged


def format_recall_table(rows: Sequence[RecallReport], categories: bool = True) -> str:
    cols = ("All",) + (CATEGORIES if categories else ())
    lines = [f"{'':<12}{'theta':>7}" + "".join(f"{c:>8}" for c in cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r.recall(c)
            cells.append(f"{'-' if v is None else f'{100 * v:.1f}':>8}")
        lines.append(f"{r.linker:<12}{r.theta:>7g}" + "".join(cells))
    return "\n".join(lines)


def format_ap_report(report: APReport) -> str:
    lines = [f"{report.metric}@{report.theta:g}: {100 * report.mean:.1f}"]
    for c, v in sorted(report.ap.items()):
        lines.append(f"  class {c:>3}  AP {100 * v:6.1f}  (n_gt={report.n_gt[c]})")
    return "\n".join(lines)

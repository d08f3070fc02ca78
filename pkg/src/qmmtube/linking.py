"""Per-frame detections to person track lists: query matching and the IoU-linking baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import groupby
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import BBox, DetectionRecord, iou_matrix
from .encoder import EncoderParams, cosine_matrix, encode_batch, DimensionMismatch


class TrackEntry(NamedTuple):
    frame: int
    index: int  # position of the record within its frame of the input stream
    record: DetectionRecord


@dataclass
class TrackList:
    id: int
    entries: list[TrackEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def frames(self) -> list[int]:
        return [e.frame for e in self.entries]

    @property
    def last(self) -> TrackEntry:
        return self.entries[-1]

    @property
    def boxes(self) -> dict[int, BBox]:
        return {e.frame: e.record.box for e in self.entries}


@dataclass(frozen=True)
class LinkConfig:
    """Linking thresholds.

    ``tau_k_prime``: a list is kept only if it has *more than* this many
    entries. ``max_gap``: frames a list may go unmatched before it stops
    being a candidate; ``None`` picks the linker default (unlimited for
    query matching, 0 for IoU linking) and a negative value means unlimited.
    """

    tau_p: float = 0.9
    tau_s: float = 0.5
    tau_k_prime: int = 8
    person_class_index: int = 0
    max_gap: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.tau_p <= 1.0:
            raise ValueError("tau_p must lie in [0, 1]")
        if not -1.0 <= self.tau_s <= 1.0:
            raise ValueError("tau_s must lie in [-1, 1]")
        if self.tau_k_prime < 1:
            raise ValueError("tau_k_prime must be >= 1")


def group_by_frame(records: Iterable[DetectionRecord]) -> list[tuple[int, list[DetectionRecord]]]:
    records = list(records)
    frames = [r.frame for r in records]
    if any(b < a for a, b in zip(frames, frames[1:])):
        raise ValueError("detection stream must be sorted by frame")
    return [(t, list(g)) for t, g in groupby(records, key=lambda r: r.frame)]


def _as_frames(stream) -> list[tuple[int, list[DetectionRecord]]]:
    stream = list(stream)
    if stream and isinstance(stream[0], DetectionRecord):
        return group_by_frame(stream)
    frames = [t for t, _ in stream]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise ValueError("detection stream must be sorted by frame")
    return [(t, list(recs)) for t, recs in stream]


def filter_person_queries(frame_detections: Sequence[DetectionRecord], cfg: LinkConfig) -> list[DetectionRecord]:
    return [d for d in frame_detections if d.person_score(cfg.person_class_index) >= cfg.tau_p]


def _kept_with_index(dets, cfg):
    return [(i, d) for i, d in enumerate(dets) if d.person_score(cfg.person_class_index) >= cfg.tau_p]


def _is_active(track: TrackList, t: int, max_gap: int) -> bool:
    return max_gap < 0 or t - track.last.frame - 1 <= max_gap


def _sorted_pairs(sim: np.ndarray, list_ids: Sequence[int]):
    """All (detection, list) pairs by descending value; ties to lower detection index, then lower list id."""
    pairs = [(-float(sim[i, j]), i, list_ids[j], j)
             for i in range(sim.shape[0]) for j in range(sim.shape[1])]
    pairs.sort()
    return [(i, j, -neg) for neg, i, _, j in pairs]


def _finish(tracks: list[TrackList], cfg: LinkConfig) -> list[TrackList]:
    return [tr for tr in tracks if len(tr) > cfg.tau_k_prime]


def qmm_link(stream, encoder: EncoderParams, cfg: LinkConfig) -> list[TrackList]:
    """Link person queries across frames by the similarity of their encoded features.

    Per frame: keep queries whose person score is at least ``tau_p``;
    encode them and the last query of every active list; walk all
    (query, list) pairs from most to least similar. The first pair seen for
    a query decides it: if that list already took a query this frame, or
    the similarity is not above ``tau_s``, the query starts a new list;
    otherwise it is appended. Later pairs of a decided query are ignored.
    Only lists longer than ``tau_k_prime`` are returned.
    """
    frames = _as_frames(stream)
    max_gap = -1 if cfg.max_gap is None else cfg.max_gap
    tracks: list[TrackList] = []
    for t, dets in frames:
        kept = _kept_with_index(dets, cfg)
        if not kept:
            continue
        for _, d in kept:
            if len(d.query) != encoder.d:
                raise DimensionMismatch(f"query dimension {len(d.query)} != encoder input dimension {encoder.d}")
        active = [tr for tr in tracks if _is_active(tr, t, max_gap)]
        decided = [False] * len(kept)
        if active:
            E_new = encode_batch(encoder, np.array([d.query for _, d in kept]))
            E_old = encode_batch(encoder, np.array([tr.last.record.query for tr in active]))
            sim = cosine_matrix(E_new, E_old)
            appended = [False] * len(active)
            new_lists = []
            for i, j, s in _sorted_pairs(sim, [tr.id for tr in active]):
                if decided[i]:
                    continue
                decided[i] = True
                if not appended[j] and s > cfg.tau_s:
                    appended[j] = True
                    active[j].entries.append(TrackEntry(t, *kept[i]))
                else:
                    new_lists.append(i)
            for i in new_lists:
                tracks.append(TrackList(len(tracks), [TrackEntry(t, *kept[i])]))
        for i, done in enumerate(decided):
            if not done:
                tracks.append(TrackList(len(tracks), [TrackEntry(t, *kept[i])]))
    return _finish(tracks, cfg)


def iou_link(stream, link_threshold: float, cfg: LinkConfig) -> list[TrackList]:
    """Greedy IoU linking of person detections to the last box of each active list.

    Pairs are taken by descending IoU and matched one-to-one when the IoU is
    at least ``link_threshold``; leftovers start new lists. Lists unmatched
    for more than ``max_gap`` frames (default 0) are closed.
    """
    frames = _as_frames(stream)
    max_gap = 0 if cfg.max_gap is None else cfg.max_gap
    tracks: list[TrackList] = []
    for t, dets in frames:
        kept = _kept_with_index(dets, cfg)
        if not kept:
            continue
        active = [tr for tr in tracks if _is_active(tr, t, max_gap)]
        used_det = [False] * len(kept)
        if active:
            ov = iou_matrix([d.box for _, d in kept], [tr.last.record.box for tr in active])
            used_list = [False] * len(active)
            for i, j, v in _sorted_pairs(ov, [tr.id for tr in active]):
                if v < link_threshold:
                    break
                if used_det[i] or used_list[j]:
                    continue
                used_det[i] = used_list[j] = True
                active[j].entries.append(TrackEntry(t, *kept[i]))
        for i, used in enumerate(used_det):
            if not used:
                tracks.append(TrackList(len(tracks), [TrackEntry(t, *kept[i])]))
    return _finish(tracks, cfg)

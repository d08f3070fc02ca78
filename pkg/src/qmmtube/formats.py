"""JSON Lines readers/writers for detections, ground truth, tracks, score sequences and tubes.

Every file written here starts with a header object ``{"header": {...}}``
carrying the tool version, a config hash and the seed. Readers skip it.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Any, Callable, Iterable, Iterator

import numpy as np

from . import __version__
from .core import BBox, DetectionRecord, GroundTruthTube, Tube


class SchemaError(ValueError):
    """A record in an input file does not match the expected layout."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")
        self.message = message


def config_hash(config: Any) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def make_header(kind: str, config: Any = None, seed: int | None = None) -> dict:
    return {
        "tool": "qmmtube",
        "version": __version__,
        "kind": kind,
        "config_hash": config_hash(config),
        "seed": seed,
    }


def dumps(obj) -> str:
    # repr-based float formatting round-trips float64 exactly
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_jsonl(path, rows: Iterable[dict], header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(dumps({"header": header}) + "\n")
        for row in rows:
            fh.write(dumps(row) + "\n")


def write_json(path, obj: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")


def iter_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, object)`` for every non-header, non-blank line."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise SchemaError(path, lineno, "expected a JSON object")
            if set(obj) == {"header"}:
                continue
            yield lineno, obj


def read_header(path) -> dict | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        obj = json.loads(first)
    except json.JSONDecodeError:
        return None
    if isinstance(obj, dict) and set(obj) == {"header"}:
        return obj["header"]
    return None


def _parse_all(path, parse: Callable[[dict], Any]) -> list:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(parse(obj))
        except (KeyError, TypeError, ValueError) as exc:
            msg = f"missing key {exc}" if isinstance(exc, KeyError) else str(exc)
            raise SchemaError(path, lineno, msg) from None
    return out


# -- detections ---------------------------------------------------------------

def detection_to_dict(d: DetectionRecord) -> dict:
    return {
        "frame": d.frame,
        "box": d.box.as_list(),
        "scores": d.class_scores.tolist(),
        "query": d.query.tolist(),
        "gt_person": d.gt_person,
        "gt_action": d.gt_action,
    }


def _opt_int(x):
    if x is None:
        return None
    if isinstance(x, bool) or int(x) != x:
        raise ValueError(f"expected an integer label, got {x!r}")
    return int(x)


def detection_from_dict(obj: dict) -> DetectionRecord:
    return DetectionRecord(
        frame=obj["frame"],
        box=BBox.from_seq(obj["box"]),
        class_scores=obj["scores"],
        query=obj["query"],
        gt_person=_opt_int(obj.get("gt_person")),
        gt_action=_opt_int(obj.get("gt_action")),
    )


def read_detections(path) -> list[DetectionRecord]:
    """Read a detection stream, checking frame order and fixed vector sizes."""
    records: list[DetectionRecord] = []
    n_scores = n_query = None
    for lineno, obj in iter_jsonl(path):
        try:
            d = detection_from_dict(obj)
        except (KeyError, TypeError, ValueError) as exc:
            msg = f"missing key {exc}" if isinstance(exc, KeyError) else str(exc)
            raise SchemaError(path, lineno, msg) from None
        if records and d.frame < records[-1].frame:
            raise SchemaError(path, lineno, "records not sorted by frame")
        if n_scores is None:
            n_scores, n_query = len(d.class_scores), len(d.query)
        elif len(d.class_scores) != n_scores or len(d.query) != n_query:
            raise SchemaError(path, lineno, "score/query length differs from earlier records")
        records.append(d)
    return records


def write_detections(path, records: Iterable[DetectionRecord], header=None) -> None:
    write_jsonl(path, (detection_to_dict(d) for d in records), header)


# -- ground truth ---------------------------------------------------------------

def gt_to_dict(g: GroundTruthTube) -> dict:
    return {
        "person_id": g.person_id,
        "entries": [[t, b.as_list(), a] for t, (b, a) in g.entries.items()],
    }


def gt_from_dict(obj: dict) -> GroundTruthTube:
    entries = {}
    for t, box, action in obj["entries"]:
        t = int(t)
        if t in entries:
            raise ValueError(f"duplicate frame {t}")
        entries[t] = (BBox.from_seq(box), _opt_int(action))
    return GroundTruthTube(person_id=int(obj["person_id"]), entries=entries)


def read_gt(path) -> list[GroundTruthTube]:
    return _parse_all(path, gt_from_dict)


def write_gt(path, gts: Iterable[GroundTruthTube], header=None) -> None:
    write_jsonl(path, (gt_to_dict(g) for g in gts), header)


# -- tubes ----------------------------------------------------------------------

def tube_to_dict(t: Tube) -> dict:
    return {
        "person_id": t.person_id,
        "action": t.action,
        "score": t.score,
        "boxes": [[f, b.as_list()] for f, b in t.boxes.items()],
    }


def tube_from_dict(obj: dict) -> Tube:
    return Tube(
        person_id=int(obj["person_id"]),
        action=int(obj["action"]),
        score=float(obj["score"]),
        boxes={int(f): BBox.from_seq(b) for f, b in obj["boxes"]},
    )


def read_tubes(path) -> list[Tube]:
    return _parse_all(path, tube_from_dict)


def write_tubes(path, tubes: Iterable[Tube], header=None) -> None:
    write_jsonl(path, (tube_to_dict(t) for t in tubes), header)


# -- tracks and score sequences ---------------------------------------------------

def track_to_dict(track) -> dict:
    return {
        "id": track.id,
        "entries": [
            {"frame": e.frame, "index": e.index, "record": detection_to_dict(e.record)}
            for e in track.entries
        ],
    }


def track_from_dict(obj: dict):
    from .linking import TrackEntry, TrackList

    entries = []
    for e in obj["entries"]:
        rec = detection_from_dict(e["record"])
        if rec.frame != int(e["frame"]):
            raise ValueError("entry frame disagrees with its record")
        entries.append(TrackEntry(int(e["frame"]), int(e.get("index", -1)), rec))
    frames = [e.frame for e in entries]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise ValueError("track frames must be strictly increasing")
    return TrackList(id=int(obj["id"]), entries=entries)


def read_tracks(path) -> list:
    return _parse_all(path, track_from_dict)


def write_tracks(path, tracks, header=None) -> None:
    write_jsonl(path, (track_to_dict(t) for t in tracks), header)


def scoreseq_to_dict(track_id: int, seq) -> dict:
    return {"track_id": track_id, "frames": list(seq.frames), "scores": seq.scores.tolist()}


def scoreseq_from_dict(obj: dict):
    from .scoring import ActionScoreSeq

    return int(obj["track_id"]), ActionScoreSeq(
        frames=tuple(int(f) for f in obj["frames"]), scores=np.asarray(obj["scores"], dtype=float)
    )


def read_scoreseqs(path) -> dict:
    return dict(_parse_all(path, scoreseq_from_dict))


def write_scoreseqs(path, items, header=None) -> None:
    write_jsonl(path, (scoreseq_to_dict(i, s) for i, s in items), header)

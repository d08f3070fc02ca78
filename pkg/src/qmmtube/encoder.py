"""Person-feature encoder: a 3-layer ReLU MLP trained with a multi-positive N-pair loss.

The loss for one anchor ``i`` with positive set ``P_i`` (same person label,
self excluded) is::

    l_i = -log( sum_{j in P_i} exp(s_ij / tau) / sum_{k != i} exp(s_ik / tau) )

where ``s`` is the cosine similarity of encoded queries. The batch loss is
the sum of ``l_i`` over anchors divided by the number of embeddings.
Gradients are derived by hand and backpropagated through the cosine, the
output normalization and the MLP.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import DetectionRecord, GroundTruthTube, iou, substream

log = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


class DegenerateBatch(ValueError):
    """The batch has fewer than two usable embeddings or no positive pair."""


class ZeroEmbedding(ValueError):
    """The encoder mapped a query to the zero vector, so its direction is undefined."""


class DimensionMismatch(ValueError):
    """Query dimension does not match the encoder's input dimension."""


@dataclass
class EncoderParams:
    """Weights ``W`` are stored ``(out, in)`` so a layer computes ``W @ x + b``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    normalize_output: bool = True

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        d, h, m = self.d, self.h, self.m
        shapes = {"W1": (h, d), "b1": (h,), "W2": (h, h), "b2": (h,), "W3": (m, h), "b3": (m,)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def h(self) -> int:
        return self.W1.shape[0]

    @property
    def m(self) -> int:
        return self.W3.shape[0]

    @classmethod
    def init(cls, d: int, h: int | None = None, m: int | None = None, rng=None,
             normalize_output: bool = True) -> "EncoderParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
        h = d if h is None else h
        m = d if m is None else m
        rng = np.random.default_rng(rng)
        arrays = {}
        for name, (fan_out, fan_in) in (("1", (h, d)), ("2", (h, h)), ("3", (m, h))):
            bound = 1.0 / math.sqrt(fan_in)
            arrays["W" + name] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            arrays["b" + name] = rng.uniform(-bound, bound, size=fan_out)
        return cls(**arrays, normalize_output=normalize_output)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{k: v.copy() for k, v in self.arrays().items()},
                             normalize_output=self.normalize_output)

    def to_dict(self) -> dict:
        out = {
            "d": self.d, "h": self.h, "m": self.m,
            "activation": "relu",
            "normalize_output": self.normalize_output,
            "weights": {
                k: {"shape": list(v.shape), "data": v.ravel(order="C").tolist()}
                for k, v in self.arrays().items()
            },
        }
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "EncoderParams":
        if obj.get("activation", "relu") != "relu":
            raise ValueError(f"unsupported activation {obj['activation']!r}")
        w = obj["weights"]
        arrays = {k: np.asarray(w[k]["data"], dtype=np.float64).reshape(w[k]["shape"])
                  for k in PARAM_NAMES}
        return cls(**arrays, normalize_output=bool(obj.get("normalize_output", True)))


def _forward(p: EncoderParams, X: np.ndarray):
    a1 = X @ p.W1.T + p.b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ p.W2.T + p.b2
    h2 = np.maximum(a2, 0.0)
    z = h2 @ p.W3.T + p.b3
    return z, (X, a1, h1, a2, h2)


def _check_dim(p: EncoderParams, X: np.ndarray):
    if X.shape[-1] != p.d:
        raise DimensionMismatch(f"query dimension {X.shape[-1]} != encoder input dimension {p.d}")


def encode_batch(p: EncoderParams, X) -> np.ndarray:
    """Encode a ``(n, d)`` stack of queries."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_dim(p, X)
    z, _ = _forward(p, X)
    if p.normalize_output:
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        z = np.divide(z, norms, out=np.zeros_like(z), where=norms > 0)
    return z


def encode(p: EncoderParams, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError("encode takes a single query vector")
    return encode_batch(p, q[None, :])[0]


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _unit_rows(A: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(A, axis=1, keepdims=True)
    return np.divide(A, norms, out=np.zeros_like(A, dtype=np.float64), where=norms > 0)


def cosine_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; a zero row (e.g. an all-inactive ReLU output) scores 0 against everything."""
    return np.clip(_unit_rows(A) @ _unit_rows(B).T, -1.0, 1.0)


def assign_person_ids(detections: Sequence[DetectionRecord], gts: Sequence[GroundTruthTube],
                      tau_iou: float) -> list[int]:
    """Label each detection with the GT person whose box it overlaps best (IoU > tau_iou), else -1."""
    labels = []
    for det in detections:
        best, best_iou = -1, tau_iou
        for g in gts:
            e = g.entries.get(det.frame)
            if e is None:
                continue
            v = iou(det.box, e[0])
            if v > best_iou:
                best, best_iou = g.person_id, v
        labels.append(best)
    return labels


def label_records(records: Sequence[DetectionRecord], gts: Sequence[GroundTruthTube],
                  tau_iou: float) -> list[DetectionRecord]:
    """Return copies of ``records`` with person/action labels taken from the ground truth."""
    by_id = {g.person_id: g for g in gts}
    out = []
    for rec, pid in zip(records, assign_person_ids(records, gts, tau_iou)):
        action = by_id[pid].action_at(rec.frame) if pid >= 0 else None
        out.append(replace(rec, gt_person=pid, gt_action=action))
    return out


# -- loss -----------------------------------------------------------------------

def _as_batch(E):
    """Split ``[(vector, label, frame), ...]`` into arrays, dropping unlabeled entries."""
    kept = [(v, y, t) for v, y, t in E if y is not None and y >= 0]
    if len(kept) < 2:
        raise DegenerateBatch("degenerate batch: need at least two labeled embeddings")
    X = np.array([np.asarray(v, dtype=np.float64) for v, _, _ in kept])
    labels = np.array([int(y) for _, y, _ in kept])
    frames = np.array([int(t) for _, _, t in kept])
    return X, labels, frames


def _loss_from_unit(U: np.ndarray, labels: np.ndarray, frames: np.ndarray, tau_t: float,
                    literal_outer_sum: bool, need_grad: bool):
    """Loss (and d loss / d U) for row-normalized embeddings ``U``."""
    n = len(U)
    S = (U @ U.T) / tau_t
    eye = np.eye(n, dtype=bool)
    same = labels[:, None] == labels[None, :]
    pos = same & ~eye
    anchors = pos.any(axis=1)
    if not anchors.any():
        raise DegenerateBatch("degenerate batch: no positive pairs")
    scale = 1.0 / n
    if literal_outer_sum:
        scale *= len(np.unique(frames))

    S_all = np.where(eye, -np.inf, S)
    S_pos = np.where(pos, S, -np.inf)
    lse_all = logsumexp(S_all[anchors], axis=1)
    lse_pos = logsumexp(S_pos[anchors], axis=1)
    loss = scale * float(np.sum(lse_all - lse_pos))
    if not need_grad:
        return loss, None

    G = np.zeros_like(S)
    G[anchors] = (np.exp(S_all[anchors] - lse_all[:, None])
                  - np.exp(S_pos[anchors] - lse_pos[:, None]))
    G *= scale
    dU = (G + G.T) @ U / tau_t
    return loss, dU


def npair_loss(E, tau_t: float = 1.0, literal_outer_sum: bool = False) -> float:
    """N-pair loss of a set of ``(embedding, person_label, frame)`` triples.

    Entries labelled -1 (or ``None``) are dropped before the loss is formed.
    Anchors without a positive contribute 0. With ``literal_outer_sum`` the
    result is multiplied by the number of distinct frames.
    """
    if tau_t <= 0:
        raise ValueError("temperature must be positive")
    X, labels, frames = _as_batch(E)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cosine similarity of a zero vector is undefined")
    loss, _ = _loss_from_unit(X / norms, labels, frames, tau_t, literal_outer_sum, need_grad=False)
    return loss


def loss_and_gradient(p: EncoderParams, queries, labels, frames, tau_t: float = 1.0,
                      literal_outer_sum: bool = False):
    """N-pair loss of the encoded ``queries`` and its gradient w.r.t. every parameter."""
    X, labels, frames = _as_batch(zip(queries, labels, frames))
    _check_dim(p, X)
    z, (X, a1, h1, a2, h2) = _forward(p, X)
    # cosine similarity ignores scale, so the optional output normalization
    # leaves both the loss and its gradient unchanged
    zn = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(zn == 0):
        raise ZeroEmbedding("encoder produced a zero embedding; cosine similarity undefined")
    U = z / zn
    loss, dU = _loss_from_unit(U, labels, frames, tau_t, literal_outer_sum, need_grad=True)

    dz = (dU - np.sum(dU * U, axis=1, keepdims=True) * U) / zn
    grads = {"W3": dz.T @ h2, "b3": dz.sum(axis=0)}
    da2 = (dz @ p.W3) * (a2 > 0)
    grads["W2"] = da2.T @ h1
    grads["b2"] = da2.sum(axis=0)
    da1 = (da2 @ p.W2) * (a1 > 0)
    grads["W1"] = da1.T @ X
    grads["b1"] = da1.sum(axis=0)
    return loss, grads


# -- training -------------------------------------------------------------------

@dataclass
class TrainConfig:
    """Training settings.

    Optimization is plain mini-batch gradient descent with a step decay of
    the learning rate (``lr * lr_decay`` from epoch ``lr_decay_epoch`` on).
    A batch is ``batch_size`` clips; each clip is ``clip_len`` frames taken
    every ``frame_stride`` frames from a random start.
    """

    tau_iou: float = 0.2
    tau_t: float = 1.0
    tau_p: float = 0.75
    person_class_index: int = 0
    epochs: int = 20
    clip_len: int = 8
    frame_stride: int = 4
    batch_size: int = 8
    clips_per_epoch: int | None = None
    lr: float = 0.5
    lr_decay_epoch: int = 10
    lr_decay: float = 0.1
    hidden_dim: int | None = None
    out_dim: int | None = None
    normalize_output: bool = True
    literal_outer_sum: bool = False
    optimizer: str = field(default="sgd-step-decay", init=False)

    def __post_init__(self):
        if self.tau_t <= 0:
            raise ValueError("tau_t must be positive")
        if self.clip_len < 2:
            raise ValueError("clip_len must be at least 2")
        if not 0.0 <= self.tau_iou <= 1.0 or not 0.0 <= self.tau_p <= 1.0:
            raise ValueError("tau_iou and tau_p must lie in [0, 1]")
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1 or self.frame_stride < 1:
            raise ValueError("invalid optimizer settings")

    def to_dict(self) -> dict:
        return asdict(self)


def npair_gradient(p: EncoderParams, batch, cfg: TrainConfig) -> EncoderParams:
    """Gradient of the N-pair loss for ``[(query, label, frame), ...]``, packed like ``p``."""
    queries, labels, frames = zip(*batch) if batch else ((), (), ())
    _, grads = loss_and_gradient(p, queries, labels, frames, cfg.tau_t, cfg.literal_outer_sum)
    return EncoderParams(**grads, normalize_output=p.normalize_output)


@dataclass
class _Video:
    frames: list[int]
    by_frame: dict[int, tuple[np.ndarray, np.ndarray]]


def _prepare_video(records: Sequence[DetectionRecord], cfg: TrainConfig) -> _Video:
    rows: dict[int, tuple[list, list]] = {}
    for r in records:
        if r.person_score(cfg.person_class_index) < cfg.tau_p:
            continue
        if r.gt_person is None or r.gt_person < 0:
            continue
        qs, ys = rows.setdefault(r.frame, ([], []))
        qs.append(r.query)
        ys.append(r.gt_person)
    by_frame = {t: (np.array(qs), np.array(ys)) for t, (qs, ys) in sorted(rows.items())}
    return _Video(frames=list(by_frame), by_frame=by_frame)


def _sample_clip(video: _Video, cfg: TrainConfig, rng: np.random.Generator):
    if not video.frames:
        return None
    first, last = video.frames[0], video.frames[-1]
    span = (cfg.clip_len - 1) * cfg.frame_stride
    start = first + int(rng.integers(0, max(0, last - first - span) + 1))
    wanted = [start + i * cfg.frame_stride for i in range(cfg.clip_len)]
    parts = [(video.by_frame[t], t) for t in wanted if t in video.by_frame]
    if not parts:
        return None
    Q = np.concatenate([qs for (qs, _), _ in parts])
    y = np.concatenate([ys for (_, ys), _ in parts])
    t = np.concatenate([np.full(len(ys), f) for (_, ys), f in parts])
    if len(y) < 2 or not np.any(np.bincount(y) >= 2):
        return None
    return Q, y, t


def _has_positive_pair(video: _Video) -> bool:
    labels = [y for _, ys in video.by_frame.values() for y in ys]
    return len(labels) >= 2 and len(set(labels)) < len(labels)


def train_encoder(videos: Sequence[Sequence[DetectionRecord]], cfg: TrainConfig,
                  seed: int = 0, init: EncoderParams | None = None):
    """Train the encoder on labelled detection streams.

    Records are filtered by person score (``tau_p``) and entries without a
    person label are dropped. Returns ``(params, epoch_losses)`` where each
    epoch loss is the mean pre-update batch loss of that epoch. Deterministic
    for a given seed.
    """
    if not videos:
        raise DegenerateBatch("empty training set")
    prepared = [_prepare_video(v, cfg) for v in videos]
    if not any(_has_positive_pair(v) for v in prepared):
        raise DegenerateBatch("no positive pairs anywhere in the training set")
    d = next(len(r.query) for v in videos for r in v)
    if init is None:
        params = EncoderParams.init(d, cfg.hidden_dim, cfg.out_dim, rng=substream(seed, "init"),
                                    normalize_output=cfg.normalize_output)
    else:
        params = init.copy()
    _check_dim(params, np.zeros((1, d)))
    rng = substream(seed, "train")
    n_clips = cfg.clips_per_epoch or len(prepared)
    history: list[float] = []

    for epoch in range(cfg.epochs):
        lr = cfg.lr * (cfg.lr_decay if epoch >= cfg.lr_decay_epoch else 1.0)
        order = rng.permutation(n_clips) % len(prepared)
        clips = [_sample_clip(prepared[i], cfg, rng) for i in order]
        clips = [c for c in clips if c is not None]
        batch_losses = []
        for start in range(0, len(clips), cfg.batch_size):
            total, used = 0.0, 0
            acc = {k: np.zeros_like(v) for k, v in params.arrays().items()}
            for Q, y, t in clips[start:start + cfg.batch_size]:
                try:
                    loss, grads = loss_and_gradient(params, Q, y, t, cfg.tau_t, cfg.literal_outer_sum)
                except ZeroEmbedding:
                    log.debug("epoch %d: clip skipped, encoder output vanished", epoch)
                    continue
                total += loss
                used += 1
                for k in acc:
                    acc[k] += grads[k]
            if not used:
                continue
            batch_losses.append(total / used)
            if lr != 0.0:
                for k in acc:
                    setattr(params, k, getattr(params, k) - lr * acc[k] / used)
        history.append(float(np.mean(batch_losses)) if batch_losses else float("nan"))
        log.debug("epoch %d lr %.3g loss %.6f", epoch, lr, history[-1])
    return params, history


def separation_score(p: EncoderParams, records: Sequence[DetectionRecord]) -> float:
    """Mean intra-person minus mean inter-person cosine of encoded, labelled records."""
    recs = [r for r in records if r.gt_person is not None and r.gt_person >= 0]
    E = encode_batch(p, np.array([r.query for r in recs]))
    C = cosine_matrix(E, E)
    y = np.array([r.gt_person for r in recs])
    same = y[:, None] == y[None, :]
    off = ~np.eye(len(y), dtype=bool)
    return float(C[same & off].mean() - C[~same].mean())

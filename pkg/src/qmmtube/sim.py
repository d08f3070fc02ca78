"""Synthetic scenarios: ground-truth person tubes plus a per-frame detection stream.

Each person follows a simple trajectory (stationary, linear, bouncing or
teleporting) and carries an action timeline. Detections get a person score,
a query vector built as ``identity (+) action confounder + noise``, and
optional box jitter and dropout. Distractor detections have fresh
identities, lower person scores and ``gt_person = -1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import BBox, DetectionRecord, GroundTruthTube, substream

TRAJECTORIES = ("stationary", "linear", "bounce", "teleport")
MOTION_THRESHOLDS = (0.1, 0.25)


@dataclass
class PersonSpec:
    size: tuple[float, float] = (40.0, 80.0)
    trajectory: str = "stationary"
    start: tuple[float, float] | None = None  # box centre; random when None
    velocity: tuple[float, float] = (0.0, 0.0)  # px per source frame
    teleport_period: int = 1
    actions: list[tuple[int, int, int]] = field(default_factory=list)  # (first, last, class), inclusive
    span: tuple[int, int] | None = None  # first/last frame present, inclusive
    identity_seed: int | None = None

    def __post_init__(self):
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(f"unknown trajectory {self.trajectory!r}")
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ValueError("person box size must be positive")
        if self.teleport_period < 1:
            raise ValueError("teleport_period must be >= 1")
        self.size = tuple(float(v) for v in self.size)
        self.velocity = tuple(float(v) for v in self.velocity)
        self.actions = [tuple(int(v) for v in a) for a in self.actions]
        if self.start is not None:
            self.start = tuple(float(v) for v in self.start)
        if self.span is not None:
            self.span = tuple(int(v) for v in self.span)


@dataclass
class ScenarioConfig:
    frames: int = 32
    width: float = 640.0
    height: float = 480.0
    persons: list[PersonSpec] = field(default_factory=lambda: [PersonSpec()])
    n_actions: int = 5
    camera_drift: tuple[float, float] = (0.0, 0.0)
    fps_stride: int = 1
    distractor_rate: float = 0.0
    identity_dim: int = 12
    confounder_dim: int = 4
    confounder_scale: float = 0.5
    noise_sigma: float = 0.0
    box_jitter: float = 0.0
    dropout: float = 0.0
    person_score_true: tuple[float, float] = (0.85, 1.0)
    person_score_distractor: tuple[float, float] = (0.0, 0.6)
    n_object_classes: int = 3
    max_identity_cos: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.persons = [p if isinstance(p, PersonSpec) else PersonSpec(**p) for p in self.persons]
        if self.frames < 1 or self.fps_stride < 1:
            raise ValueError("frames and fps_stride must be >= 1")
        for p in self.persons:
            if p.size[0] > self.width or p.size[1] > self.height:
                raise ValueError("person box larger than the image")
            for first, last, c in p.actions:
                if not 0 <= c < self.n_actions or first > last:
                    raise ValueError(f"bad action interval {(first, last, c)}")
        for name in ("dropout",):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        for lo, hi in (self.person_score_true, self.person_score_distractor):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError("person score ranges must lie in [0, 1]")
        if self.distractor_rate < 0 or self.noise_sigma < 0 or self.box_jitter < 0:
            raise ValueError("rates and noise levels must be non-negative")
        if self.identity_dim < 1 or self.confounder_dim < 0:
            raise ValueError("identity_dim must be >= 1")

    @property
    def query_dim(self) -> int:
        return self.identity_dim + self.confounder_dim

    @property
    def no_action(self) -> int:
        return self.n_actions

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scenario:
    gts: list[GroundTruthTube]
    records: list[DetectionRecord]
    config: ScenarioConfig

    def frames(self) -> list[tuple[int, list[DetectionRecord]]]:
        from .linking import group_by_frame

        return group_by_frame(self.records)


def _fold(x: float, lo: float, hi: float) -> float:
    """Reflect ``x`` into ``[lo, hi]`` (triangle wave)."""
    span = hi - lo
    if span <= 0:
        return lo
    r = (x - lo) % (2 * span)
    return lo + (r if r <= span else 2 * span - r)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _draw_identities(cfg: ScenarioConfig, rng: np.random.Generator) -> list[np.ndarray]:
    ids: list[np.ndarray] = []
    for p in cfg.persons:
        src = rng if p.identity_seed is None else np.random.default_rng([int(p.identity_seed)])
        for _ in range(10_000):
            v = _unit(src.standard_normal(cfg.identity_dim))
            if all(abs(float(v @ u)) <= cfg.max_identity_cos for u in ids):
                break
        else:
            raise ValueError("could not draw near-orthogonal identities; raise identity_dim")
        ids.append(v)
    return ids


def _centres(p: PersonSpec, cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Box centres for every output frame, shape ``(frames, 2)``."""
    w, h = p.size
    lo = np.array([w / 2, h / 2])
    hi = np.array([cfg.width - w / 2, cfg.height - h / 2])
    start = np.array(p.start) if p.start is not None else rng.uniform(lo, hi)
    drift = np.array(cfg.camera_drift)
    vel = np.array(p.velocity)
    n_src = (cfg.frames - 1) * cfg.fps_stride + 1

    if p.trajectory == "teleport":
        # piecewise constant; each jump lands clear of the previous box
        pos = np.empty((n_src, 2))
        cur = start
        for u in range(n_src):
            if u > 0 and u % p.teleport_period == 0:
                for _ in range(1000):
                    cand = rng.uniform(lo, hi)
                    if abs(cand[0] - cur[0]) >= w or abs(cand[1] - cur[1]) >= h:
                        break
                cur = cand
            pos[u] = cur
    else:
        u = np.arange(n_src)[:, None]
        pos = start + (vel * u if p.trajectory in ("linear", "bounce") else 0.0)

    pos = pos + drift * np.arange(n_src)[:, None]
    pos = pos[:: cfg.fps_stride]
    out = np.empty_like(pos)
    for t, (x, y) in enumerate(pos):
        if p.trajectory == "bounce" or (p.trajectory != "linear" and drift.any()):
            out[t] = (_fold(x, lo[0], hi[0]), _fold(y, lo[1], hi[1]))
        else:
            out[t] = np.clip((x, y), lo, hi)
    return out


def _box(c, size) -> BBox:
    w, h = size
    return BBox(c[0] - w / 2, c[1] - h / 2, c[0] + w / 2, c[1] + h / 2)


def _class_scores(person_score: float, cfg: ScenarioConfig, rng) -> np.ndarray:
    rest = (1.0 - person_score) * rng.dirichlet(np.ones(cfg.n_object_classes))
    return np.clip(np.concatenate([[person_score], rest]), 0.0, 1.0)


def _jitter(box: BBox, sigma: float, cfg: ScenarioConfig, rng) -> BBox:
    if sigma == 0:
        return box
    x1, y1, x2, y2 = np.array(box.as_list()) + sigma * rng.standard_normal(4)
    x1, x2 = np.clip(sorted((x1, x2)), 0, cfg.width)
    y1, y2 = np.clip(sorted((y1, y2)), 0, cfg.height)
    if x2 - x1 < 1 or y2 - y1 < 1:
        return box
    return BBox(x1, y1, x2, y2)


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    rng = substream(cfg.seed, "sim")
    identities = _draw_identities(cfg, rng)
    action_vecs = (
        np.array([_unit(rng.standard_normal(cfg.confounder_dim)) for _ in range(cfg.n_actions + 1)])
        * cfg.confounder_scale
        if cfg.confounder_dim
        else np.zeros((cfg.n_actions + 1, 0))
    )
    centres = [_centres(p, cfg, rng) for p in cfg.persons]

    def action_of(p: PersonSpec, t: int) -> int:
        for first, last, c in p.actions:
            if first <= t <= last:
                return c
        return cfg.no_action

    def query(identity, action):
        q = np.concatenate([identity, action_vecs[action]])
        return q + cfg.noise_sigma * rng.standard_normal(cfg.query_dim)

    gts = []
    for pid, (p, cs) in enumerate(zip(cfg.persons, centres)):
        first, last = p.span if p.span is not None else (0, cfg.frames - 1)
        entries = {t: (_box(cs[t], p.size), action_of(p, t))
                   for t in range(max(first, 0), min(last, cfg.frames - 1) + 1)}
        if entries:
            gts.append(GroundTruthTube(person_id=pid, entries=entries))

    records: list[DetectionRecord] = []
    for t in range(cfg.frames):
        frame: list[DetectionRecord] = []
        for g in gts:
            if t not in g.entries or rng.random() < cfg.dropout:
                continue
            box, action = g.entries[t]
            score = rng.uniform(*cfg.person_score_true)
            frame.append(DetectionRecord(
                frame=t,
                box=_jitter(box, cfg.box_jitter, cfg, rng),
                class_scores=_class_scores(score, cfg, rng),
                query=query(identities[g.person_id], action),
                gt_person=g.person_id,
                gt_action=action,
            ))
        for _ in range(rng.poisson(cfg.distractor_rate) if cfg.distractor_rate else 0):
            w = rng.uniform(20, min(80, cfg.width))
            h = rng.uniform(40, min(160, cfg.height))
            c = rng.uniform((w / 2, h / 2), (cfg.width - w / 2, cfg.height - h / 2))
            score = rng.uniform(*cfg.person_score_distractor)
            identity = _unit(rng.standard_normal(cfg.identity_dim))
            frame.append(DetectionRecord(
                frame=t,
                box=_box(c, (w, h)),
                class_scores=_class_scores(score, cfg, rng),
                query=query(identity, cfg.no_action),
                gt_person=-1,
                gt_action=None,
            ))
        records.extend(frame[i] for i in rng.permutation(len(frame)))
    return Scenario(gts=gts, records=records, config=cfg)


def motion_magnitude(gt: GroundTruthTube) -> float:
    """Mean centre displacement between consecutive GT entries, over sqrt of box area."""
    boxes = list(gt.boxes.values())
    if len(boxes) < 2:
        raise ValueError("motion category needs a tube with at least two frames")
    steps = []
    for a, b in zip(boxes, boxes[1:]):
        (ax, ay), (bx, by) = a.center, b.center
        steps.append(math.hypot(bx - ax, by - ay) / math.sqrt(a.area))
    return float(np.mean(steps))


def motion_category(gt: GroundTruthTube, thresholds: Sequence[float] = MOTION_THRESHOLDS) -> str:
    """``"S"``, ``"M"`` or ``"L"`` by normalized per-frame centre displacement."""
    small, medium = thresholds
    delta = motion_magnitude(gt)
    if delta < small:
        return "S"
    if delta < medium:
        return "M"
    return "L"


# -- scenario builders ----------------------------------------------------------

def _timeline(rng, frames: int, n_actions: int) -> list[tuple[int, int, int]]:
    """One action over most of the clip, with short "no action" margins."""
    first = int(rng.integers(0, max(1, frames // 8)))
    last = frames - 1 - int(rng.integers(0, max(1, frames // 8)))
    return [(first, last, int(rng.integers(0, n_actions)))]


def category_scenario(category: str, seed: int, n_persons: int = 3, frames: int = 24,
                      noise_sigma: float = 0.05, kind: str | None = None, **overrides) -> ScenarioConfig:
    """Scenario whose persons all fall into motion category ``category``.

    For ``"L"``, ``kind`` picks ``"fast"`` (bouncing, 20-40 px/frame) or
    ``"teleport"`` (a jump to a non-overlapping spot every 1-3 frames);
    by default it alternates with the seed. ``"mixed"`` cycles the persons
    through S, M and L.
    """
    rng = np.random.default_rng([int(seed), sum(map(ord, category))])
    size = (40.0, 80.0)
    n_actions = overrides.get("n_actions", 5)
    persons = []
    for i in range(n_persons):
        cat = "SML"[i % 3] if category == "mixed" else category
        angle = rng.uniform(0, 2 * np.pi)
        direction = np.array([math.cos(angle), math.sin(angle)])
        spec = dict(size=size, actions=_timeline(rng, frames, n_actions))
        if cat == "S":
            speed = rng.uniform(0.0, 2.0)
            spec.update(trajectory="bounce", velocity=tuple(speed * direction))
        elif cat == "M":
            speed = rng.uniform(7.0, 11.0)
            spec.update(trajectory="bounce", velocity=tuple(speed * direction))
        elif cat == "L":
            k = kind or ("teleport" if seed % 2 else "fast")
            if k == "teleport":
                spec.update(trajectory="teleport", teleport_period=int(rng.integers(1, 4)))
            else:
                speed = rng.uniform(20.0, 40.0)
                spec.update(trajectory="bounce", velocity=tuple(speed * direction))
        else:
            raise ValueError(f"unknown motion category {category!r}")
        persons.append(PersonSpec(**spec))
    kwargs = dict(frames=frames, persons=persons, noise_sigma=noise_sigma, n_actions=n_actions,
                  seed=int(seed))
    kwargs.update(overrides)
    return ScenarioConfig(**kwargs)


def scenario_suite(n_per_category: int = 10, seed: int = 0, **kwargs) -> list[ScenarioConfig]:
    """``n_per_category`` scenarios for each of S, M and L."""
    return [category_scenario(cat, seed * 1000 + 3 * i + j, **kwargs)
            for j, cat in enumerate("SML") for i in range(n_per_category)]

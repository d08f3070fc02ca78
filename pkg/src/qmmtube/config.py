"""Flat ``key = value`` config files and the bundled profiles.

One setting per line, ``#`` starts a comment. Keys are dotted by stage::

    seed = 0
    sim.frames = 32
    sim.category = mixed          # builder: S, M, L or mixed
    sim.n_persons = 3
    sim.person.0.trajectory = bounce   # explicit persons instead of the builder
    sim.person.0.velocity = 12, 0
    sim.person.0.actions = 0-15:2; 16-31:4
    link.tau_p = 0.9
    train.epochs = 20
    score.k = 1
    eval.theta = 0.5

Values are parsed as int, float, bool (true/false), ``none``, comma
separated tuples, or left as strings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .encoder import TrainConfig
from .linking import LinkConfig
from .scoring import ScoringConfig
from .sim import PersonSpec, ScenarioConfig, category_scenario

PROFILES = ("jhmdb-like", "ucf-like", "ava-like")


class ConfigError(ValueError):
    pass


def _scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def parse_value(text: str):
    if ";" in text or re.fullmatch(r"\s*\d+\s*-\s*\d+\s*:\s*\d+\s*", text):
        return [_action(part) for part in text.split(";") if part.strip()]
    if "," in text:
        return tuple(_scalar(p) for p in text.split(","))
    return _scalar(text)


def _action(text: str) -> tuple[int, int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*-\s*(\d+)\s*:\s*(\d+)\s*", text)
    if not m:
        raise ConfigError(f"bad action interval {text!r}, expected first-last:class")
    return tuple(int(g) for g in m.groups())


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not re.fullmatch(r"[A-Za-z_][\w.]*", key):
            raise ConfigError(f"{source}:{lineno}: invalid key {key!r}")
        out[key] = parse_value(value)
    return out


def load_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(path))
    return parse_text(p.read_text(encoding="utf-8"), str(path))


def load_profile(name: str) -> dict:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}")
    text = resources.files("qmmtube").joinpath("profiles", f"{name}.cfg").read_text(encoding="utf-8")
    return parse_text(text, name)


def section(flat: dict, prefix: str) -> dict:
    p = prefix + "."
    return {k[len(p):]: v for k, v in flat.items() if k.startswith(p)}


def _build(cls, values: dict, what: str):
    names = {f.name for f in fields(cls) if f.init}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {what} setting(s): {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what} settings: {exc}") from None


@dataclass
class PipelineConfig:
    """Everything one pipeline run needs, built from a flat config dict."""

    flat: dict
    seed: int = 0
    link: LinkConfig = field(default_factory=LinkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    score_sigma: float = 0.5
    eval_theta: float = 0.5
    iou_thresholds: tuple[float, ...] = (0.25, 0.5, 0.75)
    train_videos: int = 4

    @classmethod
    def from_flat(cls, flat: dict, seed: int | None = None) -> "PipelineConfig":
        flat = dict(flat)
        if seed is not None:
            flat["seed"] = seed
        seed = int(flat.get("seed", 0))
        score = section(flat, "score")
        sigma = score.pop("sigma", 0.5)
        ev = section(flat, "eval")
        thresholds = ev.get("iou_thresholds", (0.25, 0.5, 0.75))
        if not isinstance(thresholds, tuple):
            thresholds = (thresholds,)
        sim = section(flat, "sim")
        return cls(
            flat=flat,
            seed=seed,
            link=_build(LinkConfig, section(flat, "link"), "link"),
            train=_build(TrainConfig, section(flat, "train"), "train"),
            scoring=_build(ScoringConfig, {"no_action": sim.get("n_actions", 5), **score}, "score"),
            score_sigma=float(sigma),
            eval_theta=float(ev.get("theta", 0.5)),
            iou_thresholds=tuple(float(t) for t in thresholds),
            train_videos=int(sim.get("train_videos", 4)),
        )

    def scenario(self, seed_offset: int = 0, n_persons: int | None = None) -> ScenarioConfig:
        return scenario_from_flat(section(self.flat, "sim"), self.seed + seed_offset, n_persons)


_BUILDER_KEYS = ("category", "n_persons", "kind", "train_videos", "train_persons")


def scenario_from_flat(sim: dict, seed: int, n_persons: int | None = None) -> ScenarioConfig:
    """Scenario config from ``sim.*`` settings: explicit ``person.N.*`` entries or the category builder."""
    persons: dict[int, dict] = {}
    rest = {}
    for k, v in sim.items():
        m = re.fullmatch(r"person\.(\d+)\.(\w+)", k)
        if m:
            persons.setdefault(int(m.group(1)), {})[m.group(2)] = v
        elif k not in _BUILDER_KEYS:
            rest[k] = v
    for k in ("camera_drift", "person_score_true", "person_score_distractor"):
        if k in rest and not isinstance(rest[k], tuple):
            raise ConfigError(f"sim.{k} needs two comma-separated values")
    try:
        if persons:
            specs = []
            for i in sorted(persons):
                spec = persons[i]
                if "actions" in spec and isinstance(spec["actions"], tuple):
                    spec["actions"] = list(spec["actions"])
                specs.append(_build(PersonSpec, spec, f"sim.person.{i}"))
            return _build(ScenarioConfig, {**rest, "persons": specs, "seed": seed}, "sim")
        n = n_persons if n_persons is not None else int(sim.get("n_persons", 3))
        frames = int(rest.pop("frames", 24))
        noise = float(rest.pop("noise_sigma", 0.05))
        return category_scenario(str(sim.get("category", "mixed")), seed, n_persons=n, frames=frames,
                                 noise_sigma=noise, kind=sim.get("kind"), **rest)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sim settings: {exc}") from None

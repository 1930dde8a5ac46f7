"""Scenario configuration: INI files layered over a named profile.

Example::

    [scenario]
    profile = desk
    demand = demand1
    seed = 15000

    [control]
    controller = pi
    ttt_crit = 20000

Every key is optional; unset keys take the profile default.  The file is
validated completely before anything runs.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

CONTROLLERS = ("fixed", "feedback", "pi", "pi_cordon_queue", "rl_semi_model")
DEMANDS = ("demand1", "demand2", "custom")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    profile: str = "desk"
    rows: int = 5
    cols: int = 5
    pn: tuple[int, int, int, int] = (1, 1, 3, 3)
    link_length: float = 300.0
    gate_length: float = 600.0
    lanes: int = 2
    free_flow_speed: float = 13.9
    demand: str = "demand1"
    horizon: float = 1800.0
    clearance: int = 450
    scale: float = 2.2
    custom_range: tuple[float, float] = (0.0, 0.0)
    seed: int = 15000
    cordon_plan: tuple[int, ...] = (40, 20)
    plan: tuple[int, ...] = (30, 30)

    controller: str = "fixed"
    k_p: float = 2.0
    k_i: float = 0.5
    k_s: float = 750.0
    ttt_crit: float = 20000.0
    period: int = 60
    weights_dir: str = ""

    episodes: int = 20
    decay_episodes: int = 14
    hidden: tuple[int, ...] = (64, 64)
    learning_rate: float = 0.001
    optimizer: str = "sgd"
    gamma: float = 0.95
    batch_size: int = 64
    replay_capacity: int = 50_000
    updates_per_episode: int = 800
    target_every: int = 100
    train_seed: int = 1
    train_demand: str = "demand2"

    output_dir: str = "runs"
    source: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def duration(self) -> int:
        return int(self.horizon) + int(self.clearance)

    def resolved(self) -> dict:
        """Flat key -> value view (used for manifests)."""
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if f.name != "source"}


PROFILES: dict[str, dict] = {
    "desk": dict(optimizer="adam", episodes=40, decay_episodes=28, k_s=4500.0),
    "full": dict(rows=7, cols=7, pn=(1, 1, 5, 5), gate_length=1000.0, horizon=4800.0,
                  clearance=1200, scale=1.0, ttt_crit=17000.0, hidden=(400, 400, 400, 400),
                  episodes=70, decay_episodes=50),
}

SECTIONS = {
    "scenario": ("profile", "rows", "cols", "pn", "link_length", "gate_length", "lanes",
                 "free_flow_speed", "demand", "horizon", "clearance", "scale",
                 "custom_range", "seed", "cordon_plan", "plan"),
    "control": ("controller", "k_p", "k_i", "k_s", "ttt_crit", "period", "weights_dir"),
    "training": ("episodes", "decay_episodes", "hidden", "learning_rate", "optimizer", "gamma",
                 "batch_size", "replay_capacity", "updates_per_episode", "target_every",
                 "train_seed", "train_demand"),
    "output": ("output_dir",),
}


def _field_types() -> dict[str, object]:
    return {f.name: f.default for f in dataclasses.fields(ScenarioConfig)}


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    if isinstance(default, tuple):
        elem = type(default[0]) if default else float
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(elem(p) for p in parts)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if current == section and not key:
                return no
        elif current == section and s.split("=", 1)[0].strip() == key:
            return no
    return None


def profile_config(name: str = "desk", **overrides) -> ScenarioConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r} (expected one of {sorted(PROFILES)})")
    cfg = ScenarioConfig(profile=name, **PROFILES[name])
    cfg = dataclasses.replace(cfg, **overrides)
    validate(cfg)
    return cfg


def load_config(path: str | Path, **overrides) -> ScenarioConfig:
    """Parse and validate an INI scenario file; errors carry file:line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    types = _field_types()
    values: dict[str, object] = {}
    where: dict[str, str] = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}:{_line_of(text, section, '') or '?'}: unknown section [{section}]")
        for key, raw in cp.items(section):
            loc = f"{path}:{_line_of(text, section, key) or '?'}"
            if key not in SECTIONS[section]:
                raise ConfigError(f"{loc}: unknown key {key!r} in [{section}]")
            try:
                values[key] = _parse_value(key, raw, types[key])
            except ValueError:
                raise ConfigError(f"{loc}: bad value {raw!r} for {key}") from None
            where[key] = loc
    profile = values.pop("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"{where.get('profile', path)}: unknown profile {profile!r}")
    base = dict(PROFILES[profile])
    base.update(values)
    base.update(overrides)
    cfg = ScenarioConfig(profile=profile, **base)
    cfg.source = where
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    def fail(key, msg):
        loc = cfg.source.get(key, "config") if cfg.source else "config"
        raise ConfigError(f"{loc}: {key}: {msg}")

    if cfg.rows < 3 or cfg.cols < 3:
        fail("rows", "grid needs at least 3x3 nodes")
    if len(cfg.pn) != 4:
        fail("pn", "expected row0, col0, n_rows, n_cols")
    r0, c0, nr, nc = cfg.pn
    if nr < 1 or nc < 1 or r0 < 1 or c0 < 1 or r0 + nr > cfg.rows - 1 or c0 + nc > cfg.cols - 1:
        fail("pn", f"{cfg.pn} must lie strictly inside a {cfg.rows}x{cfg.cols} grid")
    for key in ("link_length", "gate_length", "free_flow_speed", "horizon", "scale"):
        if not getattr(cfg, key) > 0:
            fail(key, "must be positive")
    if cfg.lanes < 1:
        fail("lanes", "must be at least 1")
    if cfg.clearance < 0:
        fail("clearance", "must be non-negative")
    if cfg.demand not in DEMANDS:
        fail("demand", f"expected one of {DEMANDS}")
    if cfg.train_demand not in DEMANDS:
        fail("train_demand", f"expected one of {DEMANDS}")
    lo, hi = cfg.custom_range if len(cfg.custom_range) == 2 else (1, 0)
    if lo < 0 or hi < lo:
        fail("custom_range", "expected 0 <= low <= high")
    if cfg.controller not in CONTROLLERS:
        fail("controller", f"expected one of {CONTROLLERS}")
    for key in ("k_p", "k_i", "k_s", "ttt_crit", "learning_rate"):
        if not getattr(cfg, key) > 0:
            fail(key, "must be positive")
    if cfg.period < 1:
        fail("period", "must be at least 1 s")
    if not 0 <= cfg.gamma <= 1:
        fail("gamma", "must lie in [0, 1]")
    if cfg.optimizer not in ("sgd", "adam"):
        fail("optimizer", "expected sgd or adam")
    if not cfg.hidden or min(cfg.hidden) < 1:
        fail("hidden", "need at least one positive layer width")
    for key in ("batch_size", "replay_capacity", "target_every"):
        if getattr(cfg, key) < 1:
            fail(key, "must be at least 1")
    for key in ("episodes", "updates_per_episode", "decay_episodes"):
        if getattr(cfg, key) < 0:
            fail(key, "must be non-negative")
    for key in ("plan", "cordon_plan"):
        if len(getattr(cfg, key)) != 2 or min(getattr(cfg, key)) < 1:
            fail(key, "expected two positive green times")
    if cfg.controller == "rl_semi_model":
        if not cfg.weights_dir:
            fail("weights_dir", "required for rl_semi_model")
        if not Path(cfg.weights_dir).is_dir():
            fail("weights_dir", f"{cfg.weights_dir} does not exist")

"""Flat ``key = value`` run configuration.

One key per line, ``#`` starts a comment. Units live in the key names;
angles are written in degrees and converted to radians on load. Keys that
are absent take the published parameter values where they exist and the
documented defaults below otherwise.

Example::

    # tighter NMAC radius, cheaper deviations
    d_nmac_m = 150
    c_dev = 50
    lambda = 3160
    trl_actions_m = 152.4, 228.6, 304.8
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .adp import SolverConfig
from .features import FeatureConfig
from .mdp import DIRECT, TRL, ScenarioConfig
from .trl import TrlConfig

SCALES = ("desk", "paper")


class ConfigError(ValueError):
    """Malformed file, unknown key or out-of-range value."""


def _deg(v: float) -> float:
    return math.radians(v)


def _to_deg(v: float) -> float:
    return math.degrees(v)


# file key -> (field, kind, description)
_SCENARIO_KEYS = {
    "own_speed_mps": ("own_speed", "float", "own UAV speed"),
    "intruder_speed_mps": ("intruder_speed", "float", "intruder speed"),
    "max_turn_rate_deg_s": ("max_turn_rate", "deg", "own UAV turn-rate limit"),
    "sigma_turn_deg_s": ("sigma_turn", "deg", "intruder turn-rate noise standard deviation"),
    "d_nmac_m": ("d_nmac", "float", "NMAC radius"),
    "d_goal_m": ("d_goal", "float", "goal region radius"),
    "dt_s": ("dt", "float", "decision step"),
    "max_steps": ("max_steps", "int", "episode step limit"),
    "c_step": ("c_step", "float", "per-step cost"),
    "r_goal": ("r_goal", "float", "goal reward"),
    "c_dev": ("c_dev", "float", "one-time deviation cost"),
    "lambda": ("lam", "float", "NMAC penalty"),
    "eps_dev_rad": ("eps_dev", "float", "heading tolerance for counting a deviation"),
    "spawn_heading_offset_deg": ("spawn_heading_offset", "deg", "max intruder heading offset from the center bearing"),
}
_PAIR_KEYS = {
    # file key -> (field, index, doc)
    "goal_x_m": ("goal", 0, "goal position x"),
    "goal_y_m": ("goal", 1, "goal position y"),
    "own_x_m": ("own_start", 0, "own start x"),
    "own_y_m": ("own_start", 1, "own start y"),
    "own_heading_deg": ("own_start", 2, "own start heading"),
    "spawn_center_x_m": ("spawn_center", 0, "intruder spawn center x"),
    "spawn_center_y_m": ("spawn_center", 1, "intruder spawn center y"),
    "spawn_radius_min_m": ("spawn_radius", 0, "min spawn distance from center"),
    "spawn_radius_max_m": ("spawn_radius", 1, "max spawn distance from center"),
    "box_x_min_m": ("box_x", 0, "training box x lower bound"),
    "box_x_max_m": ("box_x", 1, "training box x upper bound"),
    "box_y_min_m": ("box_y", 0, "training box y lower bound"),
    "box_y_max_m": ("box_y", 1, "training box y upper bound"),
}
_FEATURE_KEYS = {
    "grid_n_distance": ("n_distance", "int"),
    "grid_max_distance_m": ("max_distance", "float"),
    "grid_n_bearing": ("n_bearing", "int"),
    "grid_n_rel_heading": ("n_rel_heading", "int"),
    "grid_n_goal_distance": ("n_goal_distance", "int"),
    "grid_max_goal_distance_m": ("max_goal_distance", "float"),
    "grid_n_goal_bearing": ("n_goal_bearing", "int"),
}
_SOLVER_KEYS = {
    "n_state": "int",
    "n_state_direct": "int",
    "n_ev": "int",
    "n_vi": "int",
    "n_q": "int",
    "ridge": "float",
    "gamma": "float",
    "seed": "int",
}
_RUN_KEYS = {
    "n_unfiltered": "int",
    "n_filtered": "int",
    "scenario_seed": "int",
    "workers": "int",
    "policy_stage_reward": "int",
}
_LIST_KEYS = ("trl_actions_m", "direct_actions_deg_s")
_OTHER_KEYS = ("trl_n_headings",)

# pair fields whose third entry is an angle
_ANGLE_PAIRS = {("own_start", 2)}

VALID_KEYS = tuple(sorted(
    list(_SCENARIO_KEYS) + list(_PAIR_KEYS) + list(_FEATURE_KEYS) + list(_SOLVER_KEYS)
    + list(_RUN_KEYS) + list(_LIST_KEYS) + list(_OTHER_KEYS)
))

# sizing presets; "paper" reproduces the published sample counts
SCALE_PRESETS = {
    "paper": {"n_state": 10000, "n_state_direct": 50000, "n_vi": 35, "n_q": 50000,
              "n_unfiltered": 10000, "n_filtered": 10000},
    "desk": {"n_state": 4000, "n_state_direct": 4000, "n_vi": 20, "n_q": 10000,
             "n_unfiltered": 2000, "n_filtered": 2000},
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs: encounter model, solver sizing and evaluation sizing."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    n_state_direct: int = 50000
    n_unfiltered: int = 10000
    n_filtered: int = 10000
    scenario_seed: int = 0
    workers: int = 1
    trl_actions: tuple[float, ...] | None = None
    direct_actions: tuple[float, ...] | None = None
    # add the immediate reward to post-decision scores when acting
    policy_stage_reward: int = 1

    def solver_for(self, family_mode: str) -> SolverConfig:
        """Solver settings for one control mode (the direct variant has its own sample count)."""
        if family_mode == DIRECT:
            return self.solver.with_(mode=DIRECT, n_state=self.n_state_direct, action_set=self.direct_actions)
        return self.solver.with_(mode=TRL, action_set=self.trl_actions)

    def actions(self, family_mode: str) -> tuple[float, ...]:
        return self.solver_for(family_mode).actions(self.scenario)

    def snapshot(self) -> dict:
        """File-unit key/value view of this configuration (round-trips through ``parse_config``)."""
        s = self.scenario
        out: dict[str, Any] = {}
        for key, (name, kind, _) in _SCENARIO_KEYS.items():
            v = getattr(s, name)
            out[key] = _to_deg(v) if kind == "deg" else v
        for key, (name, i, _) in _PAIR_KEYS.items():
            v = getattr(s, name)[i]
            out[key] = _to_deg(v) if (name, i) in _ANGLE_PAIRS else v
        for key, (name, _) in _FEATURE_KEYS.items():
            out[key] = getattr(s.features, name)
        out["trl_n_headings"] = s.trl.n_headings
        for key in _SOLVER_KEYS:
            out[key] = self.n_state_direct if key == "n_state_direct" else getattr(self.solver, key)
        for key in _RUN_KEYS:
            out[key] = getattr(self, key)
        out["trl_actions_m"] = list(self.actions(TRL))
        out["direct_actions_deg_s"] = [_to_deg(r) for r in self.actions(DIRECT)]
        return dict(sorted(out.items()))


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Split a flat config document into raw string values."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _number(key: str, value: Any, kind: str):
    try:
        if kind == "int":
            if isinstance(value, str):
                f = float(value)
                if not f.is_integer():
                    raise ValueError
                return int(f)
            if float(value) != int(value):
                raise ValueError
            return int(value)
        f = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {'an integer' if kind == 'int' else 'a number'}, got {value!r}") from None
    if not math.isfinite(f):
        raise ConfigError(f"{key}: value must be finite, got {value!r}")
    return f


def _number_list(key: str, value: Any) -> tuple[float, ...]:
    items = value.split(",") if isinstance(value, str) else list(value)
    items = [v for v in (i.strip() if isinstance(i, str) else i for i in items) if v != ""]
    if not items:
        raise ConfigError(f"{key}: expected a comma-separated list of numbers")
    return tuple(_number(key, v, "float") for v in items)


def build_config(values: dict[str, Any], scale: str = "paper") -> RunConfig:
    """Assemble a validated ``RunConfig`` from file-unit values (strings or numbers)."""
    if scale not in SCALES:
        raise ConfigError(f"scale must be one of {SCALES}, got {scale!r}")
    unknown = sorted(set(values) - set(VALID_KEYS))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}; valid keys are: {', '.join(VALID_KEYS)}")
    merged = {**SCALE_PRESETS[scale], **values}

    base = ScenarioConfig()
    scen: dict[str, Any] = {}
    for key, (name, kind, _) in _SCENARIO_KEYS.items():
        if key in merged:
            v = _number(key, merged[key], "int" if kind == "int" else "float")
            scen[name] = _deg(v) if kind == "deg" else v
    pairs = {name: list(getattr(base, name)) for name, _, _ in _PAIR_KEYS.values()}
    for key, (name, i, _) in _PAIR_KEYS.items():
        if key in merged:
            v = _number(key, merged[key], "float")
            pairs[name][i] = _deg(v) if (name, i) in _ANGLE_PAIRS else v
    scen.update({name: tuple(v) for name, v in pairs.items()})
    feat = {}
    for key, (name, kind) in _FEATURE_KEYS.items():
        if key in merged:
            feat[name] = _number(key, merged[key], kind)
    solver_kw = {}
    for key, kind in _SOLVER_KEYS.items():
        if key in merged and key != "n_state_direct":
            solver_kw[key] = _number(key, merged[key], kind)
    run_kw = {key: _number(key, merged[key], kind) for key, kind in _RUN_KEYS.items() if key in merged}
    if "n_state_direct" in merged:
        run_kw["n_state_direct"] = _number("n_state_direct", merged["n_state_direct"], "int")
    if "trl_actions_m" in merged:
        run_kw["trl_actions"] = _number_list("trl_actions_m", merged["trl_actions_m"])
    if "direct_actions_deg_s" in merged:
        run_kw["direct_actions"] = tuple(_deg(v) for v in _number_list("direct_actions_deg_s", merged["direct_actions_deg_s"]))

    try:
        if "trl_n_headings" in merged:
            scen["trl"] = TrlConfig(_number("trl_n_headings", merged["trl_n_headings"], "int"))
        scen["features"] = FeatureConfig(**feat)
        scenario = base.with_(**scen)
        solver = SolverConfig(**solver_kw)
        cfg = RunConfig(scenario=scenario, solver=solver, **run_kw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from None
    _validate_run(cfg)
    return cfg


def _validate_run(cfg: RunConfig) -> None:
    for name in ("n_state_direct", "n_unfiltered", "n_filtered", "workers"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"invalid configuration: {name} must be >= 1")
    if cfg.policy_stage_reward not in (0, 1):
        raise ConfigError("invalid configuration: policy_stage_reward must be 0 or 1")
    if cfg.scenario_seed < 0 or cfg.solver.seed < 0:
        raise ConfigError("invalid configuration: seeds must be >= 0")
    if cfg.trl_actions is not None and any(d < 0 for d in cfg.trl_actions):
        raise ConfigError("invalid configuration: trl_actions_m entries must be >= 0")


def load_config(path: str | Path | None, scale: str = "paper", overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read a config file (``None`` means all defaults) and apply command-line overrides."""
    values: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
        values = parse_text(text, str(p))
    values.update(overrides or {})
    return build_config(values, scale)


def format_config(cfg: RunConfig) -> str:
    """Render a config back into the flat file format."""
    lines = []
    for key, value in cfg.snapshot().items():
        if isinstance(value, list):
            value = ", ".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

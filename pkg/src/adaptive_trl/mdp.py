"""The encounter MDP: reward, transition, post-decision map and its completion.

Event semantics: a non-terminal state inside the goal region or the NMAC
disc is an ordinary state that earns its stage reward (goal bonus or NMAC
penalty); its successor is the absorbing terminal state. Terminal states
have zero reward and zero features.

Two control modes share this module. In ``"trl"`` mode the action is the
separation parameter D fed to the resolution logic; in ``"direct"`` mode the
action is the own turn rate itself (clamped to the turn limit).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .features import FeatureConfig
from .geometry import VehicleParams, VehicleState, atan2, step_arrays, wrap_angle
from .states import EncounterState, PostDecisionState, StateBatch, as_batch
from .trl import TrlConfig, controller_arrays, resolve_arrays

TRL = "trl"
DIRECT = "direct"
MODES = (TRL, DIRECT)

FT = 0.3048


@dataclass(frozen=True)
class ScenarioConfig:
    own_speed: float = 30.0
    intruder_speed: float = 60.0
    max_turn_rate: float = math.radians(18.7)
    sigma_turn: float = math.radians(10.0)
    d_nmac: float = 500 * FT
    d_goal: float = 100.0
    goal: tuple[float, float] = (1000.0, 0.0)
    dt: float = 1.0
    max_steps: int = 100
    c_step: float = 1.0
    r_goal: float = 100.0
    c_dev: float = 100.0
    lam: float = 1000.0
    eps_dev: float = 1e-6
    own_start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    spawn_center: tuple[float, float] = (500.0, 500.0)
    spawn_radius: tuple[float, float] = (800.0, 1500.0)
    spawn_heading_offset: float = math.radians(135.0)
    box_x: tuple[float, float] = (-200.0, 1200.0)
    box_y: tuple[float, float] = (-800.0, 800.0)
    trl: TrlConfig = field(default_factory=TrlConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        for name in ("own_speed", "intruder_speed", "max_turn_rate", "d_nmac", "d_goal", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("sigma_turn", "c_step", "r_goal", "c_dev", "lam", "eps_dev"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        lo, hi = self.spawn_radius
        if not 0 <= lo <= hi:
            raise ValueError("spawn_radius must satisfy 0 <= min <= max")
        if self.box_x[0] >= self.box_x[1] or self.box_y[0] >= self.box_y[1]:
            raise ValueError("operating box bounds must be increasing")

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    @property
    def own_params(self) -> VehicleParams:
        return VehicleParams(self.own_speed, self.max_turn_rate)

    @property
    def intruder_params(self) -> VehicleParams:
        return VehicleParams(self.intruder_speed)

    def trl_actions(self) -> tuple[float, ...]:
        return tuple(m * self.d_nmac for m in (1.0, 1.5, 2.0, 3.0, 4.0))

    def direct_actions(self) -> tuple[float, ...]:
        r = self.max_turn_rate
        return (-r, -r / 2, 0.0, r / 2, r)

    def own_initial(self) -> VehicleState:
        return VehicleState(*self.own_start)


# --- batch primitives -------------------------------------------------------

def goal_heading_arrays(ox, oy, cfg: ScenarioConfig) -> np.ndarray:
    return atan2(cfg.goal[1] - np.asarray(oy, dtype=float), cfg.goal[0] - np.asarray(ox, dtype=float))


def nmac_mask(b: StateBatch, cfg: ScenarioConfig) -> np.ndarray:
    dx = b.ox - b.ix
    dy = b.oy - b.iy
    return np.sqrt(dx * dx + dy * dy) <= cfg.d_nmac


def goal_mask(b: StateBatch, cfg: ScenarioConfig) -> np.ndarray:
    dx = b.ox - cfg.goal[0]
    dy = b.oy - cfg.goal[1]
    return np.sqrt(dx * dx + dy * dy) <= cfg.d_goal


def event_mask(b: StateBatch, cfg: ScenarioConfig) -> np.ndarray:
    """Non-terminal states whose successor is the terminal state."""
    return ~b.terminal & (nmac_mask(b, cfg) | goal_mask(b, cfg))


def own_update(b: StateBatch, action, cfg: ScenarioConfig, mode: str = TRL):
    """Deterministic own-vehicle step for an action (scalar or per-state array).

    Returns ``(ox, oy, opsi, deviates)``. ``deviates`` is 1 where dev is
    still false and the commanded heading leaves the direct-to-goal heading.
    """
    n = len(b)
    action = np.ascontiguousarray(np.broadcast_to(np.asarray(action, dtype=float), (n,)))
    goal_heading = goal_heading_arrays(b.ox, b.oy, cfg)
    if mode == TRL:
        target, _ = resolve_arrays(
            b.ox, b.oy, b.opsi, b.ix, b.iy, b.ipsi, goal_heading, action,
            cfg.own_speed, cfg.intruder_speed, cfg.trl.n_headings,
        )
        rate = controller_arrays(b.opsi, target, cfg.max_turn_rate, cfg.dt)
    elif mode == DIRECT:
        rate = np.clip(action, -cfg.max_turn_rate, cfg.max_turn_rate)
        target = np.asarray(wrap_angle(b.opsi + rate * cfg.dt), dtype=float)
    else:
        raise ValueError(f"unknown control mode {mode!r}")
    deviates = ~b.dev & (np.abs(wrap_angle(target - goal_heading)) > cfg.eps_dev)
    ox, oy, opsi = step_arrays(b.ox, b.oy, b.opsi, cfg.own_speed, rate, cfg.dt)
    return ox, oy, opsi, deviates


def deviates_batch(b: StateBatch, action, cfg: ScenarioConfig, mode: str = TRL) -> np.ndarray:
    return own_update(b, action, cfg, mode)[3] & ~b.terminal


def reward_batch(b: StateBatch, action, cfg: ScenarioConfig, mode: str = TRL, deviates=None) -> np.ndarray:
    if deviates is None:
        deviates = deviates_batch(b, action, cfg, mode)
    r = (
        -cfg.c_step
        + cfg.r_goal * goal_mask(b, cfg)
        - cfg.c_dev * deviates
        - cfg.lam * nmac_mask(b, cfg)
    )
    return np.where(b.terminal, 0.0, r)


def post_decision_batch(b: StateBatch, action, cfg: ScenarioConfig, mode: str = TRL, own=None) -> StateBatch:
    """Post-decision batch; rows from terminal or event states are terminal."""
    ox, oy, opsi, deviates = own if own is not None else own_update(b, action, cfg, mode)
    term = b.terminal
    return StateBatch(
        ox=np.where(term, b.ox, ox),
        oy=np.where(term, b.oy, oy),
        opsi=np.where(term, b.opsi, opsi),
        ix=b.ix,
        iy=b.iy,
        ipsi=b.ipsi,
        dev=np.where(term, b.dev, b.dev | deviates),
        terminal=term | event_mask(b, cfg),
    )


def complete_batch(q: StateBatch, w, cfg: ScenarioConfig) -> StateBatch:
    """Advance the intruder of a post-decision batch by one noisy step."""
    ix, iy, ipsi = step_arrays(q.ix, q.iy, q.ipsi, cfg.intruder_speed, w, cfg.dt)
    term = q.terminal
    return q.replace(
        ix=np.where(term, q.ix, ix), iy=np.where(term, q.iy, iy), ipsi=np.where(term, q.ipsi, ipsi)
    )


def transition_batch(b: StateBatch, action, w, cfg: ScenarioConfig, mode: str = TRL) -> StateBatch:
    return complete_batch(post_decision_batch(b, action, cfg, mode), w, cfg)


# --- scalar API -------------------------------------------------------------

def is_nmac(s: EncounterState, cfg: ScenarioConfig) -> bool:
    return bool(nmac_mask(as_batch(s), cfg)[0])


def in_goal(own: VehicleState, cfg: ScenarioConfig) -> bool:
    return math.hypot(own.x - cfg.goal[0], own.y - cfg.goal[1]) <= cfg.d_goal


def goal_heading(own: VehicleState, cfg: ScenarioConfig) -> float:
    return float(goal_heading_arrays([own.x], [own.y], cfg)[0])


def deviates(s: EncounterState, action: float, cfg: ScenarioConfig, mode: str = TRL) -> int:
    return int(deviates_batch(as_batch(s), action, cfg, mode)[0])


def reward(s: EncounterState, action: float, cfg: ScenarioConfig, mode: str = TRL) -> float:
    return float(reward_batch(as_batch(s), action, cfg, mode)[0])


def transition(s: EncounterState, action: float, w: float, cfg: ScenarioConfig, mode: str = TRL) -> EncounterState:
    if s.terminal:
        return s
    return transition_batch(as_batch(s), action, w, cfg, mode).state(0)


def post_decision(s: EncounterState, action: float, cfg: ScenarioConfig, mode: str = TRL) -> PostDecisionState:
    if s.terminal:
        raise ValueError("post-decision state is undefined for a terminal state")
    return post_decision_batch(as_batch(s), action, cfg, mode).post_decision(0)


def complete_post_decision(q: PostDecisionState, w: float, cfg: ScenarioConfig) -> EncounterState:
    return complete_batch(as_batch(q), w, cfg).state(0)


def episode_reward_bounds(cfg: ScenarioConfig) -> tuple[float, float]:
    return (-(cfg.max_steps * cfg.c_step + cfg.c_dev + cfg.lam), cfg.r_goal - cfg.c_step)

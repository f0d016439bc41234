"""Control laws, episode simulation and the evaluation protocol."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from . import mdp
from .adp import SolverConfig, SolverError, solve, stream
from .features import value_batch
from .geometry import VehicleState, atan2, wrap_angle
from .mdp import ScenarioConfig
from .states import EncounterState, StateBatch, as_batch

# post-decision values within this margin are ties
ACTION_TIE_EPS = 1e-9

OUTCOME_RUNNING, OUTCOME_GOAL, OUTCOME_NMAC, OUTCOME_TIMEOUT = 0, 1, 2, 3
OUTCOME_NAMES = {OUTCOME_GOAL: "goal", OUTCOME_NMAC: "nmac", OUTCOME_TIMEOUT: "timeout"}

# scenario streams
_UNFILTERED_STREAM = 10
_FILTERED_STREAM = 11


# --- policies ---------------------------------------------------------------

@dataclass(frozen=True)
class StaticTrl:
    d_bar: float
    mode = mdp.TRL

    def act_batch(self, b: StateBatch, cfg: ScenarioConfig) -> np.ndarray:
        return np.full(len(b), float(self.d_bar))


@dataclass(frozen=True)
class Nominal:
    """Holds its heading; the own UAV starts on the direct-to-goal course."""

    mode = mdp.DIRECT

    def act_batch(self, b: StateBatch, cfg: ScenarioConfig) -> np.ndarray:
        return np.zeros(len(b))


def _argmax_preferred(values: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-row argmax where ``values`` columns are already in preference order."""
    best = values.max(axis=1, keepdims=True)
    pick = np.argmax(values >= best - ACTION_TIE_EPS, axis=1)
    return actions[pick]


@dataclass(frozen=True, eq=False)
class _PostDecisionPolicy:
    """Greedy with respect to a post-decision value function.

    The score of an action is ``R(s, a) + V_q(g(s, a))``, which equals the
    state-action value ``Q(s, a)`` when ``V_q`` is exact. The deviation flag
    is not a feature, so without the immediate reward the one-time deviation
    cost would be invisible when acting; ``stage_reward=False`` drops it and
    scores by ``V_q(g(s, a))`` alone.
    """

    theta_q: np.ndarray
    action_set: tuple[float, ...]
    stage_reward: bool = True

    def preference_order(self) -> np.ndarray:
        raise NotImplementedError

    def action_values(self, b: StateBatch, cfg: ScenarioConfig) -> np.ndarray:
        """Scores of shape ``(len(b), n_actions)``, columns in preference order."""
        actions = self.preference_order()
        values = np.empty((len(b), actions.size))
        for j, a in enumerate(actions):
            own = mdp.own_update(b, a, cfg, self.mode)
            q = mdp.post_decision_batch(b, a, cfg, self.mode, own=own)
            values[:, j] = value_batch(q, self.theta_q, cfg)
            if self.stage_reward:
                values[:, j] += mdp.reward_batch(b, a, cfg, self.mode, deviates=own[3] & ~b.terminal)
        return values

    def act_batch(self, b: StateBatch, cfg: ScenarioConfig) -> np.ndarray:
        return _argmax_preferred(self.action_values(b, cfg), self.preference_order())


@dataclass(frozen=True, eq=False)
class OptimizedTrl(_PostDecisionPolicy):
    """Separation parameter chosen by the post-decision value; ties go to the smallest D."""

    mode = mdp.TRL

    def preference_order(self) -> np.ndarray:
        return np.array(sorted(self.action_set), dtype=float)


@dataclass(frozen=True, eq=False)
class DirectTurn(_PostDecisionPolicy):
    """Turn rate chosen by the post-decision value; ties prefer gentler turns, left of right."""

    mode = mdp.DIRECT

    def preference_order(self) -> np.ndarray:
        return np.array(sorted(self.action_set, key=lambda r: (abs(r), r)), dtype=float)


Policy = Union[StaticTrl, OptimizedTrl, DirectTurn, Nominal]


def act(policy: Policy, s: EncounterState, cfg: ScenarioConfig) -> float:
    if s.terminal:
        raise ValueError("no action is defined at a terminal state")
    return float(policy.act_batch(as_batch(s), cfg)[0])


# --- scenarios --------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    intruder_initial: VehicleState
    noise_seed: int

    def noise(self, cfg: ScenarioConfig) -> np.ndarray:
        """Per-step intruder turn-rate disturbances, index t used on step t."""
        rng = np.random.default_rng(self.noise_seed)
        return rng.standard_normal(cfg.max_steps) * cfg.sigma_turn


def sample_scenarios(rng: np.random.Generator, cfg: ScenarioConfig, n: int) -> list[Scenario]:
    """Intruder spawned on an annulus around the encounter center, heading roughly inward.

    Draws whose start is already a goal or NMAC state are discarded and
    redrawn, so every episode begins with a real decision.
    """
    cx, cy = cfg.spawn_center
    own = cfg.own_initial()
    start_in_goal = math.hypot(own.x - cfg.goal[0], own.y - cfg.goal[1]) <= cfg.d_goal
    if start_in_goal:
        raise ValueError("own start lies inside the goal region")
    out: list[Scenario] = []
    while len(out) < n:
        k = n - len(out)
        radius = rng.uniform(*cfg.spawn_radius, size=k)
        angle = rng.uniform(0.0, 2 * math.pi, size=k)
        offset = rng.uniform(-cfg.spawn_heading_offset, cfg.spawn_heading_offset, size=k)
        seeds = rng.integers(0, 2**63 - 1, size=k, dtype=np.int64)
        x = cx + radius * np.cos(angle)
        y = cy + radius * np.sin(angle)
        heading = wrap_angle(atan2(cy - y, cx - x) + offset)
        ok = np.hypot(x - own.x, y - own.y) > cfg.d_nmac
        out.extend(
            Scenario(VehicleState(float(x[i]), float(y[i]), float(heading[i])), int(seeds[i]))
            for i in np.flatnonzero(ok)
        )
    return out


def sample_scenario(rng: np.random.Generator, cfg: ScenarioConfig) -> Scenario:
    return sample_scenarios(rng, cfg, 1)[0]


# --- simulation -------------------------------------------------------------

@dataclass
class EpisodeBatchResult:
    outcome: np.ndarray
    steps: np.ndarray
    total_reward: np.ndarray
    deviated: np.ndarray
    min_separation: np.ndarray
    noise_consumed: np.ndarray
    final: StateBatch


@dataclass(frozen=True)
class EpisodeRecord:
    outcome: str
    steps: int
    total_reward: float
    deviated: bool
    min_separation: float
    noise_consumed: int
    final_state: EncounterState


def initial_batch(scenarios: Sequence[Scenario], cfg: ScenarioConfig) -> StateBatch:
    n = len(scenarios)
    own = cfg.own_initial()
    return StateBatch(
        ox=np.full(n, own.x), oy=np.full(n, own.y), opsi=np.full(n, own.psi),
        ix=[s.intruder_initial.x for s in scenarios],
        iy=[s.intruder_initial.y for s in scenarios],
        ipsi=[s.intruder_initial.psi for s in scenarios],
        dev=np.zeros(n, dtype=bool), terminal=np.zeros(n, dtype=bool),
    )


def noise_matrix(scenarios: Sequence[Scenario], cfg: ScenarioConfig) -> np.ndarray:
    if not scenarios:
        return np.zeros((0, cfg.max_steps))
    return np.stack([s.noise(cfg) for s in scenarios])


def simulate_batch(
    policy: Policy,
    scenarios: Sequence[Scenario],
    cfg: ScenarioConfig,
    noise: np.ndarray | None = None,
) -> EpisodeBatchResult:
    """Roll every scenario to its end. Each episode's result depends only on its own row.

    Step t: the reward of s_t is collected; an event state (goal or NMAC)
    ends the episode, otherwise s_{t+1} = F(s_t, a_t, w_t). Episodes still
    running after ``max_steps`` rewards are timeouts.
    """
    n = len(scenarios)
    if noise is None:
        noise = noise_matrix(scenarios, cfg)
    state = initial_batch(scenarios, cfg)
    outcome = np.zeros(n, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    total = np.zeros(n)
    deviated = np.zeros(n, dtype=bool)
    consumed = np.zeros(n, dtype=np.int64)
    min_sep = np.full(n, np.inf)
    active = np.arange(n)
    for t in range(cfg.max_steps):
        if active.size == 0:
            break
        b = state.take(active)
        min_sep[active] = np.minimum(min_sep[active], np.hypot(b.ox - b.ix, b.oy - b.iy))
        action = policy.act_batch(b, cfg)
        own = mdp.own_update(b, action, cfg, policy.mode)
        total[active] += mdp.reward_batch(b, action, cfg, policy.mode, deviates=own[3])
        deviated[active] |= own[3]
        nmac = mdp.nmac_mask(b, cfg)
        goal = mdp.goal_mask(b, cfg)
        ended = nmac | goal
        outcome[active[ended]] = np.where(nmac[ended], OUTCOME_NMAC, OUTCOME_GOAL)
        steps[active[ended]] = t
        go = ~ended
        moving = active[go]
        bm = b.take(go)
        own_m = tuple(arr[go] for arr in own)
        q = mdp.post_decision_batch(bm, None, cfg, policy.mode, own=own_m)
        nxt = mdp.complete_batch(q, np.ascontiguousarray(noise[moving, t]), cfg)
        consumed[moving] += 1
        for name in ("ox", "oy", "opsi", "ix", "iy", "ipsi", "dev"):
            getattr(state, name)[moving] = getattr(nxt, name)
        state.terminal[active[ended]] = True
        active = moving
    outcome[active] = OUTCOME_TIMEOUT
    steps[active] = cfg.max_steps
    return EpisodeBatchResult(outcome, steps, total, deviated, min_sep, consumed, state)


def simulate_episode(policy: Policy, scenario: Scenario, cfg: ScenarioConfig) -> EpisodeRecord:
    r = simulate_batch(policy, [scenario], cfg)
    return EpisodeRecord(
        outcome=OUTCOME_NAMES[int(r.outcome[0])],
        steps=int(r.steps[0]),
        total_reward=float(r.total_reward[0]),
        deviated=bool(r.deviated[0]),
        min_separation=float(r.min_separation[0]),
        noise_consumed=int(r.noise_consumed[0]),
        final_state=r.final.state(0),
    )


# --- evaluation -------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    n_episodes: int
    n_deviations: int
    n_nmacs: int
    n_goals: int
    n_timeouts: int
    mean_total_reward: float
    mean_steps: float

    @property
    def risk_ratio(self) -> float:
        """NMAC fraction; a risk ratio when the scenarios are NMAC-filtered."""
        return self.n_nmacs / self.n_episodes if self.n_episodes else float("nan")

    @property
    def deviation_rate(self) -> float:
        return self.n_deviations / self.n_episodes if self.n_episodes else float("nan")

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["risk_ratio"] = self.risk_ratio
        return d


def report_from(result: EpisodeBatchResult) -> EvalReport:
    n = int(result.outcome.size)
    return EvalReport(
        n_episodes=n,
        n_deviations=int(result.deviated.sum()),
        n_nmacs=int((result.outcome == OUTCOME_NMAC).sum()),
        n_goals=int((result.outcome == OUTCOME_GOAL).sum()),
        n_timeouts=int((result.outcome == OUTCOME_TIMEOUT).sum()),
        mean_total_reward=float(result.total_reward.mean()) if n else float("nan"),
        mean_steps=float(result.steps.mean()) if n else float("nan"),
    )


def evaluate(policy: Policy, scenarios: Sequence[Scenario], cfg: ScenarioConfig) -> EvalReport:
    return report_from(simulate_batch(policy, scenarios, cfg))


class FilterError(RuntimeError):
    pass


def generate_nmac_filtered_set(
    n: int,
    rng: np.random.Generator,
    cfg: ScenarioConfig,
    batch: int = 4096,
    max_attempts: int = 10_000_000,
    min_acceptance: float = 1e-3,
) -> list[Scenario]:
    """Scenarios that end in an NMAC when the own UAV flies its nominal path."""
    if n < 1:
        raise ValueError("n must be >= 1")
    kept: list[Scenario] = []
    attempts = 0
    nominal = Nominal()
    while len(kept) < n:
        if attempts >= max_attempts:
            raise FilterError(
                f"only {len(kept)} of {n} NMAC scenarios after {attempts} attempts "
                f"(acceptance {len(kept) / attempts:.2e}); check the spawn and NMAC settings"
            )
        cand = sample_scenarios(rng, cfg, batch)
        attempts += batch
        res = simulate_batch(nominal, cand, cfg)
        for s, o in zip(cand, res.outcome):
            if o == OUTCOME_NMAC and len(kept) < n:
                kept.append(s)
        if attempts >= 100 * batch and len(kept) / attempts < min_acceptance:
            raise FilterError(
                f"NMAC acceptance rate {len(kept) / attempts:.2e} is below {min_acceptance:.0e} "
                f"after {attempts} attempts; check the spawn and NMAC settings"
            )
    return kept


@dataclass
class ScenarioSets:
    unfiltered: list[Scenario]
    filtered: list[Scenario]


def build_scenario_sets(cfg: ScenarioConfig, n_unfiltered: int, n_filtered: int, seed: int) -> ScenarioSets:
    return ScenarioSets(
        unfiltered=sample_scenarios(stream(seed, _UNFILTERED_STREAM), cfg, n_unfiltered),
        filtered=generate_nmac_filtered_set(n_filtered, stream(seed, _FILTERED_STREAM), cfg),
    )


# --- Pareto sweeps ----------------------------------------------------------

STATIC = "static"
OPTIMIZED_TRL = "optimized-trl"
DIRECT_TURN = "direct"
FAMILIES = (STATIC, OPTIMIZED_TRL, DIRECT_TURN)

PAPER_PARAMS = {
    STATIC: (250.0, 300.0, 350.0, 400.0, 500.0),
    OPTIMIZED_TRL: (100.0, 316.0, 1000.0, 3160.0, 1e4, 3.16e4),
    DIRECT_TURN: (300.0, 500.0, 700.0, 1000.0, 1500.0),
}


@dataclass(frozen=True)
class ParetoPoint:
    family: str
    param: float
    deviations: int
    n_unfiltered: int
    risk_ratio: float
    n_filtered: int
    error: str | None = None

    @property
    def deviation_se(self) -> float:
        return binomial_count_se(self.deviations, self.n_unfiltered)

    @property
    def risk_ratio_se(self) -> float:
        p = self.risk_ratio
        return math.sqrt(p * (1 - p) / self.n_filtered) if self.n_filtered else float("nan")


def binomial_count_se(count: int, n: int) -> float:
    if n == 0 or not 0 <= count <= n:
        return float("nan")
    p = count / n
    return math.sqrt(n * p * (1 - p))


def train_policy(
    family: str,
    lam: float,
    cfg: ScenarioConfig,
    solver: SolverConfig,
    workers: int = 1,
    on_iteration=None,
    stage_reward: bool = True,
):
    """Solve the MDP at penalty ``lam`` and wrap the post-decision weights in a policy.

    Returns ``(policy, theta, theta_q)``.
    """
    mode = mdp.TRL if family == OPTIMIZED_TRL else mdp.DIRECT
    solver = solver.with_(mode=mode)
    cfg = cfg.with_(lam=float(lam))
    theta, theta_q = solve(cfg, solver, workers, on_iteration)
    actions = solver.actions(cfg)
    cls = OptimizedTrl if family == OPTIMIZED_TRL else DirectTurn
    return cls(theta_q=theta_q, action_set=actions, stage_reward=stage_reward), theta, theta_q


def pareto_sweep(
    family: str,
    cfg: ScenarioConfig,
    solver: SolverConfig,
    sets: ScenarioSets,
    params: Sequence[float] | None = None,
    workers: int = 1,
    policy_factory: Callable[[float], Policy] | None = None,
    stage_reward: bool = True,
) -> list[ParetoPoint]:
    """One point per parameter value, all evaluated on the same scenario sets.

    A failed solve is recorded on its point and the sweep continues.
    """
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    params = PAPER_PARAMS[family] if params is None else tuple(params)
    points = []
    for p in params:
        try:
            if policy_factory is not None:
                policy = policy_factory(p)
            elif family == STATIC:
                policy = StaticTrl(p)
            else:
                policy, _, _ = train_policy(family, p, cfg, solver, workers, stage_reward=stage_reward)
        except (SolverError, np.linalg.LinAlgError, ValueError) as exc:
            points.append(ParetoPoint(family, float(p), -1, len(sets.unfiltered), float("nan"), len(sets.filtered), str(exc)))
            continue
        dev = evaluate(policy, sets.unfiltered, cfg)
        risk = evaluate(policy, sets.filtered, cfg)
        points.append(
            ParetoPoint(family, float(p), dev.n_deviations, dev.n_episodes, risk.risk_ratio, risk.n_episodes)
        )
    return points


def deviations_at_risk(points: Sequence[ParetoPoint], target: float = 0.05):
    """Deviation count at ``target`` risk ratio by linear interpolation between adjacent points.

    Points are taken in parameter order. Returns ``(deviations, se)`` or
    ``None`` when no adjacent pair brackets the target.
    """
    pts = [p for p in points if p.error is None]
    for a, b in zip(pts, pts[1:]):
        lo, hi = sorted((a.risk_ratio, b.risk_ratio))
        if lo <= target <= hi:
            if a.risk_ratio == b.risk_ratio:
                w = 0.5
            else:
                w = (target - a.risk_ratio) / (b.risk_ratio - a.risk_ratio)
            dev = (1 - w) * a.deviations + w * b.deviations
            se = math.hypot((1 - w) * a.deviation_se, w * b.deviation_se)
            return dev, se
    return None

"""Simulation-based projected value iteration and post-decision weight extraction."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.linalg
from scipy import sparse

from . import mdp
from .features import feature_matrix, get_layout, place_intruder, value_batch
from .geometry import step_arrays
from .mdp import ScenarioConfig
from .states import EncounterState, StateBatch, as_batch

log = logging.getLogger(__name__)

# fixed work-unit size; results never depend on how chunks are spread over threads
CHUNK = 512
# rows per block in the streaming QR least-squares solve
QR_BLOCK = 4096

# RNG stream tags
_VI_STREAM = 0
_PD_STREAM = 1


class SolverError(RuntimeError):
    pass


class SingularSystemError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    n_state: int = 10000
    n_ev: int = 20
    n_vi: int = 35
    n_q: int = 50000
    ridge: float = 1e-6
    gamma: float = 1.0
    mode: str = mdp.TRL
    action_set: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("n_state", "n_ev", "n_vi", "n_q"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.mode not in mdp.MODES:
            raise ValueError(f"mode must be one of {mdp.MODES}")

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    def actions(self, cfg: ScenarioConfig) -> tuple[float, ...]:
        if self.action_set is not None:
            return tuple(self.action_set)
        return cfg.trl_actions() if self.mode == mdp.TRL else cfg.direct_actions()


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator keyed by (seed, *keys)."""
    return np.random.default_rng([int(seed), *map(int, keys)])


def sample_training_batch(cfg: ScenarioConfig, n: int, rng: np.random.Generator) -> StateBatch:
    """Own state uniform over the operating box, intruder on a random intruder-grid node."""
    grid = get_layout(cfg.features).intruder_grid
    ox = rng.uniform(*cfg.box_x, size=n)
    oy = rng.uniform(*cfg.box_y, size=n)
    opsi = rng.uniform(-math.pi, math.pi, size=n)
    dev = rng.random(n) < 0.5
    nodes = np.stack([rng.integers(0, k, size=n) for k in grid.shape], axis=1)
    coords = grid.node_coords(nodes)
    ix, iy, ipsi = place_intruder(ox, oy, opsi, coords[:, 0], coords[:, 1], coords[:, 2])
    return StateBatch(ox, oy, opsi, ix, iy, ipsi, dev, np.zeros(n, dtype=bool))


def sample_training_states(cfg: ScenarioConfig, solver: SolverConfig, rng: np.random.Generator) -> list[EncounterState]:
    return sample_training_batch(cfg, solver.n_state, rng).to_states()


def _map_chunks(fn: Callable[[slice], np.ndarray], n: int, workers: int) -> np.ndarray:
    slices = [slice(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]
    if workers <= 1 or len(slices) <= 1:
        parts = [fn(s) for s in slices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, slices))
    return np.concatenate(parts) if parts else np.zeros(0)


def _noisy_intruders(b: StateBatch, noise: np.ndarray, cfg: ScenarioConfig):
    """Intruder states after one step for every (sample, draw) pair, row-major."""
    m = noise.shape[1]
    return step_arrays(
        np.repeat(b.ix, m), np.repeat(b.iy, m), np.repeat(b.ipsi, m),
        cfg.intruder_speed, np.ascontiguousarray(noise.ravel()), cfg.dt,
    )


def _expected_value(q: StateBatch, intruders, m: int, theta, cfg: ScenarioConfig) -> np.ndarray:
    """Mean value over ``m`` completions of each post-decision row (fixed summation order)."""
    ix, iy, ipsi = intruders
    term = np.repeat(q.terminal, m)
    nxt = StateBatch(
        ox=np.repeat(q.ox, m), oy=np.repeat(q.oy, m), opsi=np.repeat(q.opsi, m),
        ix=np.where(term, np.repeat(q.ix, m), ix),
        iy=np.where(term, np.repeat(q.iy, m), iy),
        ipsi=np.where(term, np.repeat(q.ipsi, m), ipsi),
        dev=np.repeat(q.dev, m), terminal=term,
    )
    v = value_batch(nxt, theta, cfg).reshape(len(q), m)
    acc = np.zeros(len(q))
    for j in range(m):
        acc += v[:, j]
    return acc / m


def backup_batch(b: StateBatch, theta, cfg: ScenarioConfig, solver: SolverConfig, noise: np.ndarray) -> np.ndarray:
    """Sampled Bellman backup. ``noise`` has shape (n, n_ev) and is shared by every action."""
    intruders = _noisy_intruders(b, noise, cfg)
    best = np.full(len(b), -np.inf)
    for a in solver.actions(cfg):
        own = mdp.own_update(b, a, cfg, solver.mode)
        r = mdp.reward_batch(b, a, cfg, solver.mode, deviates=own[3] & ~b.terminal)
        q = mdp.post_decision_batch(b, a, cfg, solver.mode, own=own)
        ev = _expected_value(q, intruders, noise.shape[1], theta, cfg)
        best = np.maximum(best, r + solver.gamma * ev)
    return best


def backup_sample(s: EncounterState, theta, cfg: ScenarioConfig, solver: SolverConfig, rng: np.random.Generator) -> float:
    if s.terminal:
        raise ValueError("backup is undefined for a terminal state")
    noise = rng.standard_normal((1, solver.n_ev)) * cfg.sigma_turn
    return float(backup_batch(as_batch(s), theta, cfg, solver, noise)[0])


def post_decision_targets(q: StateBatch, theta, cfg: ScenarioConfig, noise: np.ndarray) -> np.ndarray:
    return _expected_value(q, _noisy_intruders(q, noise, cfg), noise.shape[1], theta, cfg)


def fit_least_squares(features, targets, ridge: float = 0.0) -> np.ndarray:
    """Ridge least squares via a streaming (block) QR factorization.

    Minimizes ``||A theta - y||^2 + ridge ||theta||^2``. ``features`` may be a
    dense array or a scipy sparse matrix. Deterministic for fixed inputs.
    """
    if sparse.issparse(features):
        A = features.tocsr()
    else:
        A = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    n, p = A.shape
    if n < 1:
        raise ValueError("need at least one sample")
    if y.shape[0] != n:
        raise ValueError("features and targets disagree on sample count")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")

    R = None
    if ridge > 0:
        R = np.hstack([math.sqrt(ridge) * np.eye(p), np.zeros((p, 1))])
    for start in range(0, n, QR_BLOCK):
        stop = min(start + QR_BLOCK, n)
        block = A[start:stop]
        block = block.toarray() if sparse.issparse(block) else np.asarray(block)
        stacked = np.hstack([block, y[start:stop, None]])
        if R is not None:
            stacked = np.vstack([R, stacked])
        R = scipy.linalg.qr(stacked, mode="r", check_finite=False)[0][: p + 1]
    rows = R.shape[0]
    if rows < p:
        raise SingularSystemError(
            f"{n} samples cannot determine {p} weights without regularization; use ridge > 0"
        )
    diag = np.abs(np.diag(R[:p, :p]))
    tol = max(n, p) * np.finfo(float).eps * diag.max() if diag.size else 0.0
    if diag.size and (diag.max() == 0 or diag.min() <= tol):
        if ridge == 0:
            raise SingularSystemError("least-squares system is singular; use ridge > 0")
        raise SolverError(
            "least-squares system is numerically singular even with ridge; sampling is degenerate"
        )
    theta = scipy.linalg.solve_triangular(R[:p, :p], R[:p, p], check_finite=False)
    if not np.all(np.isfinite(theta)):
        raise SolverError("least-squares solve produced non-finite weights")
    return theta


def _diagnostics(stage: str, k: int, A, y: np.ndarray, theta: np.ndarray) -> dict:
    resid = A @ theta - y
    return {
        "stage": stage,
        "iteration": k,
        "residual_rms": float(np.sqrt(np.mean(resid * resid))),
        "target_mean": float(np.mean(y)),
        "theta_norm": float(np.linalg.norm(theta)),
    }


def projected_value_iteration(
    cfg: ScenarioConfig,
    solver: SolverConfig,
    workers: int = 1,
    on_iteration: Callable[[dict], None] | None = None,
    history: list | None = None,
) -> np.ndarray:
    """Returns the value weights after ``solver.n_vi`` projected Bellman iterations."""
    theta = np.zeros(get_layout(cfg.features).size)
    for k in range(solver.n_vi):
        rng = stream(solver.seed, _VI_STREAM, k)
        states = sample_training_batch(cfg, solver.n_state, rng)
        noise = rng.standard_normal((solver.n_state, solver.n_ev)) * cfg.sigma_turn
        theta_k = theta
        targets = _map_chunks(
            lambda sl: backup_batch(states.take(sl), theta_k, cfg, solver, noise[sl]),
            solver.n_state,
            workers,
        )
        A = feature_matrix(states, cfg)
        theta = fit_least_squares(A, targets, solver.ridge)
        record = _diagnostics("value_iteration", k, A, targets, theta)
        log.debug(json.dumps(record))
        if on_iteration is not None:
            on_iteration(record)
        if history is not None:
            history.append(theta.copy())
    return theta


def extract_post_decision_weights(
    theta,
    cfg: ScenarioConfig,
    solver: SolverConfig,
    workers: int = 1,
    on_iteration: Callable[[dict], None] | None = None,
) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    rng = stream(solver.seed, _PD_STREAM)
    q = sample_training_batch(cfg, solver.n_q, rng)
    noise = rng.standard_normal((solver.n_q, solver.n_ev)) * cfg.sigma_turn
    targets = _map_chunks(
        lambda sl: post_decision_targets(q.take(sl), theta, cfg, noise[sl]), solver.n_q, workers
    )
    A = feature_matrix(q, cfg)
    theta_q = fit_least_squares(A, targets, solver.ridge)
    record = _diagnostics("post_decision", 0, A, targets, theta_q)
    log.debug(json.dumps(record))
    if on_iteration is not None:
        on_iteration(record)
    return theta_q


def solve(cfg: ScenarioConfig, solver: SolverConfig, workers: int = 1, on_iteration=None):
    """Full offline pipeline. Returns ``(theta, theta_q)``."""
    theta = projected_value_iteration(cfg, solver, workers, on_iteration)
    theta_q = extract_post_decision_weights(theta, cfg, solver, workers, on_iteration)
    return theta, theta_q

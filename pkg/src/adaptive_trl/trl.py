"""Closest-approach geometry, the trusted resolution logic and the heading controller."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import VehicleParams, VehicleState, atan2, wrap_angle
from .states import EncounterState

# relative speeds below this (|dv|^2, m^2/s^2) are treated as parallel tracks
PARALLEL_EPS = 1e-9
# slack on the set of headings achieving the best miss distance
DSTAR_SLACK = 1e-6
# candidates this close in goal offset count as tied; the lowest index wins
TIE_EPS = 1e-9


@dataclass(frozen=True)
class TrlConfig:
    n_headings: int = 18

    def __post_init__(self):
        if self.n_headings < 1:
            raise ValueError("n_headings must be >= 1")

    @property
    def n_candidates(self) -> int:
        return 2 * self.n_headings + 1

    def offsets(self) -> np.ndarray:
        n = np.arange(-self.n_headings, self.n_headings + 1, dtype=float)
        return n * math.pi / self.n_headings


def closest_approach(ox, oy, psi_cand, ix, iy, ipsi, v_own, v_intruder):
    """Time and distance of closest approach under straight-line extrapolation.

    All position/heading arguments broadcast against each other. Returns
    ``(tau_min, d_min)``.
    """
    rx = np.asarray(ix, dtype=float) - ox
    ry = np.asarray(iy, dtype=float) - oy
    dvx = v_intruder * np.cos(ipsi) - v_own * np.cos(psi_cand)
    dvy = v_intruder * np.sin(ipsi) - v_own * np.sin(psi_cand)
    dv2 = dvx * dvx + dvy * dvy
    parallel = dv2 < PARALLEL_EPS
    tau = np.where(parallel, 0.0, -(rx * dvx + ry * dvy) / np.where(parallel, 1.0, dv2))
    tau = np.maximum(tau, 0.0)
    dx = rx + tau * dvx
    dy = ry + tau * dvy
    return tau, np.sqrt(dx * dx + dy * dy)


def pairwise_distance(s: EncounterState, psi_cand: float, tau: float, v_own: float, v_intruder: float) -> float:
    """Separation ``tau`` seconds ahead if the own UAV flies ``psi_cand`` and the intruder holds course."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    o, i = s.own, s.intruder
    dx = i.x - o.x + tau * v_intruder * math.cos(i.psi) - tau * v_own * math.cos(psi_cand)
    dy = i.y - o.y + tau * v_intruder * math.sin(i.psi) - tau * v_own * math.sin(psi_cand)
    return math.sqrt(dx * dx + dy * dy)


def tau_min(s: EncounterState, psi_cand: float, v_own: float, v_intruder: float) -> float:
    o, i = s.own, s.intruder
    tau, _ = closest_approach(o.x, o.y, psi_cand, i.x, i.y, i.psi, float(v_own), float(v_intruder))
    return float(tau)


def d_min(s: EncounterState, psi_cand: float, v_own: float, v_intruder: float) -> float:
    o, i = s.own, s.intruder
    _, d = closest_approach(o.x, o.y, psi_cand, i.x, i.y, i.psi, float(v_own), float(v_intruder))
    return float(d)


def resolve_arrays(ox, oy, opsi, ix, iy, ipsi, goal_heading, D, v_own, v_intruder, n_headings):
    """Vectorized TRL over a batch. Returns ``(heading, feasible_branch)``.

    ``feasible_branch`` is False where the conflict was inescapable (best
    achievable miss distance below ``D``).
    """
    opsi = np.asarray(opsi, dtype=float)
    n = np.arange(-n_headings, n_headings + 1, dtype=float)
    cand = opsi[:, None] + n[None, :] * (math.pi / n_headings)
    _, dmin = closest_approach(
        np.asarray(ox, dtype=float)[:, None],
        np.asarray(oy, dtype=float)[:, None],
        cand,
        np.asarray(ix, dtype=float)[:, None],
        np.asarray(iy, dtype=float)[:, None],
        np.asarray(ipsi, dtype=float)[:, None],
        v_own,
        v_intruder,
    )
    D = np.broadcast_to(np.asarray(D, dtype=float), opsi.shape)[:, None]
    dstar = dmin.max(axis=1, keepdims=True)
    feasible = dstar >= D
    allowed = np.where(feasible, dmin >= D, dmin >= dstar - DSTAR_SLACK)
    offset = np.abs(wrap_angle(cand - np.asarray(goal_heading, dtype=float)[:, None]))
    offset = np.where(allowed, offset, np.inf)
    best = offset.min(axis=1, keepdims=True)
    pick = np.argmax(offset <= best + TIE_EPS, axis=1)
    heading = wrap_angle(cand[np.arange(cand.shape[0]), pick])
    return np.asarray(heading, dtype=float), feasible[:, 0]


def trl_resolve(
    s: EncounterState,
    D: float,
    cfg: TrlConfig,
    goal: tuple[float, float],
    v_own: float,
    v_intruder: float,
) -> float:
    """Resolution heading for a single state (see ``resolve_arrays``)."""
    if D < 0:
        raise ValueError("D must be >= 0")
    o, i = s.own, s.intruder
    heading, _ = resolve_arrays(
        [o.x], [o.y], [o.psi], [i.x], [i.y], [i.psi], atan2([goal[1] - o.y], [goal[0] - o.x]),
        D, v_own, v_intruder, cfg.n_headings,
    )
    return float(heading[0])


def controller_arrays(psi, psi_resolution, max_turn_rate, dt):
    err = wrap_angle(np.asarray(psi_resolution, dtype=float) - psi)
    return np.clip(err / dt, -max_turn_rate, max_turn_rate)


def track_controller(own: VehicleState, psi_resolution: float, params: VehicleParams, dt: float) -> float:
    """Turn rate that reaches the commanded heading in one step, saturated at the turn limit."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return float(controller_arrays(own.psi, psi_resolution, params.max_turn_rate, dt))

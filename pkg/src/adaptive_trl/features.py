"""Grid-interpolation features and the linear value architecture.

Feature layout (default factorization, 1813 entries)::

    [ nmac indicator | intruder grid 12x12x12 |
      goal indicator | goal distance (m) | goal grid 9x9 | constant ]

Features are stored sparsely as fixed-width ``(index, value)`` rows so value
evaluation is a gather plus a fixed-order sum.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .geometry import TWO_PI, VehicleState, atan2, wrap_angle
from .states import EncounterState, PostDecisionState, StateBatch, as_batch

if TYPE_CHECKING:
    from .mdp import ScenarioConfig

EXPECTED_N_FEATURES = 1813


@dataclass(frozen=True)
class Axis:
    name: str
    nodes: tuple[float, ...]
    period: float | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError(f"axis {self.name!r} needs at least 2 nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError(f"axis {self.name!r} nodes must be strictly increasing")
        if self.period is not None and nodes[-1] - nodes[0] >= self.period:
            raise ValueError(f"periodic axis {self.name!r} nodes must span less than one period")

    def __len__(self) -> int:
        return len(self.nodes)

    def cell(self, c: np.ndarray):
        """Lower node index, upper node index and fraction toward the upper node."""
        nodes = np.asarray(self.nodes)
        n = len(nodes)
        if self.period is None:
            c = np.clip(c, nodes[0], nodes[-1])
            lo = np.clip(np.searchsorted(nodes, c, side="right") - 1, 0, n - 2)
            hi = lo + 1
            upper = nodes[hi]
        else:
            c = nodes[0] + np.mod(c - nodes[0], self.period)
            lo = np.clip(np.searchsorted(nodes, c, side="right") - 1, 0, n - 1)
            hi = np.where(lo == n - 1, 0, lo + 1)
            upper = np.where(lo == n - 1, nodes[0] + self.period, nodes[np.minimum(lo + 1, n - 1)])
        frac = (c - nodes[lo]) / (upper - nodes[lo])
        return lo, hi, np.clip(frac, 0.0, 1.0)

    def nearest(self, c: np.ndarray) -> np.ndarray:
        nodes = np.asarray(self.nodes)
        diff = c[..., None] - nodes
        if self.period is not None:
            diff = np.mod(diff + 0.5 * self.period, self.period) - 0.5 * self.period
        return np.argmin(np.abs(diff), axis=-1)


class Grid:
    def __init__(self, axes: list[Axis]):
        self.axes = list(axes)
        self.shape = tuple(len(a) for a in self.axes)
        self.size = int(np.prod(self.shape))
        self.strides = tuple(int(np.prod(self.shape[k + 1:])) for k in range(len(self.shape)))
        self._corners = list(itertools.product((0, 1), repeat=len(self.axes)))

    @property
    def n_corners(self) -> int:
        return len(self._corners)

    def weights(self, points: np.ndarray):
        """Multilinear weights for an ``(n, d)`` array of points.

        Returns ``(idx, w)`` of shape ``(n, 2**d)``. Out-of-range coordinates on
        non-periodic axes are clamped to the boundary.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cells = [axis.cell(points[:, k]) for k, axis in enumerate(self.axes)]
        n = points.shape[0]
        idx = np.zeros((n, self.n_corners), dtype=np.int64)
        w = np.ones((n, self.n_corners))
        for j, corner in enumerate(self._corners):
            for k, bit in enumerate(corner):
                lo, hi, frac = cells[k]
                idx[:, j] += (hi if bit else lo) * self.strides[k]
                w[:, j] *= frac if bit else 1.0 - frac
        return idx, w

    def nearest_node(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([axis.nearest(points[:, k]) for k, axis in enumerate(self.axes)], axis=1)

    def node_coords(self, node_idx: np.ndarray) -> np.ndarray:
        node_idx = np.atleast_2d(node_idx)
        return np.stack(
            [np.asarray(axis.nodes)[node_idx[:, k]] for k, axis in enumerate(self.axes)], axis=1
        )

    def flat_index(self, node_idx: np.ndarray) -> np.ndarray:
        node_idx = np.atleast_2d(node_idx)
        return sum(node_idx[:, k] * self.strides[k] for k in range(len(self.axes)))

    def describe(self) -> list[dict]:
        return [{"name": a.name, "nodes": list(a.nodes), "period": a.period} for a in self.axes]


def interp_weights(grid: Grid, point) -> dict[int, float]:
    """Nonzero multilinear weights of one point, keyed by flat node index."""
    idx, w = grid.weights(np.asarray(point, dtype=float)[None, :])
    out: dict[int, float] = {}
    for i, wi in zip(idx[0], w[0]):
        if wi != 0.0:
            out[int(i)] = out.get(int(i), 0.0) + float(wi)
    return out


def _uniform(lo: float, hi: float, n: int) -> tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(lo, hi, n))


def _periodic(n: int) -> tuple[float, ...]:
    return tuple(-math.pi + TWO_PI * k / n for k in range(n))


@dataclass(frozen=True)
class FeatureConfig:
    n_distance: int = 12
    max_distance: float = 1200.0
    n_bearing: int = 12
    n_rel_heading: int = 12
    n_goal_distance: int = 9
    max_goal_distance: float = 1500.0
    n_goal_bearing: int = 9
    use_intruder: bool = True
    use_goal: bool = True

    def intruder_grid(self) -> Grid:
        return Grid([
            Axis("distance", _uniform(0.0, self.max_distance, self.n_distance)),
            Axis("bearing_from_intruder", _periodic(self.n_bearing), TWO_PI),
            Axis("relative_heading", _periodic(self.n_rel_heading), TWO_PI),
        ])

    def goal_grid(self) -> Grid:
        return Grid([
            Axis("goal_distance", _uniform(0.0, self.max_goal_distance, self.n_goal_distance)),
            Axis("abs_goal_bearing", _uniform(0.0, math.pi, self.n_goal_bearing)),
        ])

    def layout(self) -> "FeatureLayout":
        return FeatureLayout(self)


class FeatureLayout:
    """Offsets of each feature group inside the full vector."""

    def __init__(self, fc: FeatureConfig):
        self.config = fc
        self.intruder_grid = fc.intruder_grid()
        self.goal_grid = fc.goal_grid()
        pos = 0
        self.nmac_indicator = self.intruder_offset = None
        self.goal_indicator = self.goal_distance = self.goal_offset = None
        if fc.use_intruder:
            self.nmac_indicator = pos
            self.intruder_offset = pos + 1
            pos += 1 + self.intruder_grid.size
        if fc.use_goal:
            self.goal_indicator = pos
            self.goal_distance = pos + 1
            self.goal_offset = pos + 2
            pos += 2 + self.goal_grid.size
        self.constant = pos
        self.size = pos + 1
        self.width = 1
        if fc.use_intruder:
            self.width += 1 + self.intruder_grid.n_corners
        if fc.use_goal:
            self.width += 2 + self.goal_grid.n_corners

    def describe(self) -> dict:
        return {
            "size": self.size,
            "nmac_indicator": self.nmac_indicator,
            "intruder_offset": self.intruder_offset,
            "goal_indicator": self.goal_indicator,
            "goal_distance": self.goal_distance,
            "goal_offset": self.goal_offset,
            "constant": self.constant,
            "intruder_grid": self.intruder_grid.describe(),
            "goal_grid": self.goal_grid.describe(),
        }


_LAYOUTS: dict[FeatureConfig, FeatureLayout] = {}


def get_layout(fc: FeatureConfig) -> FeatureLayout:
    layout = _LAYOUTS.get(fc)
    if layout is None:
        layout = _LAYOUTS[fc] = FeatureLayout(fc)
    return layout


def intruder_relative(ox, oy, opsi, ix, iy, ipsi):
    """(distance, bearing from intruder to own relative to intruder heading, relative heading)."""
    dx = np.asarray(ox, dtype=float) - ix
    dy = np.asarray(oy, dtype=float) - iy
    dist = np.sqrt(dx * dx + dy * dy)
    bearing = np.where(dist > 0.0, wrap_angle(atan2(dy, dx) - ipsi), 0.0)
    rel = wrap_angle(np.asarray(opsi, dtype=float) - ipsi)
    return dist, bearing, np.asarray(rel, dtype=float)


def goal_relative(ox, oy, opsi, goal):
    dx = goal[0] - np.asarray(ox, dtype=float)
    dy = goal[1] - np.asarray(oy, dtype=float)
    dist = np.sqrt(dx * dx + dy * dy)
    bearing = np.abs(wrap_angle(atan2(dy, dx) - opsi))
    return dist, np.asarray(bearing, dtype=float)


def place_intruder(ox, oy, opsi, dist, bearing, rel_heading):
    """Inverse of ``intruder_relative`` holding the own state fixed."""
    ipsi = np.asarray(wrap_angle(np.asarray(opsi, dtype=float) - rel_heading), dtype=float)
    ang = ipsi + bearing
    ix = ox - dist * np.cos(ang)
    iy = oy - dist * np.sin(ang)
    return ix, iy, ipsi


def sparse_features(b: StateBatch, cfg: "ScenarioConfig"):
    """Fixed-width sparse feature rows ``(idx, val)``; terminal rows are all zero."""
    layout = get_layout(cfg.features)
    n = len(b)
    idx = np.zeros((n, layout.width), dtype=np.int64)
    val = np.zeros((n, layout.width))
    col = 0
    if cfg.features.use_intruder:
        d, brg, rel = intruder_relative(b.ox, b.oy, b.opsi, b.ix, b.iy, b.ipsi)
        idx[:, col] = layout.nmac_indicator
        val[:, col] = d <= cfg.d_nmac
        col += 1
        gi, gw = layout.intruder_grid.weights(np.stack([d, brg, rel], axis=1))
        k = gi.shape[1]
        idx[:, col:col + k] = gi + layout.intruder_offset
        val[:, col:col + k] = gw
        col += k
    if cfg.features.use_goal:
        gd, gb = goal_relative(b.ox, b.oy, b.opsi, cfg.goal)
        idx[:, col] = layout.goal_indicator
        val[:, col] = gd <= cfg.d_goal
        idx[:, col + 1] = layout.goal_distance
        val[:, col + 1] = gd
        col += 2
        gi, gw = layout.goal_grid.weights(np.stack([gd, gb], axis=1))
        k = gi.shape[1]
        idx[:, col:col + k] = gi + layout.goal_offset
        val[:, col:col + k] = gw
        col += k
    idx[:, col] = layout.constant
    val[:, col] = 1.0
    val[b.terminal] = 0.0
    return idx, val


def feature_matrix(b: StateBatch, cfg: "ScenarioConfig"):
    """Feature rows of a batch as a CSR matrix."""
    from scipy import sparse

    idx, val = sparse_features(b, cfg)
    n, width = idx.shape
    m = sparse.csr_matrix(
        (val.ravel(), idx.ravel(), np.arange(0, n * width + 1, width)),
        shape=(n, get_layout(cfg.features).size),
    )
    m.sum_duplicates()
    return m


def value_batch(b: StateBatch, theta: np.ndarray, cfg: "ScenarioConfig") -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    size = get_layout(cfg.features).size
    if theta.shape != (size,):
        raise ValueError(f"weight vector has length {theta.shape}, feature layout needs {size}")
    idx, val = sparse_features(b, cfg)
    out = np.zeros(len(b))
    for k in range(idx.shape[1]):
        out += theta[idx[:, k]] * val[:, k]
    return out


def beta_intruder(rel, cfg: "ScenarioConfig") -> np.ndarray:
    """Intruder group for ``rel = (distance, bearing_from_intruder, relative_heading)``."""
    grid = get_layout(cfg.features).intruder_grid
    out = np.zeros(1 + grid.size)
    out[0] = float(rel[0] <= cfg.d_nmac)
    for i, w in interp_weights(grid, rel).items():
        out[1 + i] += w
    return out


def beta_goal(own: VehicleState, cfg: "ScenarioConfig") -> np.ndarray:
    grid = get_layout(cfg.features).goal_grid
    dist, brg = goal_relative([own.x], [own.y], [own.psi], cfg.goal)
    out = np.zeros(2 + grid.size)
    out[0] = float(dist[0] <= cfg.d_goal)
    out[1] = dist[0]
    for i, w in interp_weights(grid, [dist[0], brg[0]]).items():
        out[2 + i] += w
    return out


def beta(s: EncounterState | PostDecisionState, cfg: "ScenarioConfig") -> np.ndarray:
    """Dense feature vector of one state."""
    idx, val = sparse_features(as_batch(s), cfg)
    out = np.zeros(get_layout(cfg.features).size)
    np.add.at(out, idx[0], val[0])
    return out


def value(s: EncounterState | PostDecisionState, theta: np.ndarray, cfg: "ScenarioConfig") -> float:
    return float(value_batch(as_batch(s), theta, cfg)[0])


def snap_batch(b: StateBatch, cfg: "ScenarioConfig") -> StateBatch:
    """Move each intruder onto the nearest intruder-grid node, own state held fixed."""
    grid = get_layout(cfg.features).intruder_grid
    d, brg, rel = intruder_relative(b.ox, b.oy, b.opsi, b.ix, b.iy, b.ipsi)
    coords = np.stack([d, brg, rel], axis=1)
    nodes = grid.node_coords(grid.nearest_node(coords))
    ix, iy, ipsi = place_intruder(b.ox, b.oy, b.opsi, nodes[:, 0], nodes[:, 1], nodes[:, 2])
    gap = np.abs(coords - nodes)
    gap[:, 1:] = np.abs(wrap_angle(coords[:, 1:] - nodes[:, 1:]))
    keep = np.all(gap < 1e-9, axis=1)
    return b.replace(
        ix=np.where(keep, b.ix, ix), iy=np.where(keep, b.iy, iy), ipsi=np.where(keep, b.ipsi, ipsi)
    )


def snap_to_grid(s: EncounterState, cfg: "ScenarioConfig") -> EncounterState:
    if s.terminal:
        raise ValueError("cannot snap a terminal state")
    return snap_batch(as_batch(s), cfg).state(0)

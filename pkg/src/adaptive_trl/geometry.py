"""Planar vehicle states and the constant-turn-rate kinematic update."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# below this |turn rate| (rad/s) the straight-line branch is used
TURN_RATE_EPS = 1e-9


def wrap_angle(a):
    """Wrap an angle (scalar or array) into [-pi, pi)."""
    arr = np.asarray(a, dtype=float)
    w = np.mod(arr + math.pi, TWO_PI) - math.pi
    w = np.where(w >= math.pi, w - TWO_PI, w)
    w = np.where(w < -math.pi, w + TWO_PI, w)
    if arr.ndim == 0:
        return float(w)
    return w


def atan2(y, x):
    # strided inputs take a different ufunc loop and can change the last bit
    return np.arctan2(np.ascontiguousarray(y, dtype=float), np.ascontiguousarray(x, dtype=float))


@dataclass(frozen=True)
class VehicleState:
    """Horizontal position (x north, y east, meters) and heading psi (rad, from +x toward +y)."""

    x: float
    y: float
    psi: float

    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class VehicleParams:
    speed: float
    max_turn_rate: float = math.inf

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError("speed must be positive")
        if not self.max_turn_rate > 0:
            raise ValueError("max_turn_rate must be positive")

    @classmethod
    def from_bank_angle(cls, speed: float, max_bank: float, g: float = 9.80665) -> "VehicleParams":
        return cls(speed=speed, max_turn_rate=g * math.tan(max_bank) / speed)


def step_arrays(x, y, psi, speed, turn_rate, dt):
    """Vectorized exact constant-turn-rate update.

    Uses the product forms sin(a+b) - sin(a) = 2 cos(a + b/2) sin(b/2) and
    cos(a) - cos(a+b) = 2 sin(a + b/2) sin(b/2), which avoid cancellation
    for small turn rates.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    psi = np.asarray(psi, dtype=float)
    rate = np.broadcast_to(np.asarray(turn_rate, dtype=float), psi.shape)
    straight = np.abs(rate) < TURN_RATE_EPS
    safe_rate = np.where(straight, 1.0, rate)
    half = 0.5 * rate * dt
    chord_scale = np.where(straight, speed * dt, 2.0 * speed * np.sin(half) / safe_rate)
    mid = np.where(straight, psi, psi + half)
    x_new = x + chord_scale * np.cos(mid)
    y_new = y + chord_scale * np.sin(mid)
    psi_new = wrap_angle(psi + np.where(straight, 0.0, rate * dt))
    return x_new, y_new, np.asarray(psi_new, dtype=float)


def step_vehicle(state: VehicleState, speed: float, turn_rate: float, dt: float) -> VehicleState:
    x, y, psi = step_arrays(
        np.array([state.x]), np.array([state.y]), np.array([state.psi]), speed, turn_rate, dt
    )
    return VehicleState(float(x[0]), float(y[0]), float(psi[0]))


def step_intruder(state: VehicleState, params: VehicleParams, w: float, dt: float) -> VehicleState:
    """Intruder update: its turn rate over the step is the disturbance ``w``."""
    return step_vehicle(state, params.speed, w, dt)

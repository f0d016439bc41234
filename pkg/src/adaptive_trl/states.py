"""Encounter state types.

The scalar dataclasses are the public value types. ``StateBatch`` holds the
same fields as contiguous arrays; every simulation path runs on batches and
the scalar helpers wrap a batch of one, so both routes share one code path.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .geometry import VehicleState


@dataclass(frozen=True)
class EncounterState:
    own: VehicleState
    intruder: VehicleState
    dev: bool = False
    terminal: bool = False


@dataclass(frozen=True)
class PostDecisionState:
    """Own state and dev flag one step ahead, intruder state at the current step.

    ``terminal`` is set when the pre-decision state was terminal or an event
    (goal/NMAC) state, whose successor is the absorbing terminal state.
    """

    own_next: VehicleState
    intruder_now: VehicleState
    dev_next: bool
    terminal: bool = False

    def as_state(self) -> EncounterState:
        return EncounterState(self.own_next, self.intruder_now, self.dev_next, self.terminal)


@dataclass
class StateBatch:
    ox: np.ndarray
    oy: np.ndarray
    opsi: np.ndarray
    ix: np.ndarray
    iy: np.ndarray
    ipsi: np.ndarray
    dev: np.ndarray
    terminal: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            dtype = bool if f.name in ("dev", "terminal") else float
            setattr(self, f.name, np.ascontiguousarray(getattr(self, f.name), dtype=dtype))

    def __len__(self) -> int:
        return self.ox.shape[0]

    @classmethod
    def from_states(cls, states: Sequence[EncounterState | PostDecisionState]) -> "StateBatch":
        rows = [s.as_state() if isinstance(s, PostDecisionState) else s for s in states]
        return cls(
            ox=[s.own.x for s in rows],
            oy=[s.own.y for s in rows],
            opsi=[s.own.psi for s in rows],
            ix=[s.intruder.x for s in rows],
            iy=[s.intruder.y for s in rows],
            ipsi=[s.intruder.psi for s in rows],
            dev=[s.dev for s in rows],
            terminal=[s.terminal for s in rows],
        )

    def state(self, i: int) -> EncounterState:
        return EncounterState(
            VehicleState(float(self.ox[i]), float(self.oy[i]), float(self.opsi[i])),
            VehicleState(float(self.ix[i]), float(self.iy[i]), float(self.ipsi[i])),
            bool(self.dev[i]),
            bool(self.terminal[i]),
        )

    def post_decision(self, i: int) -> PostDecisionState:
        s = self.state(i)
        return PostDecisionState(s.own, s.intruder, s.dev, s.terminal)

    def to_states(self) -> list[EncounterState]:
        return [self.state(i) for i in range(len(self))]

    def take(self, idx) -> "StateBatch":
        return StateBatch(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def replace(self, **changes) -> "StateBatch":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return StateBatch(**values)

    def equals(self, other: "StateBatch") -> bool:
        """Bitwise equality of every field."""
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name)) for f in fields(self)
        )


def as_batch(s: EncounterState | PostDecisionState) -> StateBatch:
    return StateBatch.from_states([s])

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptive_trl.geometry import VehicleState
from adaptive_trl.mdp import (
    DIRECT,
    TRL,
    ScenarioConfig,
    complete_post_decision,
    deviates,
    episode_reward_bounds,
    in_goal,
    is_nmac,
    post_decision,
    post_decision_batch,
    complete_batch,
    reward,
    transition,
    transition_batch,
)
from adaptive_trl.states import EncounterState, StateBatch

from conftest import random_states
from oracles import arc_step, brute_force_trl, wrap

FAR = VehicleState(20_000.0, 20_000.0, 0.0)


def test_defaults():
    c = ScenarioConfig()
    assert c.d_nmac == pytest.approx(152.4)
    assert c.trl_actions() == pytest.approx((152.4, 228.6, 304.8, 457.2, 609.6))
    assert c.direct_actions() == pytest.approx(tuple(math.radians(v) for v in (-18.7, -9.35, 0, 9.35, 18.7)))


@pytest.mark.parametrize("name", ["own_speed", "d_nmac", "dt"])
def test_rejects_nonpositive(name):
    with pytest.raises(ValueError):
        ScenarioConfig(**{name: 0.0})


class TestEvents:
    def test_nmac_boundary_inclusive(self, cfg):
        s = EncounterState(VehicleState(0, 0, 0), VehicleState(cfg.d_nmac, 0, 0))
        assert is_nmac(s, cfg)
        s = EncounterState(VehicleState(0, 0, 0), VehicleState(cfg.d_nmac + 1e-6, 0, 0))
        assert not is_nmac(s, cfg)

    def test_goal_boundary_inclusive(self, cfg):
        assert in_goal(VehicleState(900, 0, 0), cfg)
        assert not in_goal(VehicleState(899.999, 0, 0), cfg)


class TestReward:
    def test_plain_step(self, cfg):
        s = EncounterState(VehicleState(0, 0, 0), FAR)
        assert reward(s, 152.4, cfg) == -1.0
        assert deviates(s, 152.4, cfg) == 0

    def test_goal(self, cfg):
        s = EncounterState(VehicleState(950, 0, 0), FAR)
        assert reward(s, 152.4, cfg) == 99.0

    def test_nmac_with_deviation(self, cfg):
        # head-on intruder inside the disc: every D is inescapable and the
        # resolution turns away from the goal heading
        s = EncounterState(VehicleState(0, 0, 0), VehicleState(100, 0, math.pi))
        assert deviates(s, 609.6, cfg) == 1
        assert reward(s, 609.6, cfg) == -1101.0

    def test_deviation_charged_once(self, cfg):
        s = EncounterState(VehicleState(0, 0, 0), VehicleState(100, 0, math.pi), dev=True)
        assert deviates(s, 609.6, cfg) == 0
        assert reward(s, 609.6, cfg) == -1001.0

    def test_direct_mode_deviation(self, cfg):
        s = EncounterState(VehicleState(0, 0, 0), FAR)
        assert deviates(s, 0.0, cfg, DIRECT) == 0
        assert deviates(s, cfg.max_turn_rate, cfg, DIRECT) == 1

    def test_terminal_zero(self, cfg):
        s = EncounterState(VehicleState(0, 0, 0), VehicleState(10, 0, 0), terminal=True)
        assert reward(s, 609.6, cfg) == 0.0

    def test_episode_bounds(self, cfg):
        assert episode_reward_bounds(cfg) == (-1200.0, 99.0)


class TestTransition:
    def test_composition_equals_transition_bitwise(self, cfg, rng):
        states = random_states(rng, 400)
        b = StateBatch.from_states(states)
        for mode, actions in ((TRL, cfg.trl_actions()), (DIRECT, cfg.direct_actions())):
            for a in actions:
                w = rng.standard_normal(len(b)) * cfg.sigma_turn
                direct = transition_batch(b, a, w, cfg, mode)
                composed = complete_batch(post_decision_batch(b, a, cfg, mode), w, cfg)
                assert direct.equals(composed)

    def test_scalar_composition(self, cfg, rng):
        for s in random_states(rng, 50, dev_prob=0.0):
            if is_nmac(s, cfg) or in_goal(s.own, cfg):
                continue
            w = float(rng.normal(0, cfg.sigma_turn))
            assert transition(s, 304.8, w, cfg) == complete_post_decision(post_decision(s, 304.8, cfg), w, cfg)

    def test_against_independent_oracle(self, cfg, rng):
        """Resolution, controller and arc kinematics rebuilt from scratch."""
        for s in random_states(rng, 150):
            if is_nmac(s, cfg) or in_goal(s.own, cfg):
                continue
            D = 304.8
            w = float(rng.normal(0, cfg.sigma_turn))
            target, _, _, _ = brute_force_trl(s.own, s.intruder, cfg.goal, D, 30.0, 60.0, 18)
            rate = max(-cfg.max_turn_rate, min(cfg.max_turn_rate, wrap(target - s.own.psi)))
            ox, oy, opsi = arc_step(s.own.x, s.own.y, s.own.psi, 30.0, rate, 1.0)
            ix, iy, ipsi = arc_step(s.intruder.x, s.intruder.y, s.intruder.psi, 60.0, w, 1.0)
            got = transition(s, D, w, cfg)
            assert (got.own.x, got.own.y) == pytest.approx((ox, oy), abs=1e-9)
            assert wrap(got.own.psi - opsi) == pytest.approx(0, abs=1e-12)
            assert (got.intruder.x, got.intruder.y) == pytest.approx((ix, iy), abs=1e-9)
            assert wrap(got.intruder.psi - ipsi) == pytest.approx(0, abs=1e-12)
            goal_h = math.atan2(-s.own.y, 1000 - s.own.x)
            assert got.dev == (s.dev or abs(wrap(target - goal_h)) > cfg.eps_dev)
            assert not got.terminal

    def test_event_successor_is_terminal(self, cfg):
        for s in (
            EncounterState(VehicleState(950, 0, 0), FAR),
            EncounterState(VehicleState(0, 0, 0), VehicleState(100, 0, math.pi)),
        ):
            assert post_decision(s, 152.4, cfg).terminal
            assert transition(s, 152.4, 0.1, cfg).terminal

    @given(st.floats(-1, 1), st.sampled_from([152.4, 609.6]))
    def test_terminal_absorbing(self, w, D):
        cfg = ScenarioConfig()
        s = EncounterState(VehicleState(3, 4, 1), VehicleState(50, 60, 2), dev=True, terminal=True)
        assert transition(s, D, w, cfg) == s
        assert reward(s, D, cfg) == 0.0

    def test_post_decision_keeps_intruder(self, cfg, rng):
        for s in random_states(rng, 20):
            if is_nmac(s, cfg) or in_goal(s.own, cfg):
                continue
            q = post_decision(s, 228.6, cfg)
            assert q.intruder_now == s.intruder

    def test_post_decision_of_terminal_rejected(self, cfg):
        s = EncounterState(VehicleState(0, 0, 0), FAR, terminal=True)
        with pytest.raises(ValueError):
            post_decision(s, 152.4, cfg)

    def test_dev_is_monotone(self, cfg, rng):
        b = StateBatch.from_states(random_states(rng, 300, dev_prob=0.5))
        for a in cfg.trl_actions():
            nxt = transition_batch(b, a, np.zeros(len(b)), cfg)
            assert np.all(nxt.dev >= b.dev)

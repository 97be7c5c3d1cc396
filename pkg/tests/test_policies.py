import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import best_subset_ff, best_subset_sb
from cobrah.cohort import SyntheticCohortSpec, generate_synthetic_cohort
from cobrah.errors import CapacityExceedsArms
from cobrah.model import DynamicsSpec, SuperArm
from cobrah.policies import (
    CUCB,
    FF,
    SB,
    Cobrah,
    RandomPolicy,
    SlidingWindowUCB,
    SWConfig,
    init_block,
    init_rounds,
    select_ff,
    select_top_c,
    sw_window,
    sw_window_general,
)


def drive(policy, rounds, rng, m, feedback=SB, p=0.5):
    for t in range(1, rounds + 1):
        chosen = policy.select(t)
        assert len(chosen) <= policy.capacity
        rewards = (rng.random(m) < p).astype(float)
        if feedback == SB:
            mask = np.zeros(m, bool)
            mask[list(chosen.members)] = True
            rewards[~mask] = np.nan
        policy.observe(t, chosen, rewards)
    return policy.trace()


def test_select_top_c_examples():
    assert select_top_c([0.9, 0.2, 0.8, 0.5], 2).members == (0, 2)
    assert select_top_c([0.4] * 4, 2).members == (0, 1)
    assert select_top_c([0.1, 0.3, 0.2], 3).members == (0, 1, 2)
    with pytest.raises(CapacityExceedsArms):
        select_top_c([0.1, 0.2], 3)


def test_select_ff_examples():
    pairs = np.array([[0.3, 0.0], [0.0, 0.1], [0.2, 0.0]])
    assert select_ff(pairs, 2).members == (0, 2)
    negative = np.array([[0.0, 0.1], [0.0, 0.3], [0.0, 0.05]])
    assert select_ff(negative, 2).members == ()
    with pytest.raises(CapacityExceedsArms):
        select_ff(pairs, 4)


def test_selection_matches_enumeration():
    rng = np.random.default_rng(99)
    for _ in range(200):
        m = int(rng.integers(1, 7))
        C = int(rng.integers(1, m + 1))
        v = rng.random(m)
        best, _ = best_subset_sb(v, C)
        assert sum(v[i] for i in select_top_c(v, C).members) == pytest.approx(best, abs=1e-12)
        pairs = rng.random((m, 2))
        got = select_ff(pairs, C)
        value = sum(pairs[i, 0] if i in got else pairs[i, 1] for i in range(m))
        assert value == pytest.approx(best_subset_ff(pairs, C), abs=1e-12)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=8), st.data())
def test_raising_a_value_keeps_arm_selected(values, data):
    m = len(values)
    C = data.draw(st.integers(1, m))
    chosen = select_top_c(values, C)
    i = data.draw(st.sampled_from(chosen.members))
    bumped = list(values)
    bumped[i] += data.draw(st.floats(0.0, 1.0))
    assert i in select_top_c(bumped, C)


def test_init_blocks():
    assert init_rounds(4, 2) == 2
    assert [init_block(t, 4, 2).members for t in (1, 2)] == [(0, 1), (2, 3)]
    assert init_block(3, 5, 2).members == (4,)


def test_window_formula():
    assert sw_window(100, 20, 4000) == 2
    assert sw_window(8, 1, 4000) == 2
    assert sw_window(10, 10, 1) == 1
    # with variation proportional to the horizon the general formula collapses to (m/K)^(1/3)
    T = 4000
    assert sw_window_general(100, T, 20, T) == pytest.approx((100 / 20) ** (1 / 3))
    with pytest.raises(ValueError):
        SWConfig(window=0, triggered=2)


def test_cucb_bonus_prefers_rarely_pulled_arm():
    pol = CUCB(2, 1)
    pol.sums[:, 0] = [0.5, 50.0]
    pol.counts[:, 0] = [1, 100]
    assert pol.select(3).members == (0,)
    index = pol.trace().ucbs[-1]
    assert index[0] - 0.5 == pytest.approx(math.sqrt(1.5 * math.log(3)))


def test_cucb_equal_counts_rank_by_mean():
    pol = CUCB(3, 1)
    pol.sums[:, 0] = [2.0, 7.0, 5.0]
    pol.counts[:, 0] = [10, 10, 10]
    assert pol.select(20).members == (1,)


def test_cucb_bonus_vanishes():
    pol = CUCB(1, 1)
    bonus = [pol._index(50.0, np.array([0.0]), np.array([n]))[0] for n in (1, 100, 10_000, 10**8)]
    assert all(a > b for a, b in zip(bonus, bonus[1:]))
    assert bonus[-1] < 1e-3


def test_sliding_window_mean():
    pol = SlidingWindowUCB(1, 1, window=2)
    for t, r in enumerate([1.0, 0.0, 1.0], start=1):
        pol.observe(t, SuperArm.of([0]), np.array([r]))
    sums, counts = pol._stats()
    assert sums[0, 0] / counts[0, 0] == 0.5


def test_wide_window_matches_cucb():
    m, C, T = 5, 2, 60
    a, b = CUCB(m, C), SlidingWindowUCB(m, C, window=T)
    ra, rb = np.random.default_rng(1), np.random.default_rng(1)
    ta, tb = drive(a, T, ra, m), drive(b, T, rb, m)
    assert [s.members for s in ta.chosen] == [s.members for s in tb.chosen]


def test_random_policy_uniform_and_seeded():
    pol = RandomPolicy(5, 1, rng=np.random.default_rng(0))
    counts = np.zeros(5)
    for t in range(1, 100_001):
        counts[pol.select(t).members[0]] += 1
    assert np.all(np.abs(counts / counts.sum() - 0.2) <= 0.01)
    full = RandomPolicy(3, 3, rng=np.random.default_rng(0))
    assert full.select(1).members == (0, 1, 2)
    one, two = (RandomPolicy(6, 2, rng=np.random.default_rng(4)) for _ in range(2))
    assert [one.select(t).members for t in range(1, 21)] == [two.select(t).members for t in range(1, 21)]


def test_cobrah_initialisation_and_tie_break():
    pol = Cobrah([DynamicsSpec.identity()] * 4, 2, SB)
    for t, block in ((1, [0, 1]), (2, [2, 3])):
        assert pol.select(t).members == tuple(block)
        r = np.full(4, np.nan)
        r[block] = 1.0
        pol.observe(t, SuperArm.of(block), r)
    # identical evidence for every arm: ties resolve to the lowest indices
    assert pol.select(3).members == (0, 1)


def test_cobrah_accounting_sb():
    arms = generate_synthetic_cohort(SyntheticCohortSpec(10, seed=2))
    pol = Cobrah([a.dynamics for a in arms], 2, SB)
    trace = drive(pol, 60, np.random.default_rng(0), 10)
    assert len(trace) == 60
    assert trace.pulls.min() >= 1
    assert trace.pulls.sum() == 2 * 60


def test_cobrah_ff_runs_and_respects_capacity():
    arms = generate_synthetic_cohort(SyntheticCohortSpec(6, seed=5))
    pol = Cobrah([a.dynamics for a in arms], 2, FF, radius="theoretical")
    trace = drive(pol, 20, np.random.default_rng(1), 6, feedback=FF)
    assert all(len(s) <= 2 for s in trace.chosen)
    assert trace.pulls[:6].min() >= 1
    assert pol.arms[0].n_obs == 20


def test_cucb_ff_tracks_both_actions():
    pol = CUCB(3, 1, FF)
    drive(pol, 10, np.random.default_rng(2), 3, feedback=FF)
    assert pol.counts.sum() == 30
    assert np.all(pol.counts[:, 0] >= 1)


def test_invalid_feedback_mode():
    with pytest.raises(ValueError):
        CUCB(3, 1, "bandit")

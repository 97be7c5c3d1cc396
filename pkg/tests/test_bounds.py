import itertools
import math

import numpy as np
import pytest

from cobrah.bounds import (
    RegretBoundInputs,
    brute_force_delta_min,
    count_super_arms,
    expected_bad_rounds,
    theorem2_bound,
)
from cobrah.divergence import ConcentrationConfig
from cobrah.errors import GapDegenerate, InvalidBound, TooLarge
from cobrah.model import ArmSpec, DynamicsSpec, StateVec


def two_arm_inputs(**kw):
    base = dict(m=2, capacity=1, n_super_arms=2, L_g=1.0, diam_XTheta=1.0, delta_min=1.0)
    base.update(kw)
    return RegretBoundInputs(**base)


def hand_bound(n, delta=1.0):
    # default geometry: L_f=1, diam_X=sqrt 2, diam_XTheta=sqrt 3, d=3, L_p=3, sigma=1/2
    c_f = 8 * math.sqrt(2) * math.sqrt(math.pi) + 48 * math.sqrt(2) * 2 ** (1 / 3) * math.sqrt(3) * math.sqrt(3 * math.pi)
    # ceil(2/1) = 2 blocks, alpha = 2^-4, log(1/alpha) = 4 log 2
    B = c_f / math.sqrt(4 * math.log(2)) + 3 * 0.5 * math.sqrt(2)
    return 1 * 1 * 1 * 2 * (4 * B ** 2 * math.log(n) / delta ** 2 + 4 * math.pi ** 2 / 3)


def test_count_super_arms():
    assert count_super_arms(2, 1) == 2
    assert count_super_arms(4, 2) == 10
    assert count_super_arms(5, 5) == 31


def test_two_arm_bound_matches_hand_derivation():
    for n in (10, 600, 4000):
        assert theorem2_bound(two_arm_inputs(), n=n) == pytest.approx(hand_bound(n), rel=1e-12)


def test_bound_grows_with_log_n():
    inp = two_arm_inputs()
    const = theorem2_bound(inp, n=1)
    slope = theorem2_bound(inp, n=math.e) - const
    assert theorem2_bound(inp, n=math.e ** 2) - const == pytest.approx(2 * slope, rel=1e-12)


def test_halving_delta_quadruples_log_term():
    cfg = ConcentrationConfig()
    log_term = lambda d: expected_bad_rounds(2, 1, d, 100, cfg) - expected_bad_rounds(2, 1, d, 1, cfg)
    assert log_term(0.25) == pytest.approx(4 * log_term(0.5), rel=1e-12)


def test_bound_input_validation():
    with pytest.raises(InvalidBound):
        two_arm_inputs(delta_min=0.0)
    with pytest.raises(InvalidBound):
        two_arm_inputs(L_g=-1.0)
    with pytest.raises(InvalidBound):
        theorem2_bound(two_arm_inputs())
    with pytest.raises(InvalidBound):
        expected_bad_rounds(2, 2, 0.5, 10)


def static(theta):
    return ArmSpec(theta, DynamicsSpec.identity(), StateVec(0.0, 0.0))


def test_static_pair_gap():
    arms = [static(0.2), static(0.9)]
    actions = np.array([[1, 0], [0, 1], [1, 0], [0, 1]])
    Delta, delta = brute_force_delta_min(arms, actions, 1)
    g = [1 / (1 + math.exp(-t)) for t in (0.2, 0.9)]
    assert Delta == pytest.approx(g[1] - g[0], abs=1e-15)
    assert delta > 0


def test_identical_arms_are_degenerate():
    with pytest.raises(GapDegenerate):
        brute_force_delta_min([static(0.4)] * 3, np.ones((4, 3), dtype=int), 2)


def test_size_limits():
    with pytest.raises(TooLarge):
        brute_force_delta_min([static(0.1 * k) for k in range(5)], np.zeros((3, 5), dtype=int), 1)
    with pytest.raises(TooLarge):
        brute_force_delta_min([static(0.1), static(0.2)], np.zeros((21, 2), dtype=int), 1)


def second_enumeration(arms, actions, C):
    """Re-derivation with explicit state loops, no shared helpers."""
    T, m = actions.shape

    def path(theta, x0, dyn, acts):
        b, a = x0
        out = []
        for y in acts:
            b = min(max(dyn.d1 * b + dyn.q1 * y + dyn.k1, 0.0), 1.0)
            a = min(max(dyn.d2 * a + dyn.q2 * y + dyn.k2, 0.0), 1.0)
            out.append(1 / (1 + math.exp(-(theta + b - a))))
        return out

    g = [path(arm.theta, (arm.x0.b, arm.x0.a), arm.dynamics, actions[:, i]) for i, arm in enumerate(arms)]
    Delta = math.inf
    for t in range(T):
        sums = [sum(g[i][t] for i in s) for s in itertools.combinations(range(m), C)]
        top = max(sums)
        for v in sums:
            if 0 < top - v < Delta:
                Delta = top - v

    def kl(p, q):
        return p * math.log(p / q) + (1 - p) * math.log((1 - p) / (1 - q))

    delta = math.inf
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            alt = path(arms[j].theta, (arms[j].x0.b, arms[j].x0.a), arms[i].dynamics, actions[:, i])
            for t in range(1, T):
                if abs(g[i][t] - g[j][t]) < Delta / (2 * m):
                    continue
                rounds = [s for s in range(t) if actions[s, i]]
                if rounds:
                    delta = min(delta, sum(kl(g[i][s], alt[s]) for s in rounds) / len(rounds))
    return Delta, delta


def test_three_arm_instance_matches_second_enumeration():
    arms = [
        ArmSpec(0.3, DynamicsSpec(0.8, 0.7, -0.5, 0.4, 0.2, 0.1), StateVec(0.5, 0.2)),
        ArmSpec(0.9, DynamicsSpec(0.6, 0.9, -0.9, 0.2, 0.3, 0.05), StateVec(0.1, 0.6)),
        ArmSpec(0.5, DynamicsSpec(0.95, 0.5, -0.2, 0.6, 0.1, 0.2), StateVec(0.9, 0.9)),
    ]
    actions = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 0], [0, 1, 0]])
    got = brute_force_delta_min(arms, actions, 1)
    want = second_enumeration(arms, actions, 1)
    assert got == pytest.approx(want, rel=1e-12)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pepo_lab.datagen import CountTables
from pepo_lab.ensemble import (DegeneratePromptError, FactoredPolicySet, aggregate_numerator,
                               ensemble_size, estimated_gap, estimated_gap_table,
                               mean_std_numerator, output_policy, tie_upper_bound,
                               token_level_output, token_rewards, worst_case_reward)
from pepo_lab.member import MemberFit
from pepo_lab.tabular import HyperParams, TabularEnv, is_policy, softmax_policy


def member(pi, pi_ref, beta, zeta=None):
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    u = beta * np.log(pi / pi_ref)
    return MemberFit(u.copy(), u, beta, np.atleast_2d(pi_ref), None, None, "ascent", zeta)


def random_members(rng, X, A, L, beta):
    ref = rng.dirichlet(np.ones(A), size=X)
    return ref, [member(rng.dirichlet(np.ones(A), size=X), ref, beta) for _ in range(L)]


def test_ensemble_size():
    assert ensemble_size(1, 3, 0.05) == 15
    assert ensemble_size(1, 2, 0.99) == 3
    assert ensemble_size(1, 1, 0.5) == 3
    assert ensemble_size(1, 2, 0.999) >= 1
    with pytest.raises(ValueError):
        ensemble_size(1, 3, 1.0)


def test_tie_bound_examples():
    counts = CountTables(np.zeros((1, 3, 3)), np.zeros((1, 3, 3)),
                         np.array([[100, 100, 1e12]]), np.array([150]))
    env = TabularEnv.create([[1 / 3] * 3], rewards=[[0, 1, 1]], r_max=1)
    hp = HyperParams(beta=0.1, delta=0.05, gamma_count=4, L=3)
    assert np.all(tie_upper_bound(counts, hp, env, "constant", 0.1) == 0.1)
    p = tie_upper_bound(counts, hp, env)
    raw = 9 * 3 * 3 * math.e * math.log(150**2 * 3 / 0.05) / 104
    assert raw == pytest.approx(29.8845, abs=1e-3)
    assert p[0, 0] == 1.0
    assert p[0, 2] < 1e-8
    assert np.all((p >= 0) & (p <= 1))
    with pytest.raises(ValueError):
        tie_upper_bound(counts, hp, env, "loose")


def test_worst_case_reward_examples():
    ref = np.array([[0.5, 0.5]])
    m1, m2 = member([0.8, 0.2], ref, 1.0), member([0.6, 0.4], ref, 1.0)
    np.testing.assert_allclose(worst_case_reward([m1, m2], 0.0, 0.0),
                               [[math.log(1.2), math.log(0.4)]], atol=1e-12)
    np.testing.assert_array_equal(worst_case_reward([m1], 0.0, 5.0), m1.u)
    B = HyperParams.theoretical_B(0.5)
    assert B == pytest.approx(26.89013442202839, abs=1e-12)
    shifted = worst_case_reward([m1, m2], 0.1, B)
    np.testing.assert_allclose(worst_case_reward([m1, m2], 0.0, 0.0) - shifted, 2.689013442202839,
                               atol=1e-12)


def test_output_policy_examples():
    ref = np.array([[0.5, 0.5]])
    m1 = member([0.8, 0.2], ref, 1.0)
    agg = output_policy([m1], ref, 1.0, 0.0, 0.0)
    np.testing.assert_allclose(agg.pi_out, [[0.8, 0.2]], atol=1e-15)
    agg = output_policy([m1, member([0.6, 0.4], ref, 1.0)], ref, 1.0, 0.0, 0.0)
    np.testing.assert_allclose(agg.f_out, [[0.6, 0.2]], atol=1e-15)
    np.testing.assert_allclose(agg.pi_out, [[0.75, 0.25]], atol=1e-15)
    pen = output_policy(agg.members, ref, 1.0, 0.3, 7.0)
    np.testing.assert_allclose(pen.pi_out, agg.pi_out, atol=1e-14)


def test_degenerate_prompt():
    ref = np.array([[0.5, 0.5]])
    with np.errstate(divide="ignore"):
        m1 = member([1.0, 0.0], ref, 1.0)
        m2 = member([0.0, 1.0], ref, 1.0)
        with pytest.raises(DegeneratePromptError):
            output_policy([m1, m2], ref, 1.0, 0.0, 0.0)
    with pytest.raises(DegeneratePromptError):
        aggregate_numerator([[0.0, 0.0]], [m1], ref, 1.0, 0.0, 0.0)


def test_estimated_gap_examples():
    ref = np.array([[0.5, 0.5]])
    u1, u2 = np.array([[0.4700, -0.9163]]), np.array([[0.1823, -0.2231]])
    ms = [MemberFit(u, u, 1.0, ref, None, None, "ascent") for u in (u1, u2)]
    agg = output_policy(ms, ref, 1.0, 0.0, 0.0)
    assert estimated_gap(agg, 0, 0, 1) == pytest.approx(0.4054, abs=1e-12)
    single = output_policy(ms[:1], ref, 1.0, 0.0, 0.0)
    assert estimated_gap(single, 0, 0, 1) == pytest.approx(0.47 + 0.9163, abs=1e-12)
    assert estimated_gap_table(agg)[0, 0, 1] == estimated_gap(agg, 0, 0, 1)


def test_mean_std_examples():
    ref = np.array([[0.5, 0.5]])
    ms = [member([0.8, 0.2], ref, 1.0), member([0.6, 0.4], ref, 1.0)]
    f = mean_std_numerator(ms, 0.1, 0.0, 0.0, 1.0)
    assert f[0, 0] == pytest.approx(0.6858578643762690, abs=1e-12)
    np.testing.assert_allclose(mean_std_numerator(ms, 0.0, 0.0, 0.0, 1.0), [[0.7, 0.3]])
    same = [ms[0], ms[0]]
    np.testing.assert_allclose(mean_std_numerator(same, 5.0, 0.0, 0.0, 1.0), [[0.8, 0.2]])
    # sample std for L = 2 is |p1 - p2| / sqrt(2): eta = 1 undercuts the minimum,
    # eta = 1 / sqrt(2) reproduces it
    assert np.all(mean_std_numerator(ms, 1.0, 0.0, 0.0, 1.0) <= [[0.6, 0.2]])
    np.testing.assert_allclose(mean_std_numerator(ms, 2**-0.5, 0.0, 0.0, 1.0), [[0.6, 0.2]],
                               atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_closed_form_equivalence_random(seed):
    rng = np.random.default_rng(seed)
    X, A, L = rng.integers(1, 4), rng.integers(2, 6), rng.integers(1, 5)
    beta = float(rng.uniform(0.05, 2))
    ref, ms = random_members(rng, X, A, L, beta)
    p = rng.uniform(0, 1, size=(X, A))
    B = float(rng.uniform(0, 3))
    agg = output_policy(ms, ref, beta, p, B)
    assert is_policy(agg.pi_out)
    r_minus = worst_case_reward(ms, p, B)
    np.testing.assert_allclose(agg.pi_out, softmax_policy(r_minus, ref, beta), atol=1e-10)
    assert agg.equivalence_error <= 1e-10
    # dominance: every member bounds the numerator
    for m in ms:
        assert np.all(agg.f_out <= m.policy * (1 + 1e-12))
    Z = agg.f_out.sum(axis=1)
    assert np.all((Z > 0) & (Z <= 1 + 1e-12))
    D = estimated_gap_table(agg)
    assert np.all(D + D.transpose(0, 2, 1) <= 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_monotone_pessimism(seed):
    rng = np.random.default_rng(seed)
    A = int(rng.integers(2, 6))
    ref, ms = random_members(rng, 1, A, 3, 0.5)
    p = rng.uniform(0, 1, size=(1, A))
    base = output_policy(ms, ref, 0.5, p, 1.0).pi_out
    a = int(rng.integers(A))
    p2 = p.copy()
    p2[0, a] = min(1.0, p2[0, a] + rng.uniform(0.01, 0.5))
    after = output_policy(ms, ref, 0.5, p2, 1.0).pi_out
    for b in range(A):
        if b != a:
            assert after[0, a] / after[0, b] <= base[0, a] / base[0, b] * (1 + 1e-12)


def test_mean_std_lower_bounds_min_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        ref, ms = random_members(rng, 2, 4, 2, 1.0)
        mins = np.minimum(ms[0].policy, ms[1].policy)
        assert np.all(mean_std_numerator(ms, 1.0, 0.0, 0.0, 1.0) <= mins + 1e-15)
        np.testing.assert_allclose(mean_std_numerator(ms, 2**-0.5, 0.0, 0.0, 1.0), mins, atol=1e-12)


def test_centering_scales_members():
    ref = np.array([[0.5, 0.5]])
    m1 = member([0.8, 0.2], ref, 1.0, zeta=np.array([0.3]))
    m2 = member([0.6, 0.4], ref, 1.0, zeta=np.array([-0.2]))
    agg = output_policy([m1, m2], ref, 1.0, 0.0, 0.0, centering=True)
    expect = np.minimum(m1.policy * math.exp(-0.3), m2.policy * math.exp(0.2))
    np.testing.assert_allclose(agg.f_out, expect, atol=1e-14)


def test_token_level_single_stage_matches_output_policy():
    rng = np.random.default_rng(4)
    fps = FactoredPolicySet.random(rng, 1, 3, 3)
    out = token_level_output(fps)[0]
    ms = [member(m[0], fps.ref[0], 1.0) for m in fps.members]
    np.testing.assert_allclose(out, output_policy(ms, fps.ref[0], 1.0, 0.0, 0.0).pi_out, atol=1e-14)


def test_token_level_identical_members():
    rng = np.random.default_rng(5)
    fps = FactoredPolicySet.random(rng, 3, 2, 1)
    fps.members.append(fps.members[0])
    for got, want in zip(token_level_output(fps), fps.members[0]):
        np.testing.assert_allclose(got, want, atol=1e-15)


def test_token_reward_inequality_random():
    rng = np.random.default_rng(6)
    for _ in range(100):
        H, k, L = int(rng.integers(1, 5)), int(rng.integers(2, 4)), int(rng.integers(2, 4))
        fps = FactoredPolicySet.random(rng, H, k, L, beta=float(rng.uniform(0.1, 2)))
        for traj in fps.trajectories():
            stagewise, whole = token_rewards(fps, traj)
            assert stagewise <= whole + 1e-12


def test_factored_policy_validation():
    with pytest.raises(ValueError):
        FactoredPolicySet(1, 2, [np.array([[0.5, 0.6]])], [])

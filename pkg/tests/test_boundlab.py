import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uosda import boundlab as bl

seeds = st.integers(0, 2**32 - 1)


def inst_from(seed, m=None, K=None):
    rng = np.random.default_rng(seed)
    m = m or int(rng.integers(1, 5))
    K = K or int(rng.integers(1, 3))
    return bl.random_instance(rng, m, K)


def matched_instance(rng, m, K, pi):
    """Source marginal equal to the target known-class marginal."""
    marg = rng.dirichlet(np.ones(m))
    ps = marg[:, None] * rng.dirichlet(np.ones(K), size=m)
    pt = np.zeros((m, K + 1))
    pt[:, :K] = (1 - pi) * marg[:, None] * rng.dirichlet(np.ones(K), size=m)
    pt[:, K] = pi * rng.dirichlet(np.ones(m))
    return bl.DiscreteInstance(K, ps / ps.sum(), pt / pt.sum())


# -- independent oracles ------------------------------------------------------------

def walk_partial_risks(inst, h):
    """Loop over every (point, class) cell of the tables."""
    K = inst.K
    known_err = known_mass = unk_err = unk_mass = s_u = t_u = 0.0
    for x in range(inst.m):
        for y in range(K):
            s_u += inst.p_src[x, y] * (h[x] != K)
        for y in range(K + 1):
            w = inst.p_tgt[x, y]
            t_u += w * (h[x] != K)
            if y < K:
                known_mass += w
                known_err += w * (h[x] != y)
            else:
                unk_mass += w
                unk_err += w * (h[x] != K)
    return known_err / known_mass, (unk_err / unk_mass if unk_mass > 0 else 0.0), s_u, t_u


def naive_hdh(P1, P2, K):
    m = len(P1)
    best = 0.0
    for h in itertools.product(range(K + 1), repeat=m):
        for g in itertools.product(range(K + 1), repeat=m):
            dis = np.array([a != b for a, b in zip(h, g)], dtype=float)
            best = max(best, abs(dis @ P1 - dis @ P2))
    return best


def naive_tensor(inst, c):
    P1, P2 = inst.source_marginal(), inst.target_known_marginal()
    best = 0.0
    for g in itertools.product(range(inst.K + 1), repeat=inst.m):
        dis = np.array([a != b for a, b in zip(c, g)], dtype=float)
        best = max(best, abs(dis @ P1 - dis @ P2))
    return best


def second_lambda(inst):
    K = inst.K
    best = None
    for code in range((K + 1) ** inst.m):
        h = [(code // (K + 1) ** j) % (K + 1) for j in range(inst.m)]
        src = sum(inst.p_src[x, y] for x in range(inst.m) for y in range(K) if h[x] != y)
        tgt = sum(inst.p_tgt[x, y] for x in range(inst.m) for y in range(K) if h[x] != y)
        val = src + tgt / inst.p_tgt[:, :K].sum()
        best = val if best is None else min(best, val)
    return best


# -- enumeration -------------------------------------------------------------------

def test_hypothesis_counts():
    assert len(list(bl.enumerate_hypotheses(1, 1))) == 2
    assert len(list(bl.enumerate_hypotheses(2, 2))) == 9
    assert bl.constant_unknown(3, 2) in set(bl.enumerate_hypotheses(3, 2))


def test_enumeration_is_lexicographic_and_unique():
    hs = list(bl.enumerate_hypotheses(3, 2))
    assert hs == sorted(set(hs))


def test_guard():
    with pytest.raises(bl.SizeError):
        bl.enumerate_hypotheses(13, 2)
    with pytest.raises(bl.SizeError):
        bl.hdh_distance(np.ones(21) / 21, np.ones(21) / 21, 1)


def test_instance_validation():
    with pytest.raises(ValueError):
        bl.DiscreteInstance(1, [[0.5], [0.4]], [[0.5, 0.0], [0.5, 0.0]])
    with pytest.raises(ValueError):
        bl.DiscreteInstance(2, [[1.0]], [[1.0, 0.0, 0.0]])


# -- risks -------------------------------------------------------------------------

def test_risk_of_true_labeling_is_zero():
    inst = bl.DiscreteInstance(2, [[0.5, 0], [0, 0.5]], [[0.6, 0, 0], [0, 0.4, 0]])
    assert bl.risk(inst, (0, 1), "source") == 0.0
    assert bl.risk(inst, (0, 1), "target") == 0.0


@given(seeds)
def test_constant_unknown_source_risk_is_one(seed):
    inst = inst_from(seed)
    assert bl.risk(inst, bl.constant_unknown(inst.m, inst.K), "source") == pytest.approx(1.0, abs=1e-12)


def test_risk_matches_monte_carlo():
    rng = np.random.default_rng(99)
    inst = bl.random_instance(rng, 4, 2)
    h = (0, 2, 1, 2)
    n = 10**6
    for which, table in (("source", inst.p_src), ("target", inst.p_tgt)):
        flat = table.reshape(-1)
        cells = rng.choice(flat.size, size=n, p=flat / flat.sum())
        x, y = np.divmod(cells, table.shape[1])
        est = np.mean(np.asarray(h)[x] != y)
        exact = bl.risk(inst, h, which)
        sigma = np.sqrt(max(exact * (1 - exact), 1e-12) / n)
        assert abs(est - exact) <= 3 * sigma + 1e-12


@given(seeds)
def test_partial_risks_match_table_walk(seed):
    inst = inst_from(seed)
    for h in bl.enumerate_hypotheses(inst.m, inst.K):
        np.testing.assert_allclose(bl.partial_risks(inst, h), walk_partial_risks(inst, h), rtol=0, atol=1e-12)


@given(seeds)
def test_constant_unknown_partial_risks(seed):
    inst = inst_from(seed)
    _, l_t_k1, l_s_u, l_t_u = bl.partial_risks(inst, bl.constant_unknown(inst.m, inst.K))
    assert l_t_k1 == 0.0 and l_t_u == 0.0 and l_s_u == 0.0


def test_pi_zero_target_risk_equals_known_partial():
    rng = np.random.default_rng(3)
    inst = matched_instance(rng, 3, 2, 0.0)
    for h in bl.enumerate_hypotheses(3, 2):
        assert bl.risk(inst, h, "target") == pytest.approx(bl.partial_risks(inst, h)[0], abs=1e-15)


def test_all_unknown_target_is_degenerate():
    inst = bl.DiscreteInstance(1, [[1.0]], [[0.0, 1.0]])
    with pytest.raises(bl.DegenerateInstance):
        bl.partial_risks(inst, (0,))
    with pytest.raises(bl.DegenerateInstance):
        bl.check_target_bound(inst, 0.0)


# -- discrepancies -------------------------------------------------------------------

def test_hdh_examples():
    assert bl.hdh_distance([0.2, 0.8], [0.2, 0.8], 2) == 0.0
    assert bl.hdh_distance([1.0], [1.0], 3) == 0.0
    assert bl.hdh_distance([1.0, 0.0], [0.0, 1.0], 1) == 1.0
    assert naive_hdh(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1) == 1.0


@given(seeds, st.integers(1, 3), st.integers(1, 2))
def test_hdh_matches_pair_enumeration(seed, m, K):
    rng = np.random.default_rng(seed)
    P1, P2 = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(m))
    assert bl.hdh_distance(P1, P2, K) == pytest.approx(naive_hdh(P1, P2, K), abs=1e-15)


@given(seeds, st.integers(1, 3), st.integers(1, 2))
def test_tensor_matches_brute_force(seed, m, K):
    inst = inst_from(seed, m, K)
    for c in bl.enumerate_hypotheses(m, K):
        assert bl.tensor_discrepancy(inst, c) == pytest.approx(naive_tensor(inst, c), abs=1e-15)


@given(seeds)
def test_discrepancies_ordered_and_bounded(seed):
    inst = inst_from(seed)
    hdh = bl.hdh_distance(inst.source_marginal(), inst.target_known_marginal(), inst.K)
    assert 0 <= hdh <= 1 + 1e-12
    for c in bl.enumerate_hypotheses(inst.m, inst.K):
        t = bl.tensor_discrepancy(inst, c)
        assert 0 <= t <= hdh + 1e-12


def test_identical_marginals_zero_tensor():
    inst = matched_instance(np.random.default_rng(0), 3, 2, 0.2)
    assert bl.tensor_discrepancy(inst, (0, 1, 2)) == pytest.approx(0.0, abs=1e-15)


# -- lambda -----------------------------------------------------------------------

def test_lambda_zero_on_consistent_labeling():
    inst = bl.DiscreteInstance(2, [[0.5, 0], [0, 0.5]], [[0.4, 0, 0], [0, 0.4, 0.2]])
    assert bl.lambda_term(inst) == 0.0


@given(seeds)
def test_lambda_matches_second_enumeration(seed):
    inst = inst_from(seed)
    lam = bl.lambda_term(inst)
    assert lam >= 0
    assert lam == pytest.approx(second_lambda(inst), abs=1e-12)


# -- open set terms ------------------------------------------------------------------

def test_open_set_terms_zero_with_matched_marginals_and_no_unknowns():
    inst = matched_instance(np.random.default_rng(1), 4, 2, 0.0)
    for h in bl.enumerate_hypotheses(4, 2):
        assert bl.open_set_terms(inst, h, 0.0)[0] == pytest.approx(0.0, abs=1e-12)


@given(seeds)
def test_constant_hypotheses_open_set_terms(seed):
    inst = inst_from(seed)
    # never predicting known: nothing is lost against the unknown label
    assert bl.open_set_terms(inst, bl.constant_unknown(inst.m, inst.K), 0.0) == (0.0, 0.0)
    # always predicting a known class: both unknown-label risks are 1
    delta, delta_eps = bl.open_set_terms(inst, (0,) * inst.m, 0.0)
    assert delta == pytest.approx(1 / inst.p_tgt[:, : inst.K].sum() - 1, rel=1e-12, abs=1e-12)
    assert delta_eps == max(0.0, delta)


@given(seeds, st.floats(0, 1))
def test_open_set_terms_match_table_walk(seed, eps):
    inst = inst_from(seed)
    for h in bl.enumerate_hypotheses(inst.m, inst.K):
        _, _, s_u, t_u = walk_partial_risks(inst, h)
        known = sum(inst.p_tgt[x, y] for x in range(inst.m) for y in range(inst.K))
        delta, delta_eps = bl.open_set_terms(inst, h, eps)
        assert delta == pytest.approx(t_u / known - s_u, rel=1e-12, abs=1e-12)
        assert delta_eps == max(-eps, delta)


# -- inequalities -------------------------------------------------------------------

@given(seeds, st.floats(0, 0.5))
def test_target_bound_every_hypothesis(seed, eps):
    inst = inst_from(seed)
    for r in bl.check_target_bound(inst, eps):
        assert r.certified, r
        assert r.rhs == pytest.approx(r.source_risk + 2 * r.tensor_disc + r.lambda_term + r.delta_eps, abs=1e-15)


def test_target_bound_perfect_hypothesis_identical_domains():
    inst = bl.DiscreteInstance(2, [[0.5, 0], [0, 0.5]], [[0.5, 0, 0], [0, 0.5, 0]])
    r = next(r for r in bl.check_target_bound(inst, 0.0) if r.hypothesis == (0, 1))
    assert r.lhs == 0.0 and r.slack >= 0


@given(seeds)
def test_constant_unknown_certified(seed):
    inst = inst_from(seed)
    r = next(r for r in bl.check_target_bound(inst, 0.0) if r.hypothesis == bl.constant_unknown(inst.m, inst.K))
    assert r.certified


@given(seeds, st.integers(1, 4), st.integers(1, 2), st.floats(0, 0.9))
def test_diff_bound_tight_with_matched_marginals(seed, m, K, pi):
    inst = matched_instance(np.random.default_rng(seed), m, K, pi)
    for h in bl.enumerate_hypotheses(m, K):
        diff_b, hdh_low = bl.check_diff_bound(inst, h)
        assert diff_b == pytest.approx(0.0, abs=1e-9)
        assert hdh_low >= -1e-9


def test_diff_bound_pi_zero_reduces():
    inst = matched_instance(np.random.default_rng(5), 3, 1, 0.0)
    for h in bl.enumerate_hypotheses(3, 1):
        diff_b, hdh_low = bl.check_diff_bound(inst, h)
        assert diff_b == pytest.approx(hdh_low, abs=1e-15)


@given(seeds)
def test_decomposition_identity(seed):
    inst = inst_from(seed)
    for h in bl.enumerate_hypotheses(inst.m, inst.K):
        assert bl.check_decomposition(inst, h) <= 1e-12
    assert bl.check_decomposition(inst, bl.constant_unknown(inst.m, inst.K)) <= 1e-15


def test_random_instances_cover_edge_cases():
    pis = [bl.random_instance(np.random.default_rng([0, i]), 3, 2).pi for i in range(200)]
    assert any(p == 0.0 for p in pis) and any(p > 0.3 for p in pis)


# -- sweep and counterexamples -----------------------------------------------------------

def test_sweep_small():
    s = bl.sweep(50, 4, 2, 0.0, seed=11)
    assert s.passed and s.instances == 50 and s.hypotheses > 50
    assert s.max_decomp_residual <= 1e-12
    assert s.lines()[0] == "instances checked: 50"


def test_sweep_empty_is_vacuous():
    s = bl.sweep(0, 4, 2, 0.0, seed=0)
    assert s.passed and s.hypotheses == 0


def test_flipped_delta_is_caught(monkeypatch, tmp_path):
    honest = bl.open_set_terms

    def flipped(inst, h, eps):
        delta, _ = honest(inst, h, eps)
        return -delta, max(-eps, -delta)

    monkeypatch.setattr(bl, "open_set_terms", flipped)
    s = bl.sweep(200, 4, 2, 0.0, seed=0)
    assert not s.passed
    doc = s.first_counterexample
    assert set(doc) >= {"points", "K", "p_src", "p_tgt", "hypothesis", "terms", "slack"}
    bl.write_counterexample(doc, tmp_path / "c.json")
    back = json.loads((tmp_path / "c.json").read_text())
    inst = bl.DiscreteInstance(back["K"], back["p_src"], back["p_tgt"])
    monkeypatch.setattr(bl, "open_set_terms", honest)
    assert all(r.certified for r in bl.check_target_bound(inst, 0.0))

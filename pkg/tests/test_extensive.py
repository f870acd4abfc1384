"""Extensive-form oracle checks against hand-solvable and enumerable cases.

The two-asset two-stage instances admit an exact independent solution: the
objective is piecewise linear in the single allocation weight, with kinks
only where two scenario wealth lines cross, so minimizing over the crossing
points and endpoints is exact.
"""

import numpy as np
import pytest

from msrisk.dr import MomentAmbiguitySet
from msrisk.extensive import (
    cost_to_go_oracle,
    dr_cost_to_go_oracle,
    dr_subtree_value,
    extensive_form_dr,
    extensive_form_marsrm,
    subtree_value,
)
from msrisk.lp import LpError
from msrisk.risk import DiscreteDistribution, PreferenceDistribution, cvar
from msrisk.scenario import (
    RngStream,
    ScenarioLattice,
    build_lognormal_lattice,
    preset_preference,
)


def two_stage_lattice(seed=0, assets=2, K=4, f=0.0):
    return build_lognormal_lattice(
        2, assets, 0.6, 0.3, 0.5, K, RngStream(seed), transaction_cost=f
    )


def stage_returns(lattice, t=2):
    return np.array([-r.E[0, : lattice.num_vars(1)] for r in lattice.stage(t)])


def exact_two_stage_value(returns, risk_fn):
    """Independent oracle for two assets: scan crossing points of wealth lines.

    ``risk_fn(values)`` maps the equiprobable stage-2 cost vector to the stage
    risk; the overall objective is ``-1 + risk_fn(-returns @ x)`` minimized
    over the simplex, piecewise linear in the first weight.
    """
    a, b = returns[:, 0], returns[:, 1]
    candidates = {0.0, 1.0}
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            denom = (a[i] - b[i]) - (a[j] - b[j])
            if abs(denom) > 1e-14:
                w = (b[j] - b[i]) / denom
                if 0.0 < w < 1.0:
                    candidates.add(float(w))
    best = np.inf
    for w in candidates:
        wealth = a * w + b * (1.0 - w)
        best = min(best, -1.0 + risk_fn(-wealth))
    return best


class TestMarsrmOracle:
    def test_deterministic_two_stage(self):
        lat = two_stage_lattice(K=1)
        r = stage_returns(lat)[0]
        value = extensive_form_marsrm(lat, prefs=preset_preference("risk_neutral"))
        assert abs(value - (-1.0 - np.max(r))) < 1e-8

    def test_half_cvar_two_stage_vs_crossing_scan(self):
        for seed in range(4):
            lat = two_stage_lattice(seed=seed, K=4)
            rets = stage_returns(lat)
            pref = preset_preference("dirac", lam=0.0, alpha=0.5)
            value = extensive_form_marsrm(lat, prefs=pref)
            want = exact_two_stage_value(
                rets,
                lambda v: cvar(DiscreteDistribution.from_values(v), 0.5),
            )
            assert abs(value - want) < 1e-8

    def test_mixture_pref_vs_crossing_scan(self):
        lat = two_stage_lattice(seed=7, K=5)
        rets = stage_returns(lat)
        pref = PreferenceDistribution.from_points(
            [(1.0, 0.0), (0.2, 0.6)], [0.4, 0.6]
        )

        def risk(v):
            d = DiscreteDistribution.from_values(v)
            inner = 0.2 * d.mean() + 0.8 * cvar(d, 0.6)
            return 0.4 * d.mean() + 0.6 * inner

        want = exact_two_stage_value(rets, risk)
        assert abs(extensive_form_marsrm(lat, prefs=pref) - want) < 1e-8

    def test_risk_aversion_monotonicity(self):
        lat = two_stage_lattice(seed=3, K=4)
        neutral = extensive_form_marsrm(lat, prefs=preset_preference("risk_neutral"))
        for alpha in (0.25, 0.5, 0.75):
            averse = extensive_form_marsrm(
                lat, prefs=preset_preference("dirac", lam=0.0, alpha=alpha)
            )
            assert neutral <= averse + 1e-9

    def test_three_stage_matches_nested_enumeration(self):
        # risk-neutral three-stage: extensive form equals the expected-value
        # recursion, solvable by backward induction on a fine simplex grid of
        # the wealth multiplier (wealth factorizes for f=0)
        lat = build_lognormal_lattice(3, 2, 0.5, 0.25, 0.5, 3, RngStream(1))
        value = extensive_form_marsrm(lat, prefs=preset_preference("risk_neutral"))
        # with f=0 and risk neutrality the optimal policy is all-in on the
        # best expected asset each stage, so wealth compounds multiplicatively:
        # V = -1 - max(mean ret2) * (1 + max(mean ret3))
        r2 = stage_returns(lat, 2)
        r3 = np.array([-r.E[0, :2] for r in lat.stage(3)])
        want = -1.0 - np.max(r2.mean(axis=0)) * (1.0 + np.max(r3.mean(axis=0)))
        assert abs(value - want) < 1e-7

    def test_node_order_invariance(self):
        lat = two_stage_lattice(seed=5, K=4)
        perm = [2, 0, 3, 1]
        stages = [lat.stage(1), [lat.stage(2)[j] for j in perm]]
        lat2 = ScenarioLattice(stages)
        pref = preset_preference("dirac", lam=0.3, alpha=0.5)
        a = extensive_form_marsrm(lat, prefs=pref)
        b = extensive_form_marsrm(lat2, prefs=pref)
        assert abs(a - b) < 1e-9

    def test_size_guard(self):
        lat = build_lognormal_lattice(6, 2, 0.6, 0.3, 0.5, 12, RngStream(0))
        with pytest.raises(LpError):
            extensive_form_marsrm(lat, prefs=preset_preference("risk_neutral"))

    def test_subtree_value_terminal(self):
        lat = two_stage_lattice(seed=2, K=3)
        x1 = np.array([0.25, 0.75])
        rets = stage_returns(lat)
        for j in range(3):
            v = subtree_value(lat, 2, j, x1, prefs=preset_preference("risk_neutral"))
            assert abs(v - (-(rets[j] @ x1))) < 1e-9

    def test_cost_to_go_oracle_aggregates(self):
        lat = two_stage_lattice(seed=2, K=4)
        pref = preset_preference("dirac", lam=0.0, alpha=0.5)
        x1 = np.array([0.5, 0.5])
        vals = -stage_returns(lat) @ x1
        want = cvar(DiscreteDistribution.from_values(vals), 0.5)
        got = cost_to_go_oracle(lat, 2, x1, prefs=pref)
        assert abs(got - want) < 1e-9


class TestDrOracle:
    def test_singleton_support_equals_dirac(self):
        lat = two_stage_lattice(seed=4, K=4)
        amb = MomentAmbiguitySet.from_empirical([(0.3, 0.5)], [1.0])
        pref = preset_preference("dirac", lam=0.3, alpha=0.5)
        a = extensive_form_dr(lat, amb)
        b = extensive_form_marsrm(lat, prefs=pref)
        assert abs(a - b) < 1e-7

    def test_pinned_weights_equal_marsrm(self):
        rng = np.random.default_rng(8)
        lat = two_stage_lattice(seed=8, K=3)
        support = np.column_stack([rng.uniform(0, 1, 6), rng.uniform(0, 0.9, 6)])
        q = rng.dirichlet(np.ones(6) * 5)
        amb = MomentAmbiguitySet.from_empirical(support, q)
        assert amb.pinned_q() is not None
        a = extensive_form_dr(lat, amb)
        b = extensive_form_marsrm(
            lat, prefs=PreferenceDistribution.from_points(support, q)
        )
        assert abs(a - b) < 1e-6

    def test_dr_dominates_member(self):
        rng = np.random.default_rng(9)
        lat = two_stage_lattice(seed=9, K=4)
        support = np.column_stack([rng.uniform(0, 1, 4), rng.uniform(0, 0.9, 4)])
        q = rng.dirichlet(np.ones(4))
        amb = MomentAmbiguitySet.from_empirical(support, q)
        dr_value = extensive_form_dr(lat, amb)
        member = extensive_form_marsrm(
            lat, prefs=PreferenceDistribution.from_points(support, q)
        )
        assert dr_value >= member - 1e-7

    def test_dr_subtree_and_aggregate(self):
        lat = two_stage_lattice(seed=10, K=3)
        amb = MomentAmbiguitySet.from_empirical([(0.5, 0.4)], [1.0])
        x1 = np.array([0.7, 0.3])
        rets = stage_returns(lat)
        for j in range(3):
            v = dr_subtree_value(lat, 2, j, x1, amb)
            assert abs(v - (-(rets[j] @ x1))) < 1e-9
        vals = -rets @ x1
        d = DiscreteDistribution.from_values(vals)
        want = 0.5 * d.mean() + 0.5 * cvar(d, 0.4)
        assert abs(dr_cost_to_go_oracle(lat, 2, x1, amb) - want) < 1e-7

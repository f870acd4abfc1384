import numpy as np
import pytest


from msrisk.scenario import (
    voronoi_weights,
    RngStream,
    ScenarioLattice,
    StageRealization,
    build_lognormal_lattice,
    build_preference_voronoi,
    preset_preference,
)


def small_lattice(seed=0, T=3, assets=2, K=4, f=0.0, sigma=0.3):
    return build_lognormal_lattice(
        T, assets, 0.6, sigma, 0.5, K, RngStream(seed), transaction_cost=f
    )


class TestRngStream:
    def test_streams_are_independent(self):
        s = RngStream(42)
        a = s.generator("lattice", 2).random(4)
        b = s.generator("forward", 2).random(4)
        c = s.generator("lattice", 3).random(4)
        assert not np.allclose(a, b)
        assert not np.allclose(a, c)

    def test_reproducible(self):
        a = RngStream(7).generator("preference", 1).random(8)
        b = RngStream(7).generator("preference", 1).random(8)
        np.testing.assert_array_equal(a, b)

    def test_unknown_purpose(self):
        with pytest.raises(ValueError):
            RngStream(0).generator("nope")


class TestLognormalLattice:
    def test_deterministic_given_seed(self):
        l1, l2 = small_lattice(3), small_lattice(3)
        for t in range(1, 4):
            for r1, r2 in zip(l1.stage(t), l2.stage(t)):
                np.testing.assert_array_equal(r1.E, r2.E)
                np.testing.assert_array_equal(r1.A, r2.A)

    def test_forward_stream_does_not_perturb_lattice(self):
        stream = RngStream(5)
        stream.generator("forward").random(1000)  # draws from another purpose
        l1 = build_lognormal_lattice(3, 2, 0.6, 0.3, 0.5, 4, RngStream(5))
        l2 = build_lognormal_lattice(3, 2, 0.6, 0.3, 0.5, 4, stream)
        for r1, r2 in zip(l1.stage(2), l2.stage(2)):
            np.testing.assert_array_equal(r1.E, r2.E)

    def test_equiprobable_exact(self):
        lat = small_lattice(K=7)
        for t in (2, 3):
            assert lat.is_equiprobable(t)
            assert np.all(lat.probs(t) == 1.0 / 7)

    def test_zero_sigma_degenerates(self):
        lat = small_lattice(sigma=0.0)
        for r in lat.stage(2):
            np.testing.assert_allclose(-r.E[0, :2], np.exp(0.6), atol=1e-12)

    def test_log_return_sampling_distribution(self):
        # sample mean of log returns within 3 standard errors per component
        mu, sig, K = 0.6, 0.3, 4000
        lat = build_lognormal_lattice(2, 4, mu, sig, 0.5, K, RngStream(11))
        rets = np.array([-r.E[0, :4] for r in lat.stage(2)])
        logs = np.log(rets)
        se = sig / np.sqrt(K)
        assert np.all(np.abs(logs.mean(axis=0) - mu) < 3 * se)

    def test_two_stage_single_scenario_is_deterministic(self):
        lat = small_lattice(T=2, K=1)
        assert lat.size(2) == 1
        assert lat.stage(2)[0].prob == 1.0

    def test_non_psd_corr_rejected(self):
        corr = np.array([[1.0, 0.99, -0.99], [0.99, 1.0, 0.99], [-0.99, 0.99, 1.0]])
        with pytest.raises(ValueError):
            build_lognormal_lattice(2, 3, 0.6, 0.3, corr, 4, RngStream(0))

    def test_block_shapes(self):
        lat = small_lattice(T=3, assets=2)
        r1 = lat.stage(1)[0]
        assert r1.num_vars == 2 and r1.A.shape == (1, 2)
        r2 = lat.stage(2)[0]
        assert r2.num_vars == 8 and r2.A.shape == (5, 8) and r2.prev_dim == 2
        r3 = lat.stage(3)[0]
        assert r3.prev_dim == 8


class TestVoronoiPreference:
    def test_single_center_is_dirac(self):
        pref = build_preference_voronoi(1, 50, rng=RngStream(1))
        assert pref.size == 1
        np.testing.assert_allclose(pref.probs, [1.0])

    def test_counts_sum_exactly(self):
        pref = build_preference_voronoi(6, 500, rng=RngStream(2))
        assert pref.probs.sum() == 1.0  # counting measure: exact
        assert np.all(pref.probs >= 0.0)

    def test_symmetric_centers_split_evenly(self):
        # centers mirror-symmetric under uniform sampling: q ~ 1/2 each,
        # within three standard errors of the binomial split
        rng = np.random.default_rng(3)
        n = 4000
        samples = np.column_stack([rng.uniform(0, 1, n), np.full(n, 0.5)])
        q = voronoi_weights([[0.2, 0.5], [0.8, 0.5]], samples)
        se = 0.5 / np.sqrt(n)
        assert abs(q[0] - 0.5) < 3 * se
        assert q.sum() == 1.0

    def test_empty_cell_allowed(self):
        # with many centers and few samples some cells stay empty
        pref = build_preference_voronoi(40, 45, rng=RngStream(4))
        assert np.any(pref.probs == 0.0)
        assert pref.probs.sum() == 1.0

    def test_stagewise_samples_share_centers(self):
        a = build_preference_voronoi(5, 200, rng=RngStream(9), stage=2)
        b = build_preference_voronoi(5, 200, rng=RngStream(9), stage=3)
        np.testing.assert_array_equal(a.support, b.support)
        assert not np.array_equal(a.probs, b.probs)


class TestPresets:
    def test_values(self):
        cases = {
            "risk_neutral": (1.0, 0.0),
            "mild_averse": (0.5, 0.8),
            "strong_averse": (0.8, 0.8),
        }
        for name, (lam, alpha) in cases.items():
            pref = preset_preference(name)
            np.testing.assert_allclose(pref.support, [[lam, alpha]])

    def test_dirac(self):
        pref = preset_preference("dirac", lam=0.25, alpha=0.5)
        np.testing.assert_allclose(pref.support, [[0.25, 0.5]])

    def test_unknown(self):
        with pytest.raises(ValueError):
            preset_preference("other")


def test_lattice_validation():
    r = StageRealization(
        c=np.zeros(2), b=np.zeros(1), A=np.ones((1, 2)), E=np.zeros((1, 0)), prob=0.5
    )
    with pytest.raises(ValueError):
        ScenarioLattice([[r, r]])  # stage 1 must be a single realization
    with pytest.raises(ValueError):
        StageRealization(
            c=np.zeros(3), b=np.zeros(1), A=np.ones((1, 2)), E=np.zeros((1, 0)), prob=1.0
        )

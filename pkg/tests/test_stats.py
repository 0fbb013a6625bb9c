import math

import numpy as np
import pytest

import cellchain as cc
from cellchain.stats import InsufficientDataError


def make_log(times, pairs=None, horizon=100.0, eps=0.01):
    times = np.asarray(times, dtype=float)
    pairs = np.ones(len(times), dtype=np.int64) if pairs is None else np.asarray(pairs)
    return cc.CollisionLog(
        times=times,
        pairs=pairs,
        e_before_left=np.full(len(times), 0.5),
        e_before_right=np.full(len(times), 2.0),
        horizon_micro=horizon,
        epsilon=eps,
    )


def make_path(times, values, horizon):
    return cc.EnergyPath(
        times=np.asarray(times, dtype=float),
        values=np.asarray(values, dtype=float),
        clock="macro",
        horizon=horizon,
    )


class TestEmpiricalDistribution:
    def test_time_zero_is_point_mass(self):
        chain = cc.build_chain((0.5, 2.0))
        paths = [make_path([0.3], [[0.5, 2.0], [2.0, 0.5]], 1.0) for _ in range(5)]
        emp = cc.empirical_distribution(paths, 0.0, chain)
        assert emp.counts[chain.initial_index] == 5
        assert emp.total == 5

    def test_counts_cadlag_value(self):
        chain = cc.build_chain((0.5, 2.0))
        paths = [
            make_path([0.3], [[0.5, 2.0], [2.0, 0.5]], 1.0),
            make_path([0.7], [[0.5, 2.0], [2.0, 0.5]], 1.0),
        ]
        emp = cc.empirical_distribution(paths, 0.5, chain)
        assert emp.counts[chain.index[(2.0, 0.5)]] == 1
        assert emp.counts[chain.index[(0.5, 2.0)]] == 1

    def test_short_path_rejected(self):
        chain = cc.build_chain((0.5, 2.0))
        paths = [make_path([], [[0.5, 2.0]], 0.25)]
        with pytest.raises(ValueError, match="horizon"):
            cc.empirical_distribution(paths, 0.5, chain)

    def test_foreign_state_rejected(self):
        chain = cc.build_chain((0.5, 2.0))
        paths = [make_path([], [[0.5, 3.0]], 1.0)]
        with pytest.raises(ValueError, match="state space"):
            cc.empirical_distribution(paths, 0.5, chain)

    def test_chain_built_when_omitted(self):
        paths = [make_path([], [[0.5, 2.0]], 1.0)]
        emp = cc.empirical_distribution(paths, 1.0)
        assert emp.chain.states == ((0.5, 2.0), (2.0, 0.5))

    def test_all_equal_energies_point_mass_at_every_time(self):
        cfg = cc.SystemConfig(
            n_particles=3, epsilon=0.1, lam=1.0, energies=(1.0, 1.0, 1.0), seed=12
        )
        res = cc.run_replicas(cfg, 1.0, replicas=20)
        chain = cc.build_chain(cfg.energies)
        for t in (0.0, 0.5, 1.0):
            emp = cc.empirical_distribution([r.path for r in res], t, chain)
            assert emp.counts[chain.initial_index] == 20


class TestTvDistance:
    def test_identical(self):
        assert cc.tv_distance(np.array([0.3, 0.7]), np.array([0.3, 0.7])) == 0.0

    def test_disjoint_point_masses(self):
        assert cc.tv_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0

    def test_half(self):
        assert cc.tv_distance(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == 0.5

    def test_metric_properties_spot_check(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            p, q, r = rng.dirichlet(np.ones(5), size=3)
            assert cc.tv_distance(p, q) == pytest.approx(cc.tv_distance(q, p))
            assert cc.tv_distance(p, r) <= cc.tv_distance(p, q) + cc.tv_distance(q, r) + 1e-15
            assert cc.tv_distance(p, p) == 0.0

    def test_mismatched_spaces_rejected(self):
        with pytest.raises(ValueError):
            cc.tv_distance(np.array([1.0]), np.array([0.5, 0.5]))


class TestSwapRateEstimate:
    def test_recovers_known_rate(self):
        # estimator self-test on synthetic exponential first-collision data
        rng = np.random.default_rng(8)
        rate_true = 1.3
        eps = 0.01
        horizon_micro = 3.0 / eps / rate_true
        logs = []
        for _ in range(5000):
            t_macro = rng.exponential(1.0 / rate_true)
            t_micro = t_macro / eps
            logs.append(make_log([t_micro] if t_micro <= horizon_micro else [],
                                 horizon=horizon_micro, eps=eps))
        est = cc.swap_rate_estimate(logs)
        assert est.ci_lo < rate_true < est.ci_hi
        assert est.rate == pytest.approx(rate_true, rel=0.05)

    def test_censoring_is_handled(self):
        # a short horizon censors most replicas; the MLE stays unbiased
        rng = np.random.default_rng(9)
        rate_true = 1.0
        eps = 0.02
        horizon_micro = 0.5 / eps
        logs = []
        for _ in range(20000):
            t_macro = rng.exponential(1.0)
            t_micro = t_macro / eps
            logs.append(make_log([t_micro] if t_micro <= horizon_micro else [],
                                 horizon=horizon_micro, eps=eps))
        est = cc.swap_rate_estimate(logs)
        assert est.rate == pytest.approx(rate_true, rel=0.05)

    def test_refuses_sparse_data(self):
        logs = [make_log([1.0]) for _ in range(99)]
        with pytest.raises(InsufficientDataError):
            cc.swap_rate_estimate(logs)


class TestJumpCountTail:
    def _logs(self):
        rng = np.random.default_rng(10)
        return [make_log(np.sort(rng.uniform(0, 100, rng.poisson(1.0)))) for _ in range(2000)]

    def test_threshold_zero_is_certain(self):
        tails = cc.jump_count_tail(self._logs(), 1, [0, 1, 2, 3])
        assert tails[0] == 1.0

    def test_nonincreasing(self):
        tails = cc.jump_count_tail(self._logs(), 1, range(0, 8))
        assert np.all(np.diff(tails) <= 0)

    def test_requires_enough_replicas(self):
        with pytest.raises(InsufficientDataError):
            cc.jump_count_tail([make_log([1.0])] * 999, 1, [1])


class TestRecollisionStats:
    def test_zero_window(self):
        logs = [make_log([1.0, 2.0, 50.0])]
        rep = cc.recollision_stats(logs, 0.0)
        assert rep.fraction == 0.0

    def test_known_structure(self):
        # collisions at 1, 2, 50: within window 4 the pair (1 -> 2) is a
        # recollision, (2 -> 50) is not, and 50 is too close to the horizon
        # of 52 to be eligible
        logs = [make_log([1.0, 2.0, 50.0], horizon=52.0)]
        rep = cc.recollision_stats(logs, 4.0)
        assert rep.collisions == 2
        assert rep.recollisions == 1
        assert rep.fraction == 0.5

    def test_negative_window_rejected(self):
        with pytest.raises(ValueError):
            cc.recollision_stats([make_log([1.0])], -1.0)


class TestCollisionIntensity:
    def test_equal_energies_intensity_is_half_speed(self):
        # equal energies never change the path, but the pair still collides
        # at the stationary intensity sqrt(2a)/2 on the macro clock; the
        # first-collision interarrival fit sits visibly below it because
        # equal speeds make deterministic recollision clusters
        cfg = cc.SystemConfig(
            n_particles=2, epsilon=0.01, lam=1.0, energies=(2.0, 2.0), seed=910
        )
        res = cc.run_replicas(cfg, 1.0, replicas=8000, threads=2)
        logs = [r.log for r in res]
        expected = math.sqrt(2.0 * 2.0) / 2.0
        intensity = cc.collision_intensity_estimate(logs)
        assert intensity.ci_lo < expected < intensity.ci_hi
        first = cc.swap_rate_estimate(logs)
        assert first.ci_hi < expected

    def test_distinct_energies_intensity(self):
        cfg = cc.SystemConfig(
            n_particles=2, epsilon=0.02, lam=1.0, energies=(0.5, 2.0), seed=911
        )
        res = cc.run_replicas(cfg, 1.0, replicas=8000, threads=2)
        est = cc.collision_intensity_estimate([r.log for r in res])
        assert est.rate == pytest.approx(1.0, abs=3 * 0.013 + 0.01)

    def test_requires_replicas(self):
        with pytest.raises(InsufficientDataError):
            cc.collision_intensity_estimate([make_log([1.0])] * 10)


class TestPipelineAgainstMicrosim:
    def test_two_particle_swap_probability(self):
        # empirical swap probability at t = 0.5 vs the closed form
        # (1 - e^{-2 g t})/2 with g = 1; tolerance is 3 sigma plus an
        # allowance of 0.02 for the finite-overlap convergence gap
        cfg = cc.SystemConfig(
            n_particles=2, epsilon=0.01, lam=1.0, energies=(0.5, 2.0), seed=2024
        )
        n_rep = 10_000
        res = cc.run_replicas(cfg, 0.5, replicas=n_rep, threads=2)
        chain = cc.build_chain(cfg.energies)
        emp = cc.empirical_distribution([r.path for r in res], 0.5, chain)
        p_swapped = emp.probabilities()[chain.index[(2.0, 0.5)]]
        exact = (1.0 - math.exp(-1.0)) / 2.0
        se = math.sqrt(exact * (1 - exact) / n_rep)
        assert abs(p_swapped - exact) < 3 * se + 0.02

    def test_gillespie_and_solver_validate_each_other(self):
        initial = (0.5, 1.0, 2.0)
        chain = cc.build_chain(initial)
        paths = [cc.gillespie_run(initial, 0.3, cc.make_stream(55, r)) for r in range(20000)]
        emp = cc.empirical_distribution(paths, 0.3, chain)
        assert cc.tv_distance(emp, cc.solve_distribution(chain, 0.3)) < 0.02

import logging
import math
import unittest
from unittest.mock import MagicMock, patch

import numpy as np

from lumino.stream_cert.certificate import ThreatModel
from lumino.stream_cert.constants import ORACLE_MC_DRAWS, STDERR_MULTIPLIER
from lumino.stream_cert.error_handler import DomainError, SizeError, UnsupportedOperationError
from lumino.stream_cert.event_handler import EventHandler
from lumino.stream_cert.oracle import (
    CheckResult, DiscreteInstance, check_cohen_ordering, check_gradients, check_lemma_bounds, check_psi_against_tv,
    check_special_functions, check_uniform_psi, exact_smoothed_stream_perf, exact_smoothed_windows_perf,
    monte_carlo_smoothed_perf, numeric_tv, random_adversarial, random_discrete_instance, run_oracle_suite,
    tightest_discrete_psi, tv_maximizing_table, verify_lemma_bounds
)
from lumino.stream_cert.smoothing import PsiEnvelope, SmoothingSpec, psi


def two_point_instance(t=2, w=1):
    """Items {0, 1}; noise keeps an item with probability 0.8; f = 1 on noisy item 0"""
    kernel = np.array([[0.8, 0.2], [0.2, 0.8]])
    tables = []
    for i in range(1, t + 1):
        table = np.zeros((2,) * min(i, w))
        table[(0,) * min(i, w)] = 1.0
        tables.append(table)
    return DiscreteInstance(m=2, w=w, t=t, kernel=kernel, distance=np.array([[0.0, 1.0], [1.0, 0.0]]),
                            tables=tuple(tables))


class TestNumericTv(unittest.TestCase):
    """Tests for total variation oracles"""

    def test_gaussian_matches_psi(self):
        for sigma in (0.5, 1.0, 2.0):
            spec = SmoothingSpec.gaussian(sigma)
            for d in np.linspace(0.0, 6.0 * sigma, 25):
                tv = numeric_tv(spec, np.array([0.0, 0.0]), np.array([d, 0.0]))
                self.assertAlmostEqual(psi(spec, d), tv, delta=1e-3)

    def test_uniform_closed_form(self):
        spec = SmoothingSpec.uniform(2.0)
        self.assertAlmostEqual(numeric_tv(spec, np.array([0.5, 0.0]), np.zeros(2)), 0.25)
        self.assertAlmostEqual(numeric_tv(spec, np.array([0.5, 1.0]), np.zeros(2)), 1.0 - 0.75 * 0.5)
        self.assertLessEqual(numeric_tv(spec, np.array([0.5, 1.0]), np.zeros(2)), psi(spec, 1.5))

    def test_kernel_rows(self):
        kernel = np.array([[0.8, 0.2], [0.2, 0.8]])
        self.assertAlmostEqual(numeric_tv(kernel, 0, 1), 0.6)
        self.assertEqual(numeric_tv(kernel, 1, 1), 0.0)

    def test_empirical_unsupported(self):
        spec = SmoothingSpec.empirical(PsiEnvelope(((0.0, 0.0), (1.0, 1.0))))
        with self.assertRaises(UnsupportedOperationError):
            numeric_tv(spec, np.zeros(1), np.ones(1))

    def test_tv_maximizing_table_attains_tv(self):
        kernel = np.array([[0.5, 0.3, 0.2], [0.1, 0.3, 0.6], [0.2, 0.2, 0.6]])
        table = tv_maximizing_table(kernel, 0, 1)
        self.assertAlmostEqual(kernel[0] @ table - kernel[1] @ table, numeric_tv(kernel, 0, 1))


class TestExactEnumeration(unittest.TestCase):
    """Tests for exact smoothed performance"""

    def test_hand_computed_values(self):
        instance = two_point_instance(t=2, w=1)
        z, values = exact_smoothed_stream_perf(instance, [0, 1])
        np.testing.assert_allclose(values, [0.8, 0.2])
        self.assertAlmostEqual(z, 0.5)

    def test_window_of_two(self):
        instance = two_point_instance(t=2, w=2)
        _, values = exact_smoothed_stream_perf(instance, [0, 0])
        # step 2 needs both noisy items to be 0
        np.testing.assert_allclose(values, [0.8, 0.64])
        _, per_window = exact_smoothed_windows_perf(instance, [(0,), (1, 0)])
        np.testing.assert_allclose(per_window, [0.8, 0.16])

    def test_monte_carlo_agrees(self):
        rng = np.random.default_rng(1)
        for _ in range(3):
            instance = random_discrete_instance(rng)
            clean = [int(x) for x in rng.integers(0, instance.m, size=instance.t)]
            exact, _ = exact_smoothed_stream_perf(instance, clean)
            estimate, stderr = monte_carlo_smoothed_perf(instance, clean, ORACLE_MC_DRAWS, seed=5)
            self.assertLessEqual(abs(exact - estimate), STDERR_MULTIPLIER * stderr + 1e-12)

    def test_size_limit(self):
        m, w = 11, 5
        tables = tuple(np.zeros((m,) * min(i, w)) for i in range(1, 2))
        instance = DiscreteInstance(m=m, w=w, t=1, kernel=np.eye(m), distance=np.zeros((m, m)), tables=tables)
        with self.assertRaises(SizeError):
            exact_smoothed_stream_perf(instance, [0])

    def test_instance_validation(self):
        with self.assertRaises(DomainError):
            DiscreteInstance(m=2, w=1, t=1, kernel=[[0.5, 0.4], [0.5, 0.5]], distance=np.zeros((2, 2)),
                             tables=(np.zeros(2),))
        with self.assertRaises(DomainError):
            DiscreteInstance(m=2, w=1, t=1, kernel=np.eye(2), distance=[[0.0, 1.0], [2.0, 0.0]],
                             tables=(np.zeros(2),))
        with self.assertRaises(DomainError):
            DiscreteInstance(m=2, w=1, t=2, kernel=np.eye(2), distance=np.zeros((2, 2)), tables=(np.zeros(2),))


class TestLemmaBounds(unittest.TestCase):
    """Tests for the per-step and whole-stream bound checks"""

    def test_tightest_psi_majorizes_tv(self):
        instance = random_discrete_instance(np.random.default_rng(2), max_m=5)
        envelope = tightest_discrete_psi(instance)
        for x in range(instance.m):
            for y in range(instance.m):
                self.assertLessEqual(numeric_tv(instance.kernel, x, y), envelope(instance.distance[x, y]) + 1e-12)

    def test_bounds_hold_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            instance = random_discrete_instance(rng)
            clean = [int(x) for x in rng.integers(0, instance.m, size=instance.t)]
            for mode in ThreatModel:
                report = verify_lemma_bounds(instance, clean, random_adversarial(rng, instance, clean, mode), mode)
                self.assertTrue(report['holds'], msg=str(report['overall']))
                self.assertEqual(len(report['steps']), instance.t)

    def test_bound_is_attained_by_tv_maximizing_table(self):
        kernel = np.array([[0.8, 0.2], [0.2, 0.8]])
        instance = DiscreteInstance(m=2, w=1, t=1, kernel=kernel, distance=np.array([[0.0, 1.0], [1.0, 0.0]]),
                                    tables=(tv_maximizing_table(kernel, 0, 1),))
        report = verify_lemma_bounds(instance, [0], [1], ThreatModel.ONCE)
        self.assertAlmostEqual(report['overall']['lhs'], 0.6)
        self.assertAlmostEqual(report['overall']['rhs'], 0.6)
        self.assertTrue(report['holds'])

    def test_too_small_psi_is_caught(self):
        instance = two_point_instance(t=1, w=1)
        report = verify_lemma_bounds(instance, [0], [1], ThreatModel.ONCE, psi_fn=[(0.0, 0.0), (1.0, 0.1)])
        self.assertFalse(report['holds'])

    def test_non_concave_psi_rejected(self):
        instance = two_point_instance(t=1, w=1)
        with self.assertRaises(DomainError):
            verify_lemma_bounds(instance, [0], [1], psi_fn=[(0.0, 0.0), (1.0, 0.1), (2.0, 0.9)])

    def test_per_window_shape_checked(self):
        instance = two_point_instance(t=2, w=2)
        with self.assertRaises(DomainError):
            verify_lemma_bounds(instance, [0, 0], [(0,), (1,)], ThreatModel.WINDOW)


class TestOracleSuite(unittest.TestCase):
    """Tests for the individual checks and the suite runner"""

    def test_checks_pass(self):
        rng = np.random.default_rng(0)
        for result in (check_special_functions(rng), check_psi_against_tv(), check_uniform_psi(rng),
                       check_lemma_bounds(rng, 40), check_gradients(rng, 20), check_cohen_ordering()):
            self.assertTrue(result.passed, msg=f"{result.name}: {result.counterexamples}")
            self.assertGreater(result.checked, 0)

    def test_suite_emits_events(self):
        events = EventHandler(MagicMock(spec=logging.Logger))
        with patch('lumino.stream_cert.oracle.check_exact_vs_monte_carlo') as mock_mc:
            mock_mc.return_value = CheckResult("exact_vs_monte_carlo", checked=1)
            results = run_oracle_suite(seed=1, instances=10, event_handler=events)
        self.assertEqual(len(results), 7)
        self.assertEqual(events.count('OracleCheckCompleted'), 7)
        self.assertTrue(math.isfinite(results[0].worst))


if __name__ == '__main__':
    unittest.main()

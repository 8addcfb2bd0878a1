"""
Tests for the VUMPS ground-state search
"""

import unittest
from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from analysis.observables import vacuum_correlator
from oracles.free_field_oracle import free_energy_density, free_ground_g2k, free_ground_g2r
from solvers.errors import EnvironmentSolveError
from solvers.lattice_model import ModelParams, build_local_operators, hamiltonian_terms
from solvers.umps_state import canonicalize, correlator_phi, expectation_one_site, product_state
from solvers.vumps_solver import (
    GroundStateResult,
    VumpsOptions,
    VumpsSolver,
    coherent_seed,
    energy_density,
    estimate_critical_mass,
    find_ground_state,
    solve_environments,
    sweep_mass,
    tangent_residual,
)
from tests import TestUtilities


def _decoupled_bond(one_site: np.ndarray) -> np.ndarray:
    d = one_site.shape[0]
    eye = np.eye(d)
    h = 0.5 * (np.kron(one_site, eye) + np.kron(eye, one_site))
    return h.reshape(d, d, d, d).astype(np.complex128)


@pytest.mark.unit
class TestDecoupledSites(unittest.TestCase):
    """Bond tensor without inter-site coupling"""

    def setUp(self):
        d = 4
        ops = build_local_operators(d)
        self.one_site = 0.5 * ops.pi @ ops.pi + 0.8 * ops.phi @ ops.phi
        vals, vecs = np.linalg.eigh(self.one_site)
        self.e0 = vals[0]
        self.state = product_state(vecs[:, 0])
        self.h = _decoupled_bond(self.one_site)

    def test_energy_is_single_site_value(self):
        self.assertAlmostEqual(energy_density(self.state, self.h), self.e0, places=12)

    def test_environments_and_gradient_vanish(self):
        env = solve_environments(self.state, self.h)
        self.assertAlmostEqual(env.energy, self.e0, places=12)
        self.assertLess(np.linalg.norm(env.left), 1e-10)
        self.assertLess(np.linalg.norm(env.right), 1e-10)
        self.assertLess(np.linalg.norm(tangent_residual(self.state, env)), 1e-10)

    def test_rejects_malformed_bond_tensor(self):
        with self.assertRaises(ValueError):
            energy_density(self.state, np.zeros((4, 4, 4)))


@pytest.mark.unit
class TestSeedsAndOptions(unittest.TestCase):

    def test_coherent_seed_parity_mirror(self):
        d, chi = 8, 3
        plus = coherent_seed(d, chi, bias=1.0, noise=0.1, seed=5)
        minus = coherent_seed(d, chi, bias=-1.0, noise=0.1, seed=5)
        parity = (-1.0) ** np.arange(d)
        np.testing.assert_allclose(minus, parity[:, None, None] * plus)

    def test_unbiased_seed_is_vacuum_without_noise(self):
        A = coherent_seed(5, 2, bias=0.0, noise=0.0)
        np.testing.assert_allclose(A[0], np.eye(2))
        np.testing.assert_allclose(A[1:], 0.0)

    def test_options_validation(self):
        with self.assertRaises(ValueError):
            VumpsOptions(tol=0.0)
        with self.assertRaises(ValueError):
            VumpsOptions(maxiter=0)
        with self.assertRaises(ValueError):
            VumpsOptions(noise=-0.1)

    def test_critical_mass_at_peak(self):
        mu = [-1.5, -1.4, -1.3, -1.2, -1.1]
        xi = [3.0, 5.0, 11.0, float("nan"), 4.0]
        self.assertEqual(estimate_critical_mass(mu, xi), -1.3)
        with self.assertRaises(ValueError):
            estimate_critical_mass([0.1], [float("nan")])


@pytest.mark.unit
class TestSweep(unittest.TestCase):
    """Scan bookkeeping with the solver patched out"""

    def _result(self, mu0sq):
        state = product_state(TestUtilities.vacuum_vector(3))
        return GroundStateResult(state=state, energy_density=mu0sq, gradient_norm=1e-9,
                                 vev=0.0, iterations=3)

    @patch("solvers.vumps_solver.find_ground_state")
    def test_failures_are_recorded_and_scan_continues(self, mock_find):
        """A failed point is recorded and the next one starts from the last good state"""
        first = self._result(0.5)
        third = self._result(0.1)
        mock_find.side_effect = [first, EnvironmentSolveError("stagnated", residual=1e-3), third]
        seen = []
        points = sweep_mass(3.0, [0.5, 0.3, 0.1], d=3, chi=1, progress=seen.append)

        self.assertEqual(len(points), 3)
        self.assertIs(points[0].result, first)
        self.assertIsNone(points[1].result)
        self.assertEqual(points[1].error["error_type"], "EnvironmentSolveError")
        self.assertEqual(points[1].error["residual"], 1e-3)
        self.assertEqual(len(seen), 3)
        self.assertIs(mock_find.call_args_list[2].kwargs["initial"], first.state)

    @patch("solvers.vumps_solver.find_ground_state")
    def test_cold_start(self, mock_find):
        mock_find.side_effect = [self._result(0.5), self._result(0.3)]
        sweep_mass(3.0, [0.5, 0.3], d=3, chi=1, warm_start=False)
        for call in mock_find.call_args_list:
            self.assertIsNone(call.kwargs["initial"])

    @patch("solvers.vumps_solver.find_ground_state")
    def test_custom_solver(self, mock_find):
        first, second = self._result(0.5), self._result(0.3)
        solver = MagicMock(side_effect=[first, second])
        points = sweep_mass(3.0, [0.5, 0.3], d=3, chi=1, solver=solver)

        mock_find.assert_not_called()
        self.assertIs(points[1].result, second)
        params, chi, _, initial = solver.call_args_list[1].args
        self.assertEqual((params.mu0sq, chi), (0.3, 1))
        self.assertIs(initial, first.state)


@pytest.mark.unit
class TestEnergyHistory(unittest.TestCase):
    """History holds every iterate; the best state is tracked separately"""

    def test_non_monotone_iterates_are_recorded(self):
        params = ModelParams(0.0, 1.0, 4)
        good = find_ground_state(params, 2, 1e-8, VumpsOptions(seed=0, maxiter=500)).state
        bad = canonicalize(TestUtilities.random_tensor(4, 2, seed=7))
        solver = VumpsSolver(hamiltonian_terms(params), 2, VumpsOptions(tol=1e-30, maxiter=3))
        h = solver.h

        with patch.object(VumpsSolver, "_gauge_update", side_effect=[bad, good, good]):
            result = solver.run(initial=good)

        expected = [energy_density(s, h) for s in (good, bad, good)]
        self.assertGreater(expected[1], expected[0])
        np.testing.assert_allclose(result.energy_history, expected, atol=1e-10)
        self.assertFalse(result.converged)
        self.assertAlmostEqual(result.energy_density, expected[0], places=10)
        self.assertIs(result.state, good)


@pytest.mark.slow
@pytest.mark.oracle
class TestFreeFieldGroundState(unittest.TestCase):
    """lambda0 = 0 against the free-field quadrature values"""

    @classmethod
    def setUpClass(cls):
        cls.musq = 1.0
        opts = VumpsOptions(maxiter=2000, seed=0)
        cls.result = find_ground_state(ModelParams(0.0, cls.musq, 16), chi=8, tol_gradient=1e-9, opts=opts)

    def test_converged(self):
        self.assertTrue(self.result.converged)
        self.assertLess(self.result.gradient_norm, 1e-9)
        history = np.asarray(self.result.energy_history)
        self.assertEqual(len(history), self.result.iterations)
        self.assertLess(self.result.energy_density - history.min(), 1e-10)

    def test_energy_density(self):
        self.assertAlmostEqual(self.result.energy_density, free_energy_density(self.musq), delta=1e-5)

    def test_field_fluctuations(self):
        state = self.result.state
        phi = build_local_operators(state.d).phi
        self.assertLess(abs(self.result.vev), 1e-5)
        self.assertAlmostEqual(expectation_one_site(state, phi @ phi).real,
                               float(free_ground_g2r(0, self.musq)[0]), delta=1e-3)
        g2 = correlator_phi(state, r_max=4)
        np.testing.assert_allclose(g2, free_ground_g2r(np.arange(5), self.musq), atol=2e-3)

    def test_momentum_correlator(self):
        vacuum = vacuum_correlator(self.result.state, r_max=60, k_grid=np.linspace(0, np.pi, 9))
        np.testing.assert_allclose(vacuum.g2_k, free_ground_g2k(vacuum.k_grid, self.musq), rtol=1e-3)


@pytest.mark.slow
class TestBrokenPhase(unittest.TestCase):
    """Deep in the broken phase the biased seeds pick opposite vacua"""

    def test_parity_partner_vacua(self):
        params = ModelParams(3.0, -3.0, 12)
        plus = find_ground_state(params, 3, 1e-7, VumpsOptions(bias=1.0, seed=2, maxiter=600))
        minus = find_ground_state(params, 3, 1e-7, VumpsOptions(bias=-1.0, seed=2, maxiter=600))
        self.assertGreater(plus.vev, 1.0)
        self.assertLess(minus.vev, -1.0)
        self.assertAlmostEqual(plus.vev, -minus.vev, delta=1e-5)
        self.assertAlmostEqual(plus.energy_density, minus.energy_density, delta=1e-8)
        self.assertLess(plus.vev, np.sqrt(6.0 * 3.0 / 3.0))

    def test_symmetric_phase_has_no_vev(self):
        result = find_ground_state(ModelParams(3.0, 0.5, 8), 3, 1e-7, VumpsOptions(seed=1, maxiter=600))
        self.assertLess(abs(result.vev), 1e-5)


if __name__ == "__main__":
    unittest.main()

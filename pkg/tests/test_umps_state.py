"""
Tests for uniform MPS canonical forms, observables and snapshots
"""

import os
import unittest

import numpy as np
import pytest

from solvers.errors import DegenerateSpectrumError
from solvers.lattice_model import build_local_operators
from solvers.umps_state import (
    CanonicalUMPS,
    canonicalize,
    connected_correlator,
    correlation_length,
    correlator_phi,
    entanglement_entropy,
    expectation_one_site,
    isometry_residuals,
    load_snapshot,
    mixed_gauge,
    product_state,
    save_snapshot,
    transfer_fixed_points,
)
from tests import TestUtilities


def _coherent_vector(d: int, alpha: float) -> np.ndarray:
    n = np.arange(d)
    amps = np.array([alpha ** k / np.sqrt(float(np.prod(np.arange(1, k + 1)))) for k in n])
    return amps / np.linalg.norm(amps)


def _direct_correlator(A: np.ndarray, op: np.ndarray, r_max: int) -> np.ndarray:
    """<O_0 O_r> from the fixed points of the raw tensor, no gauge fixing"""
    fixed = transfer_fixed_points(A)
    lam = abs(fixed.lambda1)

    def plain(r):
        return np.einsum("sab,bc,sdc->ad", A, r, A.conj()) / lam

    def with_op(r, o):
        return np.einsum("st,tab,bc,sdc->ad", o, A, r, A.conj()) / lam

    values = [np.trace(fixed.l @ with_op(fixed.r, op @ op))]
    for r in range(1, r_max + 1):
        X = with_op(fixed.r, op)
        for _ in range(r - 1):
            X = plain(X)
        values.append(np.trace(fixed.l @ with_op(X, op)))
    return np.real(np.array(values))


@pytest.mark.unit
class TestProductStates(unittest.TestCase):
    """Bond dimension one"""

    def test_product_canonical_form(self):
        """chi=1: AL = AR = A and C = [1]"""
        A = _coherent_vector(6, 0.4).reshape(6, 1, 1).astype(np.complex128)
        state = canonicalize(A)
        np.testing.assert_allclose(np.abs(state.C), [[1.0]], atol=1e-14)
        np.testing.assert_allclose(np.abs(state.AL.ravel()), np.abs(A.ravel()), atol=1e-12)
        np.testing.assert_allclose(np.abs(state.AR.ravel()), np.abs(A.ravel()), atol=1e-12)

    def test_vacuum_correlator(self):
        state = product_state(TestUtilities.vacuum_vector(4))
        values = correlator_phi(state, r_max=5)
        np.testing.assert_allclose(values, [0.5, 0, 0, 0, 0, 0], atol=1e-14)

    def test_coherent_state_correlator(self):
        """<phi> = c gives G2(r) = c^2 for r >= 1 and G2(0) = <phi^2>"""
        d = 12
        phi = build_local_operators(d).phi
        state = product_state(_coherent_vector(d, 0.5))
        c = expectation_one_site(state, phi).real
        values = correlator_phi(state, r_max=4)
        self.assertAlmostEqual(values[0], expectation_one_site(state, phi @ phi).real, places=12)
        np.testing.assert_allclose(values[1:], c ** 2, atol=1e-12)
        np.testing.assert_allclose(connected_correlator(state, r_max=4)[1:], 0.0, atol=1e-12)

    def test_product_has_no_correlation_or_entanglement(self):
        state = product_state(_coherent_vector(5, 0.3))
        self.assertEqual(correlation_length(state), 0.0)
        self.assertAlmostEqual(entanglement_entropy(state), 0.0, places=14)

    def test_identity_expectation(self):
        state = product_state(_coherent_vector(5, 0.3))
        self.assertAlmostEqual(expectation_one_site(state, np.eye(5)).real, 1.0, places=13)

    def test_zero_vector_rejected(self):
        with self.assertRaises(ValueError):
            product_state(np.zeros(3))

    def test_correlator_requires_positive_range(self):
        with self.assertRaises(ValueError):
            correlator_phi(product_state(TestUtilities.vacuum_vector(3)), r_max=0)


@pytest.mark.unit
class TestCanonicalization(unittest.TestCase):
    """Mixed gauge of random tensors"""

    def setUp(self):
        self.d, self.chi = 3, 4
        self.A = TestUtilities.random_tensor(self.d, self.chi)
        self.phi = build_local_operators(self.d).phi

    def test_isometry_residuals(self):
        state = canonicalize(self.A)
        left, right, gauge = isometry_residuals(state)
        self.assertLess(left, 1e-10)
        self.assertLess(right, 1e-10)
        self.assertLess(gauge, 1e-9)
        self.assertAlmostEqual(float(np.trace(state.C.conj().T @ state.C).real), 1.0, places=12)

    def test_singular_values_sorted_and_normalised(self):
        s = canonicalize(self.A).singular_values
        self.assertTrue(np.all(np.diff(s) <= 1e-14))
        self.assertAlmostEqual(float(np.sum(s ** 2)), 1.0, places=12)

    def test_mixed_gauge_maps_back_to_tensor(self):
        """A_s = lam G^-1 AL_s G"""
        state, G, lam = mixed_gauge(self.A)
        rebuilt = lam * np.einsum("ab,sbc,cd->sad", np.linalg.inv(G), state.AL, G)
        np.testing.assert_allclose(rebuilt, self.A, atol=1e-9)

    def test_observables_gauge_invariant(self):
        rng = TestUtilities.rng(7)
        X = np.eye(self.chi) + 0.3 * (rng.standard_normal((self.chi, self.chi))
                                      + 1j * rng.standard_normal((self.chi, self.chi)))
        A_gauged = np.einsum("ab,sbc,cd->sad", X, self.A, np.linalg.inv(X))
        first, second = canonicalize(self.A), canonicalize(A_gauged)
        self.assertAlmostEqual(expectation_one_site(first, self.phi).real,
                               expectation_one_site(second, self.phi).real, places=10)
        self.assertAlmostEqual(entanglement_entropy(first), entanglement_entropy(second), places=9)
        self.assertAlmostEqual(correlation_length(first), correlation_length(second), places=8)

    def test_identity_expectation(self):
        state = canonicalize(self.A)
        self.assertAlmostEqual(expectation_one_site(state, np.eye(self.d)).real, 1.0, places=12)

    def test_correlator_matches_direct_contraction(self):
        state = canonicalize(self.A)
        np.testing.assert_allclose(correlator_phi(state, r_max=6),
                                   _direct_correlator(self.A, self.phi, 6), atol=1e-9)

    def test_connected_correlator_decays(self):
        state = canonicalize(self.A)
        values = np.abs(connected_correlator(state, r_max=40))
        self.assertLess(values[40], 1e-8)
        xi = correlation_length(state)
        self.assertGreater(xi, 0.0)
        self.assertTrue(np.isfinite(xi))

    def test_degenerate_spectrum_rejected(self):
        """Two identical blocks give a doubly degenerate transfer matrix"""
        B = TestUtilities.random_tensor(2, 2, seed=3)
        A = np.zeros((2, 4, 4), dtype=np.complex128)
        A[:, :2, :2] = B
        A[:, 2:, 2:] = B
        with self.assertRaises(DegenerateSpectrumError) as ctx:
            mixed_gauge(A)
        self.assertIn("lambda1", ctx.exception.details)


@pytest.mark.unit
class TestEntanglement(unittest.TestCase):

    def test_maximal_two_level_entropy(self):
        chi = 2
        AL = TestUtilities.random_tensor(2, chi)
        C = np.diag([1 / np.sqrt(2), 1 / np.sqrt(2)]).astype(np.complex128)
        state = CanonicalUMPS(AL=AL, AR=AL, C=C)
        self.assertAlmostEqual(entanglement_entropy(state), np.log(2.0), places=12)

    def test_entropy_bounded_by_log_chi(self):
        for seed in range(4):
            state = canonicalize(TestUtilities.random_tensor(3, 5, seed=seed))
            self.assertLessEqual(entanglement_entropy(state), np.log(5) + 1e-12)


@pytest.mark.unit
class TestSnapshots(unittest.TestCase):
    """npz snapshots with JSON metadata"""

    def setUp(self):
        self.dir = TestUtilities.temp_dir("snapshots")

    def test_save_and_load(self):
        state = canonicalize(TestUtilities.random_tensor(3, 3)).with_time(12.5)
        path = save_snapshot(os.path.join(self.dir, "nested", "state.npz"), state,
                             {"mu0sq": -1.1, "xi": float("inf")})
        loaded, meta = load_snapshot(path)
        np.testing.assert_array_equal(loaded.AL, state.AL)
        np.testing.assert_array_equal(loaded.C, state.C)
        self.assertEqual(loaded.time, 12.5)
        self.assertEqual(meta["mu0sq"], -1.1)
        self.assertIsNone(meta["xi"])

    def test_version_mismatch(self):
        state = product_state(TestUtilities.vacuum_vector(2))
        path = os.path.join(self.dir, "old.npz")
        np.savez(path, format_version=np.int64(99), shape=np.array([2, 1]), AL=state.AL,
                 AR=state.AR, C=state.C, time=np.float64(0.0), metadata=np.frombuffer(b"{}", dtype=np.uint8))
        with self.assertRaises(ValueError):
            load_snapshot(path)


if __name__ == "__main__":
    unittest.main()

"""
Test Package for the lattice phi^4 quench toolkit

This package contains the test suites:
- Unit tests for the model, state, solver and analysis modules
- Oracle tests comparing the uniform-MPS code with free-field and
  exact-diagonalization references
- Harness tests with the heavy solvers patched out

Usage:
    # Run the fast tests
    python -m pytest tests/ -m "not slow"

    # Run specific test categories
    python -m pytest tests/ -m oracle
    python -m pytest tests/ -m integration

    # Import test utilities
    from tests import TestUtilities
"""

__version__ = "1.0.0"
__description__ = "Test suite for lattice phi^4 quench campaigns"

import logging
import os
import shutil
import tempfile
from typing import Optional

import numpy as np

# Test configuration
TEST_CONFIG = {
    "temp_dir": os.path.join(tempfile.gettempdir(), "phi4_kz_tests"),
    "seed": 1234,
    "rtol": 1e-10,
}

# Test categories and markers
TEST_MARKERS = {
    "unit": "Unit tests for individual components",
    "integration": "Integration tests for complete workflows",
    "slow": "Tests that take longer to run",
    "oracle": "Comparisons against free-field or exact-diagonalization references",
}


class TestUtilities:
    """Common utilities for testing"""

    __test__ = False

    @staticmethod
    def rng(seed: Optional[int] = None) -> np.random.Generator:
        return np.random.default_rng(TEST_CONFIG["seed"] if seed is None else seed)

    @staticmethod
    def random_tensor(d: int = 3, chi: int = 4, seed: Optional[int] = None) -> np.ndarray:
        """Random complex (d, chi, chi) tensor"""
        from solvers.umps_state import random_tensor

        return random_tensor(d, chi, TestUtilities.rng(seed))

    @staticmethod
    def vacuum_vector(d: int) -> np.ndarray:
        """Fock vacuum |0> of a d-level site"""
        vector = np.zeros(d, dtype=np.complex128)
        vector[0] = 1.0
        return vector

    @staticmethod
    def temp_dir(name: str = "run") -> str:
        """Fresh temporary directory under the test root"""
        os.makedirs(TEST_CONFIG["temp_dir"], exist_ok=True)
        return tempfile.mkdtemp(prefix=f"{name}_", dir=TEST_CONFIG["temp_dir"])

    @staticmethod
    def cleanup_test_files():
        """Clean up temporary test files"""
        temp_dir = TEST_CONFIG["temp_dir"]
        if os.path.exists(temp_dir):
            shutil.rmtree(temp_dir)


# Test environment setup
def setup_test_environment():
    """Set up the test environment"""
    os.makedirs(TEST_CONFIG["temp_dir"], exist_ok=True)

    os.environ["KZ_ENVIRONMENT"] = "testing"
    os.environ["KZ_LOG_LEVEL"] = "ERROR"  # Reduce log noise during testing

    logging.info("Test environment setup completed")


def teardown_test_environment():
    """Clean up test environment"""
    TestUtilities.cleanup_test_files()
    logging.info("Test environment cleanup completed")


# Public API
__all__ = [
    "TestUtilities",
    "TEST_CONFIG",
    "TEST_MARKERS",
    "setup_test_environment",
    "teardown_test_environment",
]

# Auto-setup test environment when package is imported
try:
    setup_test_environment()
except Exception as e:
    logging.warning(f"Test environment auto-setup failed: {e}")

"""
Lattice phi^4 model in a truncated Fock basis.

Local operators, the one-site and nearest-neighbour Hamiltonian terms in
lattice units, and the linear-then-constant mass quench schedule.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from utils.validator import validate_int_at_least, validate_positive

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelParams:
    """Couplings in lattice units plus the local Fock cutoff d.

    lambda0 = 0 is accepted so that the free theory can be used as a
    reference; negative couplings are rejected.
    """

    lambda0: float
    mu0sq: float
    d: int

    def __post_init__(self):
        validate_positive(self.lambda0, "lambda0", allow_zero=True)
        if not np.isfinite(self.mu0sq):
            raise ValueError(f"mu0sq must be finite, got {self.mu0sq}")
        validate_int_at_least(self.d, 2, "d")

    def with_mass(self, mu0sq: float) -> "ModelParams":
        return ModelParams(self.lambda0, float(mu0sq), self.d)


@dataclass(frozen=True)
class QuenchSchedule:
    """mu0sq(t) = mu0sq_start - t/tauQ until t_F, then constant."""

    mu0sq_start: float
    mu0sq_final: float
    tauQ: float
    t_relax: float = 15.0

    def __post_init__(self):
        validate_positive(self.tauQ, "tauQ")
        validate_positive(self.t_relax, "t_relax", allow_zero=True)
        if self.mu0sq_final > self.mu0sq_start:
            raise ValueError(
                f"mu0sq_final ({self.mu0sq_final}) must not exceed "
                f"mu0sq_start ({self.mu0sq_start})"
            )

    @property
    def t_F(self) -> float:
        return (self.mu0sq_start - self.mu0sq_final) * self.tauQ

    @property
    def end_time(self) -> float:
        return self.t_F + self.t_relax

    def value(self, t: float) -> float:
        return schedule_value(self, t)

    def time_of(self, mu0sq: float) -> float:
        """Inverse of the linear part of the ramp."""
        return (self.mu0sq_start - mu0sq) * self.tauQ


@dataclass(frozen=True)
class LocalOperators:
    a: np.ndarray
    adag: np.ndarray
    phi: np.ndarray
    pi: np.ndarray
    number: np.ndarray

    @property
    def d(self) -> int:
        return self.a.shape[0]


class HamiltonianTerms(NamedTuple):
    """one_site plus the product form two_site_left (x) two_site_right."""

    one_site: np.ndarray
    two_site_left: np.ndarray
    two_site_right: np.ndarray

    @property
    def d(self) -> int:
        return self.one_site.shape[0]

    def bond_matrix(self) -> np.ndarray:
        """Nearest-neighbour operator on C^d (x) C^d, one-site part split evenly."""
        eye = np.eye(self.d)
        return (0.5 * (np.kron(self.one_site, eye) + np.kron(eye, self.one_site))
                + np.kron(self.two_site_left, self.two_site_right))

    def bond_tensor(self) -> np.ndarray:
        """h[s1, s2, t1, t2] = <s1 s2| h |t1 t2>."""
        d = self.d
        return self.bond_matrix().reshape(d, d, d, d)


def build_local_operators(d: int) -> LocalOperators:
    """
    Truncated ladder operators and the derived field operators.

    pi = i(a - a^dag)/sqrt(2) so that [pi, phi] = i away from the cutoff.
    """
    validate_int_at_least(d, 2, "d")
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), k=1).astype(np.complex128)
    adag = a.conj().T
    phi = (adag + a) / np.sqrt(2.0)
    pi = 1j * (a - adag) / np.sqrt(2.0)
    number = adag @ a
    return LocalOperators(a=a, adag=adag, phi=phi, pi=pi, number=number)


def hamiltonian_terms(params: ModelParams) -> HamiltonianTerms:
    """
    One-site term pi^2/2 + (1 + mu0sq/2) phi^2 + (lambda0/24) phi^4 and the
    coupling -phi_x phi_{x+1}.

    The gradient energy (phi_{x+1} - phi_x)^2/2 contributes phi_x^2 per site
    and the cross term; the energy density of a translation-invariant state is
    <one_site> + <two_site>.
    """
    ops = build_local_operators(params.d)
    phi2 = ops.phi @ ops.phi
    one_site = (ops.pi @ ops.pi / 2.0
                + (1.0 + params.mu0sq / 2.0) * phi2
                + (params.lambda0 / 24.0) * phi2 @ phi2)
    one_site = 0.5 * (one_site + one_site.conj().T)
    return HamiltonianTerms(one_site=one_site, two_site_left=-ops.phi, two_site_right=ops.phi.copy())


def schedule_value(schedule: QuenchSchedule, t: float) -> float:
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    if t >= schedule.t_F:
        return float(schedule.mu0sq_final)
    return float(schedule.mu0sq_start - t / schedule.tauQ)


def lattice_dispersion(k, musq: float) -> np.ndarray:
    """omega_k = sqrt(musq + 4 sin^2(k/2)) of the non-interacting lattice model."""
    radicand = musq + 4.0 * np.sin(np.asarray(k, dtype=float) / 2.0) ** 2
    return np.sqrt(radicand)


__all__ = [
    "ModelParams",
    "QuenchSchedule",
    "LocalOperators",
    "HamiltonianTerms",
    "build_local_operators",
    "hamiltonian_terms",
    "schedule_value",
    "lattice_dispersion",
]

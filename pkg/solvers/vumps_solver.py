"""
Variational uniform MPS ground-state search for the lattice phi^4 chain.

Environments follow the (bra, ket) index order for the left block Lh and
(ket, bra) for the right block Rh. The bond tensor passed around internally
is always the shifted h - e*1 so that both effective problems have their
lowest eigenvalue near zero at convergence.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.linalg import polar
from scipy.sparse.linalg import LinearOperator, eigsh, gmres
from scipy.special import gammaln

from solvers.errors import EnvironmentSolveError, PhiFourError
from solvers.lattice_model import HamiltonianTerms, ModelParams, build_local_operators, hamiltonian_terms
from solvers.umps_state import (
    CanonicalUMPS,
    canonicalize,
    correlation_length,
    entanglement_entropy,
    expectation_one_site,
    transfer_matrix,
)
from utils.validator import validate_int_at_least, validate_positive

logger = logging.getLogger(__name__)

DENSE_ENVIRONMENT_LIMIT = 1024
DENSE_EIGEN_LIMIT = 256


class Environments(NamedTuple):
    left: np.ndarray
    right: np.ndarray
    energy: float
    h_tilde: np.ndarray


@dataclass
class VumpsOptions:
    """Settings for a single ground-state search"""

    tol: float = 1e-8
    maxiter: int = 2000
    env_tol: float = 1e-12
    eig_tol_factor: float = 1e-2
    canonical_tol: float = 1e-12
    bias: float = 0.0
    noise: float = 0.1
    seed: Optional[int] = None

    def __post_init__(self):
        validate_positive(self.tol, "tol")
        validate_int_at_least(self.maxiter, 1, "maxiter")
        validate_positive(self.env_tol, "env_tol")
        validate_positive(self.noise, "noise", allow_zero=True)


@dataclass
class GroundStateResult:
    state: CanonicalUMPS
    energy_density: float
    gradient_norm: float
    vev: float
    iterations: int
    converged: bool = True
    energy_history: List[float] = field(default_factory=list)

    @property
    def correlation_length(self) -> float:
        return correlation_length(self.state)

    @property
    def entropy(self) -> float:
        return entanglement_entropy(self.state)


class SweepPoint(NamedTuple):
    mu0sq: float
    result: Optional[GroundStateResult]
    error: Optional[dict]


def _bond_tensor(hamiltonian: Union[HamiltonianTerms, np.ndarray]) -> np.ndarray:
    if isinstance(hamiltonian, HamiltonianTerms):
        return hamiltonian.bond_tensor()
    h = np.asarray(hamiltonian, dtype=np.complex128)
    if h.ndim != 4 or len(set(h.shape)) != 1:
        raise ValueError(f"bond tensor must have shape (d, d, d, d), got {h.shape}")
    return h


def energy_density(state: CanonicalUMPS, hamiltonian) -> float:
    """<h> on one bond, i.e. the energy per site of a translation-invariant state."""
    h = _bond_tensor(hamiltonian)
    value = np.einsum("sab,ubc,sutv,tad,vdc->", state.AC.conj(), state.AR.conj(), h, state.AC, state.AR)
    if abs(value.imag) > 1e-10:
        logger.warning(f"Energy density has imaginary part {value.imag:.2e}")
    return float(value.real)


# ---------------------------------------------------------------------------
# Environments
# ---------------------------------------------------------------------------

def _gmres(op, b, x0, tol):
    try:
        return gmres(op, b, x0=x0, rtol=tol, atol=0.0, maxiter=200)
    except TypeError:
        return gmres(op, b, x0=x0, tol=tol, atol=0.0, maxiter=200)


def _solve_projected(T: Callable[[np.ndarray], np.ndarray], T_dense: Optional[np.ndarray],
                     fixed: np.ndarray, rhs: np.ndarray, tol: float,
                     x0: Optional[np.ndarray], side: str) -> np.ndarray:
    """Solve X - T(X) + Tr(X fixed) 1 = rhs for a chi x chi matrix X."""
    chi = rhs.shape[0]
    n = chi * chi
    eye = np.eye(chi).ravel()
    b = rhs.ravel()

    def matvec(v):
        X = v.reshape(chi, chi)
        return (X - T(X)).ravel() + np.sum(X * fixed.T) * eye

    if T_dense is not None:
        M = np.eye(n, dtype=np.complex128) - T_dense + np.outer(eye, fixed.T.ravel())
        x = np.linalg.solve(M, b)
    else:
        op = LinearOperator((n, n), matvec=matvec, dtype=np.complex128)
        x, info = _gmres(op, b, None if x0 is None else x0.ravel(), tol)
        if info < 0:
            raise EnvironmentSolveError(f"{side} environment solve broke down", residual=float("nan"), info=info)

    residual = float(np.linalg.norm(matvec(x) - b))
    if residual > tol * max(1.0, float(np.linalg.norm(b))):
        raise EnvironmentSolveError(f"{side} environment solve stagnated", residual=residual)
    X = x.reshape(chi, chi)
    return 0.5 * (X + X.conj().T)


def solve_environments(state: CanonicalUMPS, hamiltonian, tol: float = 1e-12,
                       guess: Optional[Environments] = None) -> Environments:
    """
    Infinite sums of bond terms to the left and right of the center.

    The energy density is subtracted from the bond tensor first, so both
    environments stay finite; the projector onto the fixed point removes the
    remaining zero mode.
    """
    h = _bond_tensor(hamiltonian)
    d, chi = state.d, state.chi
    AL, AR, C = state.AL, state.AR, state.C

    e = energy_density(state, h)
    h_tilde = h - e * np.eye(d * d).reshape(d, d, d, d)

    hL = np.einsum("sab,ubc,sutv,tad,vdf->cf", AL.conj(), AL.conj(), h_tilde, AL, AL)
    hR = np.einsum("tab,vbc,sutv,sef,ufc->ae", AR, AR, h_tilde, AR.conj(), AR.conj())
    r = C @ C.conj().T
    l = C.conj().T @ C
    hL = hL - np.trace(hL @ r) * np.eye(chi)
    hR = hR - np.trace(l @ hR) * np.eye(chi)

    dense = chi * chi <= DENSE_ENVIRONMENT_LIMIT
    TL_dense = sum(np.kron(AL[s].conj().T, AL[s].T) for s in range(d)) if dense else None
    TR_dense = transfer_matrix(AR) if dense else None

    Lh = _solve_projected(lambda X: np.einsum("sab,ac,scd->bd", AL.conj(), X, AL),
                          TL_dense, r, hL, tol, None if guess is None else guess.left, "left")
    Rh = _solve_projected(lambda X: np.einsum("sab,bc,sdc->ad", AR, X, AR.conj()),
                          TR_dense, l, hR, tol, None if guess is None else guess.right, "right")
    return Environments(left=Lh, right=Rh, energy=e, h_tilde=h_tilde)


# ---------------------------------------------------------------------------
# Effective Hamiltonians
# ---------------------------------------------------------------------------

def apply_H_Ac(v: np.ndarray, state: CanonicalUMPS, env: Environments) -> np.ndarray:
    AL, AR, h = state.AL, state.AR, env.h_tilde
    out = np.einsum("pxa,pstu,txy,uyb->sab", AL.conj(), h, AL, v)
    out += np.einsum("tay,uyz,sptu,pbz->sab", v, AR, h, AR.conj())
    out += np.einsum("ac,scb->sab", env.left, v)
    out += np.einsum("sad,db->sab", v, env.right)
    return out


def apply_H_C(c: np.ndarray, state: CanonicalUMPS, env: Environments) -> np.ndarray:
    AL, AR, h = state.AL, state.AR, env.h_tilde
    out = np.einsum("pxa,qbz,pqtu,txy,yw,uwz->ab", AL.conj(), AR.conj(), h, AL, c, AR)
    return out + env.left @ c + c @ env.right


def tangent_residual(state: CanonicalUMPS, env: Environments) -> np.ndarray:
    """(1 - AL AL^dag) H_Ac(AC): the gauge-fixed gradient / TDVP tangent tensor."""
    d, chi = state.d, state.chi
    HAc = apply_H_Ac(state.AC, state, env)
    AL = state.AL.reshape(d * chi, chi)
    flat = HAc.reshape(d * chi, chi)
    return (flat - AL @ (AL.conj().T @ flat)).reshape(d, chi, chi)


def _lowest_eigenvector(apply: Callable[[np.ndarray], np.ndarray], guess: np.ndarray,
                        tol: float) -> np.ndarray:
    shape = guess.shape
    n = guess.size
    if n <= DENSE_EIGEN_LIMIT:
        basis = np.eye(n, dtype=np.complex128)
        H = np.column_stack([apply(basis[:, i].reshape(shape)).ravel() for i in range(n)])
        _, vecs = np.linalg.eigh(0.5 * (H + H.conj().T))
        vec = vecs[:, 0]
    else:
        op = LinearOperator((n, n), matvec=lambda x: apply(x.reshape(shape)).ravel(), dtype=np.complex128)
        _, vecs = eigsh(op, k=1, which="SA", v0=guess.ravel(), tol=tol)
        vec = vecs[:, 0]
    return vec.reshape(shape)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

def coherent_seed(d: int, chi: int, bias: float = 0.0, noise: float = 0.1,
                  seed: Optional[int] = None) -> np.ndarray:
    """
    Coherent-state product tensor with <phi> ~ sqrt(2)*bias plus seeded noise.

    A negative bias returns the parity mirror (-1)^n A^n of the seed built
    for |bias|, so the pair is exactly Z2 related.
    """
    alpha = abs(bias)
    n = np.arange(d)
    if alpha > 0:
        amps = np.exp(-0.5 * alpha ** 2 + n * math.log(alpha) - 0.5 * gammaln(n + 1))
    else:
        amps = (n == 0).astype(float)
    amps = amps / np.linalg.norm(amps)

    rng = np.random.default_rng(seed)
    scale = noise / np.sqrt(2.0 * d * chi)
    A = amps[:, None, None] * np.eye(chi)[None, :, :]
    A = A + scale * (rng.standard_normal((d, chi, chi)) + 1j * rng.standard_normal((d, chi, chi)))
    if bias < 0:
        A = ((-1.0) ** n)[:, None, None] * A
    return A.astype(np.complex128)


class VumpsSolver:
    """Alternating AC/C eigen-updates with a polar-decomposition gauge step"""

    def __init__(self, terms: HamiltonianTerms, chi: int, options: Optional[VumpsOptions] = None):
        self.terms = terms
        self.h = terms.bond_tensor()
        self.chi = validate_int_at_least(chi, 1, "chi")
        self.options = options or VumpsOptions()
        self.phi = build_local_operators(terms.d).phi
        self.logger = logging.getLogger('VumpsSolver')

    def initial_state(self) -> CanonicalUMPS:
        opts = self.options
        A = coherent_seed(self.terms.d, self.chi, opts.bias, opts.noise, opts.seed)
        return canonicalize(A, tol=opts.canonical_tol)

    def _gauge_update(self, AC: np.ndarray, C: np.ndarray) -> CanonicalUMPS:
        d, chi = AC.shape[0], AC.shape[1]
        U_ac, _ = polar(AC.reshape(d * chi, chi), side="right")
        U_c, _ = polar(C, side="right")
        AL = (U_ac @ U_c.conj().T).reshape(d, chi, chi)
        return canonicalize(AL, tol=self.options.canonical_tol)

    def run(self, initial: Optional[CanonicalUMPS] = None) -> GroundStateResult:
        """Iterate until the tangent gradient falls below tol or maxiter is reached"""
        opts = self.options
        state = initial if initial is not None else self.initial_state()
        if state.chi != self.chi or state.d != self.terms.d:
            raise ValueError(f"initial state has (d, chi)=({state.d}, {state.chi}), "
                             f"expected ({self.terms.d}, {self.chi})")

        best_state, best_energy, best_gradient = state, np.inf, np.inf
        history: List[float] = []
        env = None
        gradient = np.inf

        for iteration in range(1, opts.maxiter + 1):
            env = solve_environments(state, self.h, tol=opts.env_tol, guess=env)
            gradient = float(np.linalg.norm(tangent_residual(state, env)))
            energy = env.energy

            if history and energy > history[-1]:
                self.logger.debug(f"iter {iteration}: energy rose by {energy - history[-1]:.3e}")
            history.append(energy)
            if energy < best_energy:
                best_state, best_energy, best_gradient = state, energy, gradient

            self.logger.debug(f"iter {iteration}: e={energy:.14f} |B|={gradient:.3e}")
            if gradient < opts.tol:
                vev = expectation_one_site(state, self.phi).real
                self.logger.info(f"Converged in {iteration} iterations: e={energy:.12f}, "
                                 f"<phi>={vev:.8f}, |B|={gradient:.2e}")
                return GroundStateResult(state=state, energy_density=energy, gradient_norm=gradient,
                                         vev=vev, iterations=iteration, converged=True,
                                         energy_history=history)

            eig_tol = max(gradient * opts.eig_tol_factor, 1e-14)
            AC = _lowest_eigenvector(lambda v: apply_H_Ac(v, state, env), state.AC, eig_tol)
            C = _lowest_eigenvector(lambda c: apply_H_C(c, state, env), state.C, eig_tol)
            state = self._gauge_update(AC, C)

        vev = expectation_one_site(best_state, self.phi).real
        self.logger.warning(f"Iteration cap {opts.maxiter} reached with |B|={best_gradient:.2e}; "
                            f"returning best state")
        return GroundStateResult(state=best_state, energy_density=float(best_energy),
                                 gradient_norm=best_gradient, vev=vev, iterations=opts.maxiter,
                                 converged=False, energy_history=history)


def find_ground_state(params: ModelParams, chi: int, tol_gradient: float = 1e-8,
                      opts: Optional[VumpsOptions] = None,
                      initial: Optional[CanonicalUMPS] = None) -> GroundStateResult:
    options = replace(opts or VumpsOptions(), tol=tol_gradient)
    return VumpsSolver(hamiltonian_terms(params), chi, options).run(initial)


def sweep_mass(lambda0: float, mu0sq_values: Sequence[float], d: int, chi: int,
               opts: Optional[VumpsOptions] = None, warm_start: bool = True,
               progress: Optional[Callable[[SweepPoint], None]] = None,
               solver: Optional[Callable[..., GroundStateResult]] = None) -> List[SweepPoint]:
    """
    Equilibrium scan over mu0sq reusing the previous converged state.

    solver(params, chi, opts, initial) replaces find_ground_state, e.g. with a
    retrying wrapper. Failures are recorded per point and the scan carries on.
    """
    opts = opts or VumpsOptions()
    points: List[SweepPoint] = []
    previous: Optional[CanonicalUMPS] = None
    for mu0sq in mu0sq_values:
        params = ModelParams(lambda0=lambda0, mu0sq=float(mu0sq), d=d)
        try:
            initial = previous if warm_start else None
            if solver is None:
                result = find_ground_state(params, chi, opts.tol, opts, initial=initial)
            else:
                result = solver(params, chi, opts, initial)
            point = SweepPoint(float(mu0sq), result, None)
            previous = result.state
        except PhiFourError as e:
            logger.error(f"Ground state at mu0sq={mu0sq} failed: {e}")
            point = SweepPoint(float(mu0sq), None, e.to_dict())
        points.append(point)
        if progress is not None:
            progress(point)
    return points


def estimate_critical_mass(mu0sq_values: Sequence[float], xi_values: Sequence[float]) -> float:
    """mu0sq at the maximum of the chi-limited correlation length"""
    xi = np.asarray(xi_values, dtype=float)
    if xi.size == 0 or np.all(np.isnan(xi)):
        raise ValueError("no finite correlation lengths to locate the critical mass")
    return float(np.asarray(mu0sq_values, dtype=float)[np.nanargmax(xi)])


__all__ = [
    "Environments",
    "VumpsOptions",
    "GroundStateResult",
    "SweepPoint",
    "VumpsSolver",
    "energy_density",
    "solve_environments",
    "apply_H_Ac",
    "apply_H_C",
    "tangent_residual",
    "coherent_seed",
    "find_ground_state",
    "sweep_mass",
    "estimate_critical_mass",
]

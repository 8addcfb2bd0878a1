"""
Reference values that do not touch the uMPS code.

Free-field correlators come from closed forms and adaptive quadrature; ramped
quenches integrate the classical mode equation of every momentum; interacting
checks use exact diagonalization of small periodic chains built from their
own Fock-space operators.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from cachetools import LRUCache, cached
from scipy import sparse
from scipy.integrate import IntegrationWarning, quad, solve_ivp
from scipy.sparse.linalg import eigsh

from solvers.errors import DimensionCapError, IntegrationError, QuadratureError, UnstableModeError
from utils.validator import validate_int_at_least, validate_positive

logger = logging.getLogger(__name__)

ORACLE_METHODS = ("analytic", "quadrature", "mode-ode", "exact-diag")
DEFAULT_DIMENSION_CAP = 10_000
DENSE_DIAG_LIMIT = 2048
QUAD_EPSREL = 1e-10
MODE_RTOL = 1e-12
MODE_ATOL = 1e-14


@dataclass
class OracleResult:
    description: str
    values: Dict[str, np.ndarray]
    method: str
    metadata: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in ORACLE_METHODS:
            raise ValueError(f"method must be one of {ORACLE_METHODS}, got {self.method!r}")
        for key, value in self.values.items():
            arr = np.asarray(value)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"oracle values {key!r} contain non-finite entries")
            self.values[key] = arr


# ---------------------------------------------------------------------------
# Free field, ground state
# ---------------------------------------------------------------------------

def omega_squared(k, musq: float) -> np.ndarray:
    return musq + 4.0 * np.sin(np.asarray(k, dtype=float) / 2.0) ** 2


def free_dispersion(k, musq: float):
    w2 = omega_squared(k, musq)
    if np.any(w2 < 0):
        raise UnstableModeError(f"omega_k^2 < 0 for musq={musq}", musq=musq, min_omega_sq=float(np.min(w2)))
    omega = np.sqrt(w2)
    return omega if omega.ndim else float(omega)


def free_ground_g2k(k, musq: float):
    """1/(2 omega_k)"""
    validate_positive(musq, "musq")
    return 0.5 / free_dispersion(k, musq)


def _quad(func, r: float = 0.0) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            if r == 0:
                value, _ = quad(func, 0.0, np.pi, epsabs=1e-14, epsrel=QUAD_EPSREL, limit=400)
            else:
                value, _ = quad(func, 0.0, np.pi, weight="cos", wvar=r,
                                     epsabs=1e-14, epsrel=QUAD_EPSREL, limit=400)
        except IntegrationWarning as w:
            raise QuadratureError(f"quadrature did not converge: {w}", r=r) from w
    return value


@cached(cache=LRUCache(maxsize=4096))
def _g2r_cached(r: int, musq: float) -> float:
    return _quad(lambda k: 0.5 / np.sqrt(omega_squared(k, musq)), float(r)) / np.pi


def free_ground_g2r(r, musq: float) -> np.ndarray:
    """(1/pi) int_0^pi cos(k r)/(2 omega_k) dk"""
    validate_positive(musq, "musq")
    r = np.atleast_1d(np.asarray(r, dtype=int))
    return np.array([_g2r_cached(int(abs(x)), float(musq)) for x in r])


def free_ground_g2(musq: float, k=None, r=None) -> np.ndarray:
    if (k is None) == (r is None):
        raise ValueError("pass exactly one of k or r")
    return free_ground_g2k(k, musq) if k is not None else free_ground_g2r(r, musq)


def free_energy_density(musq: float) -> float:
    """(1/pi) int_0^pi omega_k/2 dk"""
    validate_positive(musq, "musq", allow_zero=True)
    return _quad(lambda k: 0.5 * np.sqrt(omega_squared(k, musq))) / np.pi


def lattice_mass(musq: float) -> float:
    """Decay rate of the free correlator: omega_k vanishes at k = i*m."""
    validate_positive(musq, "musq")
    return float(np.arccosh(1.0 + musq / 2.0))


# ---------------------------------------------------------------------------
# Free field, quenches
# ---------------------------------------------------------------------------

def free_quench_g2k(k, musq_initial: float, musq_final: float, t: float):
    """|f_k(t)|^2 after an instantaneous mass change at t = 0."""
    validate_positive(musq_initial, "musq_initial")
    wi2 = omega_squared(k, musq_initial)
    wf2 = omega_squared(k, musq_final)
    f0sq = 0.5 / np.sqrt(wi2)

    out = np.empty(np.broadcast(wi2, wf2).shape)
    wi2, wf2 = np.broadcast_to(wi2, out.shape), np.broadcast_to(wf2, out.shape)
    pos, neg, zero = wf2 > 0, wf2 < 0, wf2 == 0

    wf = np.sqrt(wf2[pos])
    out[pos] = np.cos(wf * t) ** 2 + wi2[pos] / wf2[pos] * np.sin(wf * t) ** 2
    kappa = np.sqrt(-wf2[neg])
    out[neg] = np.cosh(kappa * t) ** 2 + wi2[neg] / kappa ** 2 * np.sinh(kappa * t) ** 2
    out[zero] = 1.0 + wi2[zero] * t ** 2
    out = f0sq * out
    return out if out.ndim else float(out)


def _integrate_segment(rhs, a: float, b: float, y, sample_times: np.ndarray, rtol: float, atol: float):
    """(state at b, states at sample_times) with DOP853 on [a, b]."""
    t_eval = np.unique(np.append(sample_times, b))
    sol = solve_ivp(rhs, (a, b), y, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(f"integration failed on [{a}, {b}]: {sol.message}", start=a, end=b)
    index = np.searchsorted(t_eval, sample_times)
    return sol.y[:, -1], sol.y[:, index].T


def free_ramp_g2k(k, schedule, times: Sequence[float], rtol: float = MODE_RTOL,
                  atol: float = MODE_ATOL, return_wronskian: bool = False):
    """
    G(k, t) = |f_k(t)|^2 with f'' = -omega_k(t)^2 f, vacuum initial data.

    schedule needs .value(t) and .t_F; the integration is split at t_F where
    the mass derivative jumps. times must be non-negative.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise ValueError("times must be non-negative")
    nk = len(k)
    sin2 = 4.0 * np.sin(k / 2.0) ** 2
    wi = free_dispersion(k, schedule.value(0.0))
    wi = np.atleast_1d(wi)
    f0 = 1.0 / np.sqrt(2.0 * wi)

    def rhs(t, y):
        w2 = schedule.value(t) + sin2
        re, im, dre, dim = y[:nk], y[nk:2 * nk], y[2 * nk:3 * nk], y[3 * nk:]
        return np.concatenate([dre, dim, -w2 * re, -w2 * im])

    y0 = np.concatenate([f0, np.zeros(nk), np.zeros(nk), -wi * f0])
    order = np.argsort(times)
    t_sorted = times[order]
    t_end = float(t_sorted[-1])
    breaks = [0.0] + ([schedule.t_F] if 0.0 < schedule.t_F < t_end else []) + [t_end]

    samples = np.tile(y0, (len(times), 1))
    y = y0
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b == a:
            continue
        mask = (t_sorted > a) & (t_sorted <= b)
        y, samples[mask] = _integrate_segment(rhs, a, b, y, t_sorted[mask], rtol, atol)

    re, im = samples[:, :nk], samples[:, nk:2 * nk]
    dre, dim = samples[:, 2 * nk:3 * nk], samples[:, 3 * nk:]
    g2k = re ** 2 + im ** 2
    # |f f'* - f* f'| = 2 |Im(f f'*)|
    wronskian = 2.0 * np.abs(im * dre - re * dim)
    deviation = float(np.max(np.abs(wronskian - 1.0)))
    if deviation > 1e-6:
        raise IntegrationError(f"Wronskian drifted by {deviation:.2e}", deviation=deviation)

    result = np.empty_like(g2k)
    result[order] = g2k
    if return_wronskian:
        return result, deviation
    return result


# ---------------------------------------------------------------------------
# Exact diagonalization
# ---------------------------------------------------------------------------

class ExactDiagonalization:
    """
    phi^4 chain of L sites with d Fock states per site.

    H(mu0sq) = H0 + mu0sq * M with M = sum_x w_x phi_x^2 / 2. Periodic chains
    have w_x = 1; open chains are the sum of the L - 1 bond terms of the
    uniform-MPS Hamiltonian, so the end sites carry w = 1/2 and
    E0 / (L - 1) bounds every translation-invariant energy density from below.
    """

    def __init__(self, L: int, d: int, lambda0: float, dimension_cap: int = DEFAULT_DIMENSION_CAP,
                 periodic: bool = True):
        self.L = validate_int_at_least(L, 2, "L")
        self.d = validate_int_at_least(d, 2, "d")
        self.lambda0 = validate_positive(lambda0, "lambda0", allow_zero=True)
        self.periodic = periodic
        self.dim = d ** L
        if self.dim > dimension_cap:
            raise DimensionCapError(f"Hilbert space dimension {self.dim} exceeds cap {dimension_cap}",
                                    dim=self.dim, cap=dimension_cap)
        self.logger = logging.getLogger('ExactDiagonalization')

        a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1)
        phi = (a + a.T) / np.sqrt(2.0)
        pi = 1j * (a.T - a) / np.sqrt(2.0)
        phi2 = phi @ phi
        local = 0.5 * pi @ pi + (self.lambda0 / 24.0) * phi2 @ phi2 + phi2
        self.phi_sites = [self._site(phi, x) for x in range(L)]
        weights = np.ones(L)
        if not periodic:
            weights[[0, -1]] = 0.5
        bonds = [(x, (x + 1) % L) for x in range(L if periodic else L - 1)]

        H0 = sparse.csr_matrix((self.dim, self.dim), dtype=np.complex128)
        M = sparse.csr_matrix((self.dim, self.dim), dtype=np.complex128)
        for x in range(L):
            H0 = H0 + weights[x] * self._site(local, x)
            M = M + (0.5 * weights[x]) * self._site(phi2, x)
        for x, y in bonds:
            H0 = H0 - self.phi_sites[x] @ self.phi_sites[y]
        self.H0 = H0.tocsr()
        self.M = M.tocsr()
        self.n_bonds = len(bonds)

    def _site(self, op: np.ndarray, x: int) -> sparse.csr_matrix:
        left = sparse.identity(self.d ** x, format="csr")
        right = sparse.identity(self.d ** (self.L - x - 1), format="csr")
        return sparse.kron(sparse.kron(left, sparse.csr_matrix(op)), right, format="csr")

    def hamiltonian(self, mu0sq: float) -> sparse.csr_matrix:
        return self.H0 + mu0sq * self.M

    def levels(self, mu0sq: float, n_levels: int = 4):
        """Lowest eigenvalues and eigenvectors."""
        H = self.hamiltonian(mu0sq)
        if self.dim <= DENSE_DIAG_LIMIT:
            vals, vecs = np.linalg.eigh(H.toarray())
            return vals[:n_levels], vecs[:, :n_levels]
        vals, vecs = eigsh(H, k=min(n_levels, self.dim - 2), which="SA", tol=1e-12)
        order = np.argsort(vals)
        return vals[order], vecs[:, order]

    def correlator(self, psi: np.ndarray) -> np.ndarray:
        """Site-averaged <phi_x phi_{x+r}> for r = 0..L-1, indices taken mod L"""
        phi_psi = [op @ psi for op in self.phi_sites]
        g = np.zeros(self.L)
        for r in range(self.L):
            g[r] = np.mean([np.vdot(phi_psi[x], phi_psi[(x + r) % self.L]).real for x in range(self.L)])
        return g

    def phi_expectation(self, psi: np.ndarray) -> float:
        return float(np.mean([np.vdot(psi, op @ psi).real for op in self.phi_sites]))

    def ground_state(self, mu0sq: float, n_levels: int = 4) -> OracleResult:
        vals, vecs = self.levels(mu0sq, n_levels)
        psi = vecs[:, 0]
        self.logger.debug(f"L={self.L} d={self.d} mu0sq={mu0sq}: E0={vals[0]:.10f}, gap={vals[1] - vals[0]:.6f}")
        boundary = "periodic" if self.periodic else "open"
        # per bond: open chains give a lower bound on the infinite-chain density
        density_key = "energy_density" if self.periodic else "energy_density_bound"
        return OracleResult(
            description=f"exact ground state of {boundary} chain L={self.L}, d={self.d}, "
                        f"lambda0={self.lambda0}, mu0sq={mu0sq}",
            values={"energies": vals, "g2_r": self.correlator(psi),
                    "phi": np.array([self.phi_expectation(psi)])},
            method="exact-diag",
            metadata={"L": self.L, "d": self.d, density_key: float(vals[0] / self.n_bonds),
                      "finite_size_gap": float(vals[1] - vals[0])},
        )

    def evolve(self, psi0: np.ndarray, mu0sq_of_t: Callable[[float], float], times: Sequence[float],
               breakpoints: Sequence[float] = (), rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
        """G(r, t) along i d/dt psi = H(mu0sq(t)) psi; returns array [t_index, r]."""
        times = np.asarray(times, dtype=float)
        if np.any(np.diff(times) < 0) or np.any(times < 0):
            raise ValueError("times must be non-negative and sorted")

        def rhs(t, psi):
            return -1j * (self.H0 @ psi + mu0sq_of_t(t) * (self.M @ psi))

        t_end = float(times[-1])
        cuts = sorted({0.0, t_end, *(b for b in breakpoints if 0.0 < b < t_end)})
        out = np.empty((len(times), self.L))
        psi = np.asarray(psi0, dtype=np.complex128)
        for i in np.nonzero(times == 0.0)[0]:
            out[i] = self.correlator(psi)
        for a, b in zip(cuts[:-1], cuts[1:]):
            if b == a:
                continue
            mask = (times > a) & (times <= b)
            psi, states = _integrate_segment(rhs, a, b, psi, times[mask], rtol, atol)
            for j, i in enumerate(np.nonzero(mask)[0]):
                out[i] = self.correlator(states[j])
        return out


def exact_diag(L: int, d: int, lambda0: float, mu0sq: Optional[float] = None, schedule=None,
               times: Optional[Sequence[float]] = None, n_levels: int = 4,
               dimension_cap: int = DEFAULT_DIMENSION_CAP) -> OracleResult:
    """
    Ground state at mu0sq, or with a schedule the evolution of the ground
    state of mu0sq(0) sampled at times.
    """
    ed = ExactDiagonalization(L, d, lambda0, dimension_cap)
    if schedule is None:
        if mu0sq is None:
            raise ValueError("pass mu0sq for a ground state or schedule and times for an evolution")
        return ed.ground_state(mu0sq, n_levels)
    if times is None:
        raise ValueError("an evolution needs sample times")
    ground = ed.ground_state(schedule.value(0.0), n_levels)
    _, vecs = ed.levels(schedule.value(0.0), 1)
    g2 = ed.evolve(vecs[:, 0], schedule.value, times, breakpoints=(schedule.t_F,))
    return OracleResult(
        description=f"exact evolution of periodic chain L={L}, d={d}, lambda0={lambda0}",
        values={"times": np.asarray(times, dtype=float), "g2_rt": g2},
        method="exact-diag",
        metadata={**ground.metadata, "L": L, "d": d},
    )


__all__ = [
    "OracleResult",
    "omega_squared",
    "free_dispersion",
    "free_ground_g2k",
    "free_ground_g2r",
    "free_ground_g2",
    "free_energy_density",
    "lattice_mass",
    "free_quench_g2k",
    "free_ramp_g2k",
    "ExactDiagonalization",
    "exact_diag",
]

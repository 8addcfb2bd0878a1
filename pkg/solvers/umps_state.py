"""
Uniform matrix product states in mixed canonical gauge.

Tensors use the layout A[s, a, b] (physical index first). The transfer
matrix E = sum_s A_s (x) conj(A_s) acts on row-major vectorised right
environments, r -> sum_s A_s r A_s^dag; left environments are acted on by
E^dag, l -> sum_s A_s^dag l A_s.

Usage:
    from solvers.umps_state import canonicalize, expectation_one_site
    state = canonicalize(A)
    phi_vev = expectation_one_site(state, ops.phi)
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np
import orjson
from scipy.linalg import qr, svd
from scipy.sparse.linalg import LinearOperator, eigs
from scipy.special import entr

from solvers.errors import CanonicalizationError, DegenerateSpectrumError
from solvers.lattice_model import build_local_operators
from utils.validator import validate_mps_tensor, validate_operator

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT_VERSION = 1

# dense eigensolver below this transfer-matrix size
DENSE_TRANSFER_LIMIT = 256
DEGENERACY_TOLERANCE = 1e-8
# polish loops accept this residual when the tight tolerance stalls
ACCEPTABLE_CANONICAL_RESIDUAL = 1e-8


@dataclass(frozen=True)
class UMPSTensor:
    A: np.ndarray

    def __post_init__(self):
        arr, _, _ = validate_mps_tensor(self.A)
        object.__setattr__(self, "A", arr)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def chi(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class CanonicalUMPS:
    """Mixed-gauge uMPS: AL C = C AR with AL left and AR right isometric."""

    AL: np.ndarray
    AR: np.ndarray
    C: np.ndarray
    time: float = 0.0

    @property
    def d(self) -> int:
        return self.AL.shape[0]

    @property
    def chi(self) -> int:
        return self.AL.shape[1]

    @property
    def AC(self) -> np.ndarray:
        return np.einsum("sab,bc->sac", self.AL, self.C)

    @property
    def singular_values(self) -> np.ndarray:
        return svd(self.C, compute_uv=False)

    def with_time(self, time: float) -> "CanonicalUMPS":
        return replace(self, time=float(time))


class TransferFixedPoints(NamedTuple):
    l: np.ndarray
    r: np.ndarray
    lambda1: complex
    lambda2_abs: float


# ---------------------------------------------------------------------------
# Transfer matrix helpers
# ---------------------------------------------------------------------------

def transfer_matrix(A: np.ndarray, B: Optional[np.ndarray] = None) -> np.ndarray:
    """Dense sum_s A_s (x) conj(B_s); B defaults to A."""
    B = A if B is None else B
    chi = A.shape[1]
    E = np.zeros((chi * chi, chi * chi), dtype=np.complex128)
    for s in range(A.shape[0]):
        E += np.kron(A[s], B[s].conj())
    return E


def _apply_right(A: np.ndarray, r: np.ndarray) -> np.ndarray:
    return np.einsum("sab,bc,sdc->ad", A, r, A.conj())


def _apply_left(A: np.ndarray, l: np.ndarray) -> np.ndarray:
    return np.einsum("sab,ac,scd->bd", A.conj(), l, A)


def transfer_spectrum(A: np.ndarray, k: int = 2, side: str = "right",
                      v0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Leading k eigenpairs of the transfer matrix sorted by magnitude.

    side="left" returns eigenvectors of the left action, i.e. of E^dag;
    eigenvalues are conjugated back so both sides report the spectrum of E.
    """
    chi = A.shape[1]
    n = chi * chi
    k = min(k, n)

    if n <= DENSE_TRANSFER_LIMIT:
        E = transfer_matrix(A)
        if side == "left":
            E = E.conj().T
        vals, vecs = np.linalg.eig(E)
    else:
        if side == "left":
            matvec = lambda v: _apply_left(A, v.reshape(chi, chi)).ravel()
        else:
            matvec = lambda v: _apply_right(A, v.reshape(chi, chi)).ravel()
        op = LinearOperator((n, n), matvec=matvec, dtype=np.complex128)
        if v0 is not None:
            v0 = np.asarray(v0, dtype=np.complex128).ravel()
        vals, vecs = eigs(op, k=max(k, 2), which="LM", v0=v0, tol=1e-14)

    order = np.argsort(-np.abs(vals))[:k]
    vals, vecs = vals[order], vecs[:, order]
    if side == "left":
        vals = vals.conj()
    return vals, vecs


def _hermitian_fixed_point(vec: np.ndarray, chi: int) -> np.ndarray:
    X = vec.reshape(chi, chi)
    tr = np.trace(X)
    if abs(tr) > 0:
        X = X * (abs(tr) / tr)
    X = 0.5 * (X + X.conj().T)
    return X / np.trace(X).real


def _check_gap(vals: np.ndarray) -> float:
    lam1 = abs(vals[0])
    lam2 = abs(vals[1]) if len(vals) > 1 else 0.0
    if lam1 == 0:
        raise CanonicalizationError("transfer matrix has vanishing spectral radius")
    if lam2 > (1.0 - DEGENERACY_TOLERANCE) * lam1:
        raise DegenerateSpectrumError(
            "dominant transfer-matrix eigenvalue is degenerate",
            lambda1=float(lam1), lambda2=float(lam2),
        )
    return float(lam2)


def transfer_fixed_points(A: np.ndarray) -> TransferFixedPoints:
    """Dominant left/right fixed points normalised to trace(l r) = 1."""
    A, _, chi = validate_mps_tensor(A)
    rvals, rvecs = transfer_spectrum(A, k=2, side="right")
    lam2 = _check_gap(rvals)
    _, lvecs = transfer_spectrum(A, k=1, side="left")

    r = _hermitian_fixed_point(rvecs[:, 0], chi)
    l = _hermitian_fixed_point(lvecs[:, 0], chi)
    l = l / np.trace(l @ r).real
    return TransferFixedPoints(l=l, r=r, lambda1=complex(rvals[0]), lambda2_abs=lam2)


# ---------------------------------------------------------------------------
# Gauge fixing
# ---------------------------------------------------------------------------

def _qr_positive(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    Q, R = qr(M, mode="economic")
    diag = np.diag(R)
    phases = np.where(np.abs(diag) > 0, diag / np.where(diag == 0, 1, np.abs(diag)), 1.0)
    return Q * phases[None, :], phases.conj()[:, None] * R


def _rq_positive(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """M = R Q with Q Q^dag = 1 and R lower triangular with positive diagonal."""
    Q, R = _qr_positive(M.conj().T)
    return R.conj().T, Q.conj().T


def _psd_factor(X: np.ndarray) -> np.ndarray:
    """Upper-triangular L with L^dag L = X (negative eigenvalues clipped)."""
    w, V = np.linalg.eigh(0.5 * (X + X.conj().T))
    w = np.clip(w, 0.0, None)
    _, R = _qr_positive(np.sqrt(w)[:, None] * V.conj().T)
    return R


def _left_orthonormalize(A: np.ndarray, L: np.ndarray, tol: float,
                         maxiter: int) -> Tuple[np.ndarray, np.ndarray, float]:
    d, chi, _ = A.shape
    L = L / np.linalg.norm(L)
    delta = np.inf
    for _ in range(maxiter):
        M = np.einsum("ab,sbc->sac", L, A).reshape(d * chi, chi)
        Q, R = _qr_positive(M)
        AL = Q.reshape(d, chi, chi)
        lam = np.linalg.norm(R)
        L_new = R / lam
        delta = np.linalg.norm(L_new - L)
        L = L_new
        if delta < tol:
            return AL, L, lam
    if delta < ACCEPTABLE_CANONICAL_RESIDUAL:
        logger.debug(f"Left gauge polish stopped at residual {delta:.2e}")
        return AL, L, lam
    raise CanonicalizationError("left orthonormalization did not converge",
                                residual=float(delta), maxiter=maxiter)


def _right_orthonormalize(AL: np.ndarray, C: np.ndarray, tol: float,
                          maxiter: int) -> Tuple[np.ndarray, np.ndarray]:
    d, chi, _ = AL.shape
    C = C / np.linalg.norm(C)
    delta = np.inf
    for _ in range(maxiter):
        M = np.einsum("sab,bc->asc", AL, C).reshape(chi, d * chi)
        R, Q = _rq_positive(M)
        AR = Q.reshape(chi, d, chi).transpose(1, 0, 2)
        C_new = R / np.linalg.norm(R)
        delta = np.linalg.norm(C_new - C)
        C = C_new
        if delta < tol:
            return AR, C
    if delta < ACCEPTABLE_CANONICAL_RESIDUAL:
        logger.debug(f"Right gauge polish stopped at residual {delta:.2e}")
        return AR, C
    raise CanonicalizationError("right orthonormalization did not converge",
                                residual=float(delta), maxiter=maxiter)


def mixed_gauge(A, tol: float = 1e-12, maxiter: int = 500,
                left_guess: Optional[np.ndarray] = None
                ) -> Tuple[CanonicalUMPS, np.ndarray, float]:
    """
    Bring A into mixed canonical form.

    Returns (state, G, lam) with A_s = lam * G^-1 AL_s G, which lets tangent
    vectors computed in the canonical gauge be mapped back onto A.
    left_guess is an optional starting vector for the iterative eigensolver.
    """
    A, d, chi = validate_mps_tensor(A)

    lvals, lvecs = transfer_spectrum(A, k=2, side="left", v0=left_guess)
    _check_gap(lvals)
    l = _hermitian_fixed_point(lvecs[:, 0], chi)
    AL, L, lam = _left_orthonormalize(A, _psd_factor(l), tol, maxiter)

    _, rvecs = transfer_spectrum(AL, k=1, side="right")
    r = _hermitian_fixed_point(rvecs[:, 0], chi)
    w, V = np.linalg.eigh(r)
    C0 = V * np.sqrt(np.clip(w, 0.0, None))[None, :]
    AR, C = _right_orthonormalize(AL, C0, tol, maxiter)

    U, S, Vh = svd(C)
    AL = np.einsum("ab,sbc,cd->sad", U.conj().T, AL, U)
    AR = np.einsum("ab,sbc,cd->sad", Vh, AR, Vh.conj().T)
    C = np.diag(S / np.linalg.norm(S)).astype(np.complex128)
    G = U.conj().T @ L

    state = CanonicalUMPS(AL=AL, AR=AR, C=C)
    left_res, right_res, gauge_res = isometry_residuals(state)
    if max(left_res, right_res) > 1e-10:
        logger.warning(f"Isometry residuals after canonicalization: "
                       f"left={left_res:.2e}, right={right_res:.2e}")
    logger.debug(f"Canonicalized chi={chi}: lam={lam:.12f}, gauge residual {gauge_res:.2e}")
    return state, G, float(lam)


def canonicalize(A, tol: float = 1e-12, maxiter: int = 500,
                 left_guess: Optional[np.ndarray] = None,
                 time: float = 0.0) -> CanonicalUMPS:
    state, _, _ = mixed_gauge(A, tol=tol, maxiter=maxiter, left_guess=left_guess)
    return state.with_time(time)


def isometry_residuals(state: CanonicalUMPS) -> Tuple[float, float, float]:
    """Norms of sum AL^dag AL - 1, sum AR AR^dag - 1 and AL C - C AR."""
    eye = np.eye(state.chi)
    left = np.einsum("sab,sac->bc", state.AL.conj(), state.AL) - eye
    right = np.einsum("sab,scb->ac", state.AR, state.AR.conj()) - eye
    gauge = (np.einsum("sab,bc->sac", state.AL, state.C)
             - np.einsum("ab,sbc->sac", state.C, state.AR))
    return float(np.linalg.norm(left)), float(np.linalg.norm(right)), float(np.linalg.norm(gauge))


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def product_state(vector) -> CanonicalUMPS:
    """Bond dimension one state with the given (normalised) local vector."""
    v = np.asarray(vector, dtype=np.complex128).ravel()
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("local vector must be non-zero")
    A = (v / norm).reshape(-1, 1, 1)
    return CanonicalUMPS(AL=A, AR=A.copy(), C=np.ones((1, 1), dtype=np.complex128))


def random_tensor(d: int, chi: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    rng = np.random.default_rng() if rng is None else rng
    A = rng.standard_normal((d, chi, chi)) + 1j * rng.standard_normal((d, chi, chi))
    return A / np.sqrt(d * chi)


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------

def expectation_one_site(state: CanonicalUMPS, op) -> complex:
    op = validate_operator(op, state.d, "op")
    AC = state.AC
    return complex(np.einsum("sab,st,tab->", AC.conj(), op, AC))


def correlator_phi(state: CanonicalUMPS, r_max: int = 200, op=None,
                   tail_tol: float = 1e-10) -> np.ndarray:
    """
    Unsubtracted <O_0 O_r> for r = 0..r_max, O = phi by default.

    Once the left environment carrying O has relaxed onto <O> times the
    fixed point (to tail_tol) the remaining entries are set to <O>^2.
    """
    if r_max < 1:
        raise ValueError(f"r_max must be >= 1, got {r_max}")
    op = build_local_operators(state.d).phi if op is None else validate_operator(op, state.d, "op")

    AC, AR = state.AC, state.AR
    vev = expectation_one_site(state, op)
    limit = vev * vev
    fixed = state.C.conj().T @ state.C

    values = np.empty(r_max + 1, dtype=np.complex128)
    values[0] = np.einsum("sab,st,tu,uab->", AC.conj(), op, op, AC)
    X = np.einsum("sab,st,tac->bc", AC.conj(), op, AC)
    for r in range(1, r_max + 1):
        values[r] = np.einsum("bc,sbd,st,tcd->", X, AR.conj(), op, AR)
        X = np.einsum("bc,sbd,sce->de", X, AR.conj(), AR)
        if np.linalg.norm(X - vev * fixed) < tail_tol:
            values[r + 1:] = limit
            logger.debug(f"Correlator tail clamped at r={r}")
            break

    imag = np.max(np.abs(values.imag))
    if imag > 1e-8:
        logger.warning(f"Correlator has imaginary part up to {imag:.2e}")
    if not np.all(np.isfinite(values)):
        logger.warning("Correlator contains non-finite values")
    return values.real.copy()


def connected_correlator(state: CanonicalUMPS, r_max: int = 200, op=None) -> np.ndarray:
    op = build_local_operators(state.d).phi if op is None else op
    vev = expectation_one_site(state, op).real
    return correlator_phi(state, r_max, op=op) - vev ** 2


def correlation_length(state: CanonicalUMPS) -> float:
    """xi = -1/ln|lambda2/lambda1| of the AL transfer matrix (0 if lambda2 = 0)."""
    if state.chi == 1:
        return 0.0
    vals, _ = transfer_spectrum(state.AL, k=2, side="right")
    lam2 = _check_gap(vals)
    lam1 = abs(vals[0])
    if lam2 <= 1e-300:
        return 0.0
    return float(-1.0 / np.log(lam2 / lam1))


def entanglement_entropy(state: CanonicalUMPS) -> float:
    s = state.singular_values
    p = s ** 2 / np.sum(s ** 2)
    return float(np.sum(entr(p)))


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

def save_snapshot(path, state: CanonicalUMPS, metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        np.savez(
            handle,
            format_version=np.int64(SNAPSHOT_FORMAT_VERSION),
            shape=np.array([state.d, state.chi], dtype=np.int64),
            AL=state.AL, AR=state.AR, C=state.C,
            time=np.float64(state.time),
            metadata=np.frombuffer(orjson.dumps(metadata or {}, option=orjson.OPT_SERIALIZE_NUMPY),
                                   dtype=np.uint8),
        )
    return path


def load_snapshot(path) -> Tuple[CanonicalUMPS, Dict[str, Any]]:
    with np.load(Path(path), allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != SNAPSHOT_FORMAT_VERSION:
            raise ValueError(f"Unsupported snapshot format version {version}")
        d, chi = (int(x) for x in data["shape"])
        state = CanonicalUMPS(AL=data["AL"].copy(), AR=data["AR"].copy(),
                              C=data["C"].copy(), time=float(data["time"]))
        metadata = orjson.loads(data["metadata"].tobytes())
    if state.AL.shape != (d, chi, chi):
        raise ValueError(f"Snapshot shape metadata {(d, chi)} does not match AL {state.AL.shape}")
    return state, metadata


__all__ = [
    "UMPSTensor",
    "CanonicalUMPS",
    "TransferFixedPoints",
    "transfer_matrix",
    "transfer_spectrum",
    "transfer_fixed_points",
    "mixed_gauge",
    "canonicalize",
    "isometry_residuals",
    "product_state",
    "random_tensor",
    "expectation_one_site",
    "correlator_phi",
    "connected_correlator",
    "correlation_length",
    "entanglement_entropy",
    "save_snapshot",
    "load_snapshot",
]

"""
Kibble-Zurek scaling predictions, the defect ansatz and its fits.

All shape functions are vectorised over their first argument. Non-linear
fits go through scipy.optimize.least_squares in Levenberg-Marquardt mode with
analytic Jacobians; positivity of the thermal parameters is enforced by
fitting log(beta) and softplus^-1(mu).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit

from solvers.errors import FitError, NoCrossingError
from solvers.lattice_model import lattice_dispersion
from utils.validator import validate_finite_array, validate_positive, validate_same_length

logger = logging.getLogger(__name__)

# G_corr shape parameters from the classical collapse fit
REFERENCE_CORR_PARAMS = (0.683, 0.120, 0.329, 0.176)

QUANTUM_XI_EXPONENT = 0.5
MEAN_FIELD_XI_EXPONENT = 1.0 / 3.0

BETA_UPPER_FLAG = 1e6
MU_LOWER_FLAG = 1e-8
GRADIENT_TOL = 1e-6


@dataclass(frozen=True)
class KZPredictionParams:
    nu: float
    mu_exp: float
    xi0: float = 1.0
    tau0: Optional[float] = None
    Delta0: float = 1.0
    D_co: int = 1

    def __post_init__(self):
        validate_positive(self.nu, "nu")
        validate_positive(self.mu_exp, "mu_exp")
        validate_positive(self.xi0, "xi0")
        validate_positive(self.Delta0, "Delta0")
        if self.tau0 is not None:
            validate_positive(self.tau0, "tau0")

    @property
    def time_scale(self) -> float:
        return self.tau0 if self.tau0 is not None else 1.0 / self.Delta0


@dataclass(frozen=True)
class DefectAnsatzParams:
    n: float
    v: float
    d_K: float
    alpha1: float = REFERENCE_CORR_PARAMS[0]
    alpha2: float = REFERENCE_CORR_PARAMS[1]
    beta1: float = REFERENCE_CORR_PARAMS[2]
    beta2: float = REFERENCE_CORR_PARAMS[3]
    beta_temp: Optional[float] = None
    mu_fit: float = 0.0

    def __post_init__(self):
        validate_positive(self.n, "n")
        validate_positive(self.v, "v")
        validate_positive(self.d_K, "d_K")
        validate_positive(self.mu_fit, "mu_fit", allow_zero=True)
        if self.beta_temp is not None:
            validate_positive(self.beta_temp, "beta_temp")

    @property
    def corr(self) -> Tuple[float, float, float, float]:
        return (self.alpha1, self.alpha2, self.beta1, self.beta2)


@dataclass
class FitResult:
    params: Dict[str, float]
    covariance: np.ndarray
    residual_norm: float
    converged: bool
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def errors(self) -> Dict[str, float]:
        diag = np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))
        return dict(zip(self.params, diag.tolist()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "params": dict(self.params),
            "errors": self.errors,
            "covariance": np.asarray(self.covariance).tolist(),
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "metadata": self.metadata,
        }


class KZScales(NamedTuple):
    t_hat: float
    epsilon_hat: float
    xi_hat: float
    n_predicted: float


class KinkProfile(NamedTuple):
    profile: np.ndarray
    charge: int


# ---------------------------------------------------------------------------
# Shape functions
# ---------------------------------------------------------------------------

def g_kink(x):
    """((pi x/2)/sinh(pi x/2))^2, evaluated by its series near x = 0."""
    x = np.asarray(x, dtype=float)
    y = 0.5 * np.pi * np.abs(np.atleast_1d(x))
    out = np.empty_like(y)
    small = y < 0.5 * np.pi * 1e-4
    ys = y[small] ** 2
    out[small] = 1.0 - ys / 3.0 + ys ** 2 / 15.0 - 2.0 * ys ** 3 / 189.0
    yl = y[~small]
    ratio = 2.0 * yl * np.exp(-yl) / -np.expm1(-2.0 * yl)
    out[~small] = ratio ** 2
    return out.reshape(x.shape) if x.ndim else float(out[0])


def g_corr_momentum(y, alpha1: float, alpha2: float, beta1: float, beta2: float):
    y2 = np.asarray(y, dtype=float) ** 2
    return alpha1 * np.exp(-alpha2 * y2) + beta1 / (1.0 + beta2 * y2)


def g_corr_real(nr, a1: float, a2: float, b1: float, b2: float):
    nr = np.asarray(nr, dtype=float)
    return a1 * np.exp(-a2 * nr ** 2) + b1 * np.exp(-b2 * nr)


def _g_mat_parts(k, beta_temp: float, mu_fit: float):
    """omega, q = exp(-beta omega), 1 - q and q/(omega (1 - q))."""
    omega = lattice_dispersion(k, mu_fit ** 2)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = np.exp(-beta_temp * omega)
        one_minus_q = -np.expm1(-beta_temp * omega)
        value = q / (omega * one_minus_q)
    return omega, q, one_minus_q, value


def g_mat(k, beta_temp: float, mu_fit: float):
    """Thermal matter term 1/(omega_k (exp(beta omega_k) - 1))."""
    validate_positive(beta_temp, "beta_temp")
    omega, _, _, value = _g_mat_parts(k, beta_temp, mu_fit)
    if np.any(omega == 0):
        logger.warning("g_mat evaluated at omega_k = 0; value is infinite there")
        value = np.where(omega == 0, np.inf, value)
    return value if np.ndim(value) else float(value)


def classical_kink(x, v: float, d_K: float, antikink: bool = False) -> KinkProfile:
    """v tanh(x/d_K) and its topological charge (phi(+inf) - phi(-inf))/(2v)."""
    validate_positive(v, "v")
    validate_positive(d_K, "d_K")
    sign = -1 if antikink else 1
    profile = sign * v * np.tanh(np.asarray(x, dtype=float) / d_K)
    return KinkProfile(profile=profile, charge=sign)


def classical_parameters(mu0sq: float, lambda0: float) -> Tuple[float, float]:
    """Classical (v, d_K) of the broken phase: v = sqrt(-6 mu0sq/lambda0), d_K = sqrt(-2/mu0sq)."""
    validate_positive(lambda0, "lambda0")
    if mu0sq >= 0:
        raise ValueError(f"classical kinks need mu0sq < 0, got {mu0sq}")
    return float(np.sqrt(-6.0 * mu0sq / lambda0)), float(np.sqrt(-2.0 / mu0sq))


def defect_ansatz(k, params: DefectAnsatzParams, g2_vacuum=0.0, include_matter: bool = True):
    """(v^2/n) G_corr(k/n) G_kink(k d_K) + G_vac(k) [+ G_mat(k)]."""
    k = np.asarray(k, dtype=float)
    value = (params.v ** 2 / params.n) * g_corr_momentum(k / params.n, *params.corr) * g_kink(k * params.d_K)
    value = value + np.asarray(g2_vacuum, dtype=float)
    if include_matter and params.beta_temp is not None:
        value = value + g_mat(k, params.beta_temp, params.mu_fit)
    return value


# ---------------------------------------------------------------------------
# Scaling predictions
# ---------------------------------------------------------------------------

def kz_scales(tauQ: float, p: KZPredictionParams) -> KZScales:
    """Freeze-out time, distance to the critical point, length and defect density."""
    tauQ = validate_positive(tauQ, "tauQ")
    t_hat = -(p.time_scale * tauQ ** p.mu_exp) ** (1.0 / (1.0 + p.mu_exp))
    epsilon_hat = t_hat / tauQ
    xi_hat = p.xi0 * abs(epsilon_hat) ** (-p.nu)
    return KZScales(t_hat, epsilon_hat, xi_hat, xi_hat ** (-p.D_co))


def extract_epsilon_hat(mu0sq_values, ratios, m_C2: float, threshold: float = 0.9) -> float:
    """
    First crossing of ratios through threshold, linearly interpolated in mu0sq.

    Returns mu_hat^2 - m_C^2.
    """
    mu = validate_finite_array(mu0sq_values, "mu0sq_values", ndim=1).astype(float)
    ratio = validate_finite_array(ratios, "ratios", ndim=1).astype(float)
    validate_same_length(mu, ratio, ("mu0sq_values", "ratios"))

    shifted = ratio - threshold
    for i in range(len(shifted) - 1):
        if shifted[i] == 0:
            return float(mu[i] - m_C2)
        if shifted[i] * shifted[i + 1] < 0:
            frac = shifted[i] / (shifted[i] - shifted[i + 1])
            return float(mu[i] + frac * (mu[i + 1] - mu[i]) - m_C2)
    if len(shifted) and shifted[-1] == 0:
        return float(mu[-1] - m_C2)
    raise NoCrossingError(f"ratio never crosses {threshold} in the scan window",
                          threshold=threshold, ratio_min=float(ratio.min(initial=np.nan)),
                          ratio_max=float(ratio.max(initial=np.nan)))


# ---------------------------------------------------------------------------
# Fits
# ---------------------------------------------------------------------------

def _weights(sigmas, n: int) -> np.ndarray:
    """Inverse errors; zero errors take the median of the non-zero ones."""
    if sigmas is None:
        return np.ones(n)
    s = np.abs(np.asarray(sigmas, dtype=float))
    if s.shape != (n,):
        raise ValueError(f"sigmas must have shape ({n},), got {s.shape}")
    positive = s[s > 0]
    if positive.size == 0:
        return np.ones(n)
    s = np.where(s > 0, s, np.median(positive))
    return 1.0 / s


def _covariance(jac: np.ndarray, residuals: np.ndarray, absolute: bool) -> np.ndarray:
    cov = np.linalg.pinv(jac.T @ jac)
    if not absolute:
        dof = max(len(residuals) - jac.shape[1], 1)
        cov = cov * float(residuals @ residuals) / dof
    return cov


def fit_power_law(xs, ys, sigmas=None) -> FitResult:
    """ys = amplitude * xs**exponent by weighted least squares in log-log space."""
    x = validate_finite_array(xs, "xs", ndim=1).astype(float)
    y = validate_finite_array(ys, "ys", ndim=1).astype(float)
    validate_same_length(x, y, ("xs", "ys"))
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fits need strictly positive xs and ys")
    if len(x) < 2:
        raise FitError("power-law fit needs at least two points", n_points=len(x))

    # relative errors become absolute errors of log(y)
    w = np.ones_like(y) if sigmas is None else _weights(np.asarray(sigmas, float) / y, len(y))
    X = np.column_stack([np.ones_like(x), np.log(x)])
    coef, *_ = np.linalg.lstsq(X * w[:, None], np.log(y) * w, rcond=None)
    residuals = (np.log(y) - X @ coef) * w
    cov_log = _covariance(X * w[:, None], residuals, absolute=sigmas is not None)

    amplitude = float(np.exp(coef[0]))
    T = np.diag([amplitude, 1.0])
    return FitResult(
        params={"amplitude": amplitude, "exponent": float(coef[1])},
        covariance=T @ cov_log @ T,
        residual_norm=float(np.linalg.norm(residuals)),
        converged=True,
        metadata={"n_points": int(len(x)), "weighted": sigmas is not None},
    )


def _softplus(p: float) -> float:
    return float(np.logaddexp(0.0, p))


def _softplus_inverse(mu: float) -> float:
    return float(mu + np.log(-np.expm1(-mu)))


def fit_defect_ansatz(k, g2_bar, g2_vacuum, n_est: float, v: float, d_K: float,
                      sigmas=None, corr: Sequence[float] = REFERENCE_CORR_PARAMS,
                      initial: Tuple[float, float] = (1.0, 1.0),
                      max_nfev: int = 2000) -> FitResult:
    """
    Two-parameter fit of the thermal matter term (beta_temp, mu_fit).

    n_est, v, d_K and the G_corr shape are held fixed. The residual is
    weighted by 1/sigma and is invariant under reordering of the samples.
    """
    k = validate_finite_array(k, "k", ndim=1).astype(float)
    data = validate_finite_array(g2_bar, "g2_bar", ndim=1).astype(float)
    vac = np.broadcast_to(np.asarray(g2_vacuum, dtype=float), k.shape)
    validate_same_length(k, data, ("k", "g2_bar"))
    if len(k) < 3:
        raise FitError("defect-ansatz fit needs at least three k points", n_points=len(k))
    fixed = DefectAnsatzParams(n=n_est, v=v, d_K=d_K, alpha1=corr[0], alpha2=corr[1],
                               beta1=corr[2], beta2=corr[3])
    w = _weights(sigmas, len(k))
    baseline = defect_ansatz(k, fixed, vac, include_matter=False)

    def unpack(p):
        return float(np.exp(p[0])), _softplus(p[1])

    def residuals(p):
        beta, mu = unpack(p)
        *_, matter = _g_mat_parts(k, beta, mu)
        return (baseline + matter - data) * w

    def jacobian(p):
        beta, mu = unpack(p)
        omega, q, one_minus_q, value = _g_mat_parts(k, beta, mu)
        q_ratio = q / one_minus_q ** 2
        d_beta = -q_ratio
        d_omega = -value / omega - beta * q_ratio / omega
        d_mu = d_omega * (mu / omega)
        return np.column_stack([d_beta * beta, d_mu * expit(p[1])]) * w[:, None]

    p0 = np.array([np.log(validate_positive(initial[0], "initial beta")),
                   _softplus_inverse(validate_positive(initial[1], "initial mu"))])
    try:
        res = least_squares(residuals, p0, jac=jacobian, method="lm",
                            ftol=1e-12, xtol=1e-12, gtol=1e-12, max_nfev=max_nfev)
    except (ValueError, FloatingPointError) as e:
        raise FitError(f"defect-ansatz fit failed: {e}") from e

    beta, mu = unpack(res.x)
    cov_p = _covariance(res.jac, res.fun, absolute=sigmas is not None)
    T = np.diag([beta, float(expit(res.x[1]))])
    at_bounds: List[str] = []
    if beta > BETA_UPPER_FLAG:
        at_bounds.append("beta_temp")
    if mu < MU_LOWER_FLAG:
        at_bounds.append("mu_fit")
    if at_bounds:
        logger.warning(f"Defect-ansatz fit parameters at bounds: {at_bounds}")

    gradient = float(np.max(np.abs(res.jac.T @ res.fun)))
    converged = bool(res.success and gradient < GRADIENT_TOL)
    return FitResult(
        params={"beta_temp": beta, "mu_fit": mu},
        covariance=T @ cov_p @ T,
        residual_norm=float(np.linalg.norm(res.fun)),
        converged=converged,
        metadata={
            "at_bounds": at_bounds,
            "gradient_norm": gradient,
            "nfev": int(res.nfev),
            "fixed": {"n_est": n_est, "v": v, "d_K": d_K, "corr": list(corr)},
        },
    )


def fit_g_corr(y, values, sigmas=None, window: Tuple[float, float] = (0.0, 5.0),
               initial: Sequence[float] = REFERENCE_CORR_PARAMS) -> FitResult:
    """Unconstrained four-parameter fit of G_corr on y = k/n inside window."""
    y = validate_finite_array(y, "y", ndim=1).astype(float)
    vals = validate_finite_array(values, "values", ndim=1).astype(float)
    validate_same_length(y, vals, ("y", "values"))
    mask = (y >= window[0]) & (y <= window[1])
    if mask.sum() < 5:
        raise FitError("too few points inside the G_corr fit window",
                       n_points=int(mask.sum()), window=list(window))
    y, vals = y[mask], vals[mask]
    w = _weights(None if sigmas is None else np.asarray(sigmas, float)[mask], len(y))
    y2 = y ** 2

    def residuals(p):
        return (g_corr_momentum(y, *p) - vals) * w

    def jacobian(p):
        a1, a2, b1, b2 = p
        gauss = np.exp(-a2 * y2)
        lor = 1.0 / (1.0 + b2 * y2)
        return np.column_stack([gauss, -a1 * y2 * gauss, lor, -b1 * y2 * lor ** 2]) * w[:, None]

    res = least_squares(residuals, np.asarray(initial, dtype=float), jac=jacobian, method="lm",
                        ftol=1e-12, xtol=1e-12, gtol=1e-12)
    names = ("alpha1", "alpha2", "beta1", "beta2")
    params = dict(zip(names, (float(v) for v in res.x)))
    gradient = float(np.max(np.abs(res.jac.T @ res.fun)))
    return FitResult(
        params=params,
        covariance=_covariance(res.jac, res.fun, absolute=sigmas is not None),
        residual_norm=float(np.linalg.norm(res.fun)),
        converged=bool(res.success and gradient < GRADIENT_TOL),
        metadata={"window": list(window), "n_points": int(len(y)),
                  "alpha1_plus_beta1": params["alpha1"] + params["beta1"]},
    )


def g_uni(g2_bar_k, g2_vacuum_k) -> np.ndarray:
    """(G_bar(k) - G_vac(k)) / (G_bar(0) - G_vac(0))"""
    diff = np.asarray(g2_bar_k, dtype=float) - np.asarray(g2_vacuum_k, dtype=float)
    if diff[0] == 0:
        raise ZeroDivisionError("G_bar(0) equals G_vac(0); G_uni is undefined")
    return diff / diff[0]


def divide_by_kink(k, values, d_K: float) -> np.ndarray:
    return np.asarray(values, dtype=float) / g_kink(np.asarray(k, dtype=float) * d_K)


def collapse_metric(curves: Sequence[Tuple[Sequence[float], Sequence[float]]],
                    window: Tuple[float, float] = (0.0, 5.0), n_grid: int = 200,
                    return_profile: bool = False):
    """
    Largest relative spread (max - min)/mean across curves on a shared grid.

    Each curve is (x, y) with x = k/n_est; curves are linearly interpolated
    onto the overlap of their ranges with window.
    """
    if len(curves) < 2:
        raise ValueError("collapse needs at least two curves")
    prepared = []
    for x, y in curves:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        order = np.argsort(x)
        prepared.append((x[order], y[order]))
    lo = max(window[0], max(x[0] for x, _ in prepared))
    hi = min(window[1], min(x[-1] for x, _ in prepared))
    if not hi >= lo:
        raise ValueError(f"collapse window {window} does not overlap the curves")
    grid = np.linspace(lo, hi, n_grid) if hi > lo else np.array([lo])
    stack = np.stack([np.interp(grid, x, y) for x, y in prepared])
    mean = np.abs(stack.mean(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        spread = np.where(mean > 0, (stack.max(axis=0) - stack.min(axis=0)) / mean, 0.0)
    if return_profile:
        return grid, spread
    return float(spread.max())


def defect_density_from_fit(power_law: FitResult, tauQ, v: float):
    """Density implied by a power-law fit of G_bar(0) - G_vac(0), on the n_est convention."""
    A = power_law.params["amplitude"]
    p = power_law.params["exponent"]
    return A * np.asarray(tauQ, dtype=float) ** p / validate_positive(v, "v") ** 2


def classify_exponent(exponent: float) -> Dict[str, Any]:
    """Compare a fitted xi_hat exponent with the quantum (1/2) and mean-field (1/3) values."""
    distances = {
        "quantum": abs(abs(exponent) - QUANTUM_XI_EXPONENT),
        "mean_field": abs(abs(exponent) - MEAN_FIELD_XI_EXPONENT),
    }
    return {"exponent": exponent, "closest": min(distances, key=distances.get), **distances}


__all__ = [
    "REFERENCE_CORR_PARAMS",
    "KZPredictionParams",
    "DefectAnsatzParams",
    "FitResult",
    "KZScales",
    "KinkProfile",
    "g_kink",
    "g_corr_momentum",
    "g_corr_real",
    "g_mat",
    "classical_kink",
    "classical_parameters",
    "defect_ansatz",
    "kz_scales",
    "extract_epsilon_hat",
    "fit_power_law",
    "fit_defect_ansatz",
    "fit_g_corr",
    "g_uni",
    "divide_by_kink",
    "collapse_metric",
    "defect_density_from_fit",
    "classify_exponent",
]

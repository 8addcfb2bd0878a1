"""
Tangent-space projected time evolution of a uniform MPS.

The integration variable is the left-isometric tensor AL of the current
state. Each Runge-Kutta stage canonicalizes its stage tensor, evaluates the
projected Schroedinger right-hand side in that canonical gauge and maps it
back with A = lam * G^-1 AL G. The step is fixed; the embedded fourth-order
solution of the Fehlberg pair is kept as a local error diagnostic.
"""

import logging
import math
import operator
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, NamedTuple, Optional

import numpy as np
from cachetools import LRUCache, cachedmethod
from tqdm import tqdm

from analysis.observables import CorrelatorRecord
from solvers.errors import EvolutionError, NormDriftError, PhiFourError, SingularCenterError
from solvers.lattice_model import ModelParams, QuenchSchedule, build_local_operators, hamiltonian_terms
from solvers.umps_state import (
    CanonicalUMPS,
    correlator_phi,
    entanglement_entropy,
    expectation_one_site,
    mixed_gauge,
)
from solvers.vumps_solver import energy_density, solve_environments, tangent_residual
from utils.validator import validate_int_at_least, validate_positive

logger = logging.getLogger(__name__)

# Runge-Kutta-Fehlberg 4(5)
RKF_NODES = np.array([0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2])
RKF_STAGES = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
RKF_WEIGHTS_5 = np.array([16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])
RKF_WEIGHTS_4 = np.array([25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0])

NORM_WARN_THRESHOLD = 1e-10


@dataclass
class EvolverConfig:
    step: float = 1e-2
    sample_every: int = 100
    env_tol: float = 1e-12
    pinv_cutoff: float = 1e-12
    canonical_tol: float = 1e-12
    r_max: int = 200
    checkpoint_every: int = 10
    max_norm_drift: float = 1e-6

    def __post_init__(self):
        validate_positive(self.step, "step")
        validate_int_at_least(self.sample_every, 1, "sample_every")
        validate_positive(self.pinv_cutoff, "pinv_cutoff")
        validate_int_at_least(self.r_max, 1, "r_max")
        validate_int_at_least(self.checkpoint_every, 1, "checkpoint_every")


@dataclass(frozen=True)
class TangentTensor:
    """B in the left gauge of `reference`: sum_s AL_s^dag B_s = 0."""

    B: np.ndarray
    reference: CanonicalUMPS = field(repr=False)

    def gauge_residual(self) -> float:
        return float(np.linalg.norm(np.einsum("sab,sac->bc", self.reference.AL.conj(), self.B)))


class StepOutcome(NamedTuple):
    state: CanonicalUMPS
    norm: float
    error_estimate: float


class QuenchTrajectory(NamedTuple):
    records: List[CorrelatorRecord]
    state: CanonicalUMPS
    step: int
    completed: bool


class TimeDependentHamiltonian:
    """Bond tensors h(t) for a fixed lambda0 and d, cached by mu0sq value"""

    def __init__(self, lambda0: float, d: int, schedule: QuenchSchedule, cache_size: int = 64):
        self.lambda0 = lambda0
        self.d = d
        self.schedule = schedule
        self._cache = LRUCache(maxsize=cache_size)

    @cachedmethod(operator.attrgetter("_cache"))
    def bond_tensor(self, mu0sq: float) -> np.ndarray:
        return hamiltonian_terms(ModelParams(self.lambda0, float(mu0sq), self.d)).bond_tensor()

    def at(self, t: float) -> np.ndarray:
        return self.bond_tensor(self.schedule.value(max(t, 0.0)))


def _center_pinv(C: np.ndarray, cutoff: float) -> np.ndarray:
    U, s, Vh = np.linalg.svd(C)
    s_max = s[0] if s.size else 0.0
    if s_max < cutoff:
        raise SingularCenterError("center matrix is numerically zero", s_max=float(s_max))
    inv = np.where(s > cutoff * s_max, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return (Vh.conj().T * inv[None, :]) @ U.conj().T


def tangent_derivative(state: CanonicalUMPS, hamiltonian, config: Optional[EvolverConfig] = None
                       ) -> TangentTensor:
    """
    Gauge-fixed tangent tensor B~ = (1 - AL AL^dag) H_Ac(AC) C^+.

    The evolution is dAL/dt = -i B~.
    """
    config = config or EvolverConfig()
    env = solve_environments(state, hamiltonian, tol=config.env_tol)
    residual = tangent_residual(state, env)
    B = np.einsum("sab,bc->sac", residual, _center_pinv(state.C, config.pinv_cutoff))
    return TangentTensor(B=B, reference=state)


class TdvpEvolver:
    """Fixed-step Runge-Kutta integration of the projected flow"""

    def __init__(self, hamiltonian: TimeDependentHamiltonian, config: Optional[EvolverConfig] = None):
        self.hamiltonian = hamiltonian
        self.config = config or EvolverConfig()
        self.phi = build_local_operators(hamiltonian.d).phi
        self.logger = logging.getLogger('TdvpEvolver')

    def _stage_derivative(self, state: CanonicalUMPS, G: np.ndarray, lam: float, t: float) -> np.ndarray:
        tangent = tangent_derivative(state, self.hamiltonian.at(t), self.config)
        mapped = np.linalg.solve(G[None, :, :], np.einsum("sab,bc->sac", tangent.B, G))
        return -1j * lam * mapped

    def step(self, state: CanonicalUMPS, t: float) -> StepOutcome:
        cfg = self.config
        dt = cfg.step
        A0 = state.AL
        eye = np.eye(state.chi, dtype=np.complex128)

        k = []
        for i, row in enumerate(RKF_STAGES):
            if i == 0:
                stage_state, G, lam = state, eye, 1.0
            else:
                A_i = A0 + dt * sum(a * k_j for a, k_j in zip(row, k))
                stage_state, G, lam = mixed_gauge(A_i, tol=cfg.canonical_tol)
            k.append(self._stage_derivative(stage_state, G, lam, t + RKF_NODES[i] * dt))

        increment = sum(b * k_i for b, k_i in zip(RKF_WEIGHTS_5, k))
        error = dt * float(np.linalg.norm(sum((b5 - b4) * k_i for b5, b4, k_i in
                                             zip(RKF_WEIGHTS_5, RKF_WEIGHTS_4, k))))
        new_state, _, lam = mixed_gauge(A0 + dt * increment, tol=cfg.canonical_tol)
        norm = lam ** 2
        drift = abs(norm - 1.0)
        if drift > cfg.max_norm_drift:
            raise NormDriftError(f"norm drift {drift:.2e} exceeds {cfg.max_norm_drift:.0e}",
                                 drift=drift, time=t)
        if drift > NORM_WARN_THRESHOLD:
            self.logger.warning(f"Norm drift {drift:.2e} at t={t + dt:.4f}")
        return StepOutcome(new_state.with_time(t + dt), norm, error)

    def snapshot(self, state: CanonicalUMPS, step: int, norm: float = 1.0,
                 error_estimate: float = 0.0) -> CorrelatorRecord:
        t = state.time
        return CorrelatorRecord(
            time=t,
            g2_r=correlator_phi(state, self.config.r_max, op=self.phi),
            norm=norm,
            energy_density=energy_density(state, self.hamiltonian.at(t)),
            entropy=entanglement_entropy(state),
            step=step,
            mu0sq=self.hamiltonian.schedule.value(t),
            vev=expectation_one_site(state, self.phi).real,
            error_estimate=error_estimate,
        )

    def evolve(self, initial: CanonicalUMPS,
               observers: Iterable[Callable[[CorrelatorRecord], None]] = (),
               checkpoint: Optional[Callable[[CanonicalUMPS, int], None]] = None,
               should_stop: Optional[Callable[[], bool]] = None,
               start_step: int = 0, show_progress: bool = True) -> QuenchTrajectory:
        """
        Integrate from the state at start_step to the end of the schedule.

        A snapshot is taken every sample_every steps (and at step 0 of a fresh
        run); checkpoint() is called every checkpoint_every snapshots, on
        interruption and before a failure is re-raised.
        """
        cfg = self.config
        observers = list(observers)
        end_time = self.hamiltonian.schedule.end_time
        n_steps = int(math.ceil(end_time / cfg.step - 1e-9))
        records: List[CorrelatorRecord] = []

        def emit(record: CorrelatorRecord):
            records.append(record)
            for observer in observers:
                observer(record)
            if checkpoint is not None and len(records) % cfg.checkpoint_every == 0:
                checkpoint(state, step)

        state, step = initial.with_time(start_step * cfg.step), start_step
        if start_step == 0:
            emit(self.snapshot(state, 0))

        self.logger.info(f"Evolving chi={state.chi} from step {start_step} to {n_steps} "
                         f"(t_F={self.hamiltonian.schedule.t_F:.2f}, end={end_time:.2f})")
        disable = not show_progress or not self.logger.isEnabledFor(logging.INFO)
        with tqdm(total=n_steps, initial=start_step, disable=disable, desc="tdvp", leave=False) as bar:
            while step < n_steps:
                if should_stop is not None and should_stop():
                    self.logger.warning(f"Stop requested at step {step}; writing checkpoint")
                    if checkpoint is not None:
                        checkpoint(state, step)
                    return QuenchTrajectory(records, state, step, completed=False)
                t = step * cfg.step
                try:
                    outcome = self.step(state, t)
                except PhiFourError as e:
                    self.logger.error(f"Step {step} at t={t:.4f} failed: {e}")
                    if checkpoint is not None:
                        checkpoint(state, step)
                    raise EvolutionError(f"evolution failed at t={t:.4f}: {e}", time=t, step=step,
                                         cause=e.to_dict()) from e
                state = outcome.state.with_time((step + 1) * cfg.step)
                step += 1
                bar.update(1)
                if step % cfg.sample_every == 0 or step == n_steps:
                    emit(self.snapshot(state, step, outcome.norm, outcome.error_estimate))

        return QuenchTrajectory(records, state, step, completed=True)


def rk5_step(state: CanonicalUMPS, hamiltonian: TimeDependentHamiltonian, t: float,
             config: Optional[EvolverConfig] = None) -> CanonicalUMPS:
    return TdvpEvolver(hamiltonian, config).step(state, t).state


def evolve_quench(initial: CanonicalUMPS, schedule: QuenchSchedule, lambda0: float,
                  config: Optional[EvolverConfig] = None,
                  observers: Iterable[Callable[[CorrelatorRecord], None]] = (),
                  **kwargs) -> QuenchTrajectory:
    hamiltonian = TimeDependentHamiltonian(lambda0, initial.d, schedule)
    return TdvpEvolver(hamiltonian, config).evolve(initial, observers=observers, **kwargs)


__all__ = [
    "EvolverConfig",
    "TangentTensor",
    "StepOutcome",
    "QuenchTrajectory",
    "TimeDependentHamiltonian",
    "TdvpEvolver",
    "tangent_derivative",
    "rk5_step",
    "evolve_quench",
]

"""
Campaign orchestration: equilibrium sweeps, cached ground states, quench runs
over the (tauQ, chi, mu0sq_final) grid, the analysis pipeline and the
oracle tables.

Each cmd_* function returns a process exit code: 0 success, 2 partial (some
runs or analysis steps failed or were interrupted), 1 fatal.
"""

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from analysis.kzm_analysis import (
    REFERENCE_CORR_PARAMS,
    DefectAnsatzParams,
    classify_exponent,
    collapse_metric,
    defect_ansatz,
    defect_density_from_fit,
    divide_by_kink,
    extract_epsilon_hat,
    fit_defect_ansatz,
    fit_g_corr,
    fit_power_law,
    g_uni,
)
from analysis.observables import (
    ansatz_density_scale,
    chi_error_estimate,
    default_k_grid,
    estimate_defect_density,
    excitation_at_cutoff,
    kink_width,
    momentum_transform,
    scalar_mass,
    time_average,
    vacuum_correlator,
)
from config.schema import CampaignConfig, config_hash, ground_hash, run_hash
from enhanced_modules.resilience_module import CheckpointManager, GracefulShutdown, RetryManager, RunMonitor
from harness import __version__
from harness.persistence import (
    RunManifest,
    SeriesWriter,
    load_series,
    read_csv,
    write_csv,
    write_json,
)
from harness.plotting import render_analysis
from oracles.free_field_oracle import (
    ExactDiagonalization,
    free_energy_density,
    free_ground_g2k,
    free_ground_g2r,
    free_quench_g2k,
    free_ramp_g2k,
    lattice_mass,
    omega_squared,
)
from solvers.errors import ConfigurationError, MixedConfigError, NegativeDefectSignalError, PhiFourError
from solvers.lattice_model import ModelParams, QuenchSchedule
from solvers.tdvp_evolver import EvolverConfig, TdvpEvolver, TimeDependentHamiltonian
from solvers.umps_state import CanonicalUMPS, load_snapshot, save_snapshot
from solvers.vumps_solver import (
    GroundStateResult,
    VumpsOptions,
    estimate_critical_mass,
    find_ground_state,
    sweep_mass,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


class CampaignPaths:
    """Directory layout of a campaign under output_dir"""

    def __init__(self, root):
        self.root = Path(root)
        self.sweep_dir = self.root / "sweep"
        self.ground_dir = self.root / "ground"
        self.runs_dir = self.root / "runs"
        self.errors_dir = self.root / "chi_errors"
        self.analysis_dir = self.root / "analysis"
        self.oracle_dir = self.root / "oracle"

    def sweep(self, chi: int) -> Path:
        return self.sweep_dir / f"chi{chi}.csv"

    @property
    def sweep_summary(self) -> Path:
        return self.sweep_dir / "summary.json"

    def ground(self, chi: int, mu0sq: float, bias: float) -> Path:
        suffix = "_sym" if bias == 0 else ""
        return self.ground_dir / f"chi{chi}_mu{mu0sq:+.4f}{suffix}.npz"

    @staticmethod
    def run_id(tauQ: float, chi: int, mu0sq_final: float) -> str:
        return f"tau{tauQ:g}_chi{chi}_mu{mu0sq_final:+.4f}"

    def run_dir(self, tauQ: float, chi: int, mu0sq_final: float) -> Path:
        return self.runs_dir / self.run_id(tauQ, chi, mu0sq_final)

    def chi_errors(self, tauQ: float, mu0sq_final: float) -> Path:
        return self.errors_dir / f"tau{tauQ:g}_mu{mu0sq_final:+.4f}.csv"

    def manifest(self, command: str) -> Path:
        return self.root / f"campaign_{command}.json"


class GroundRecord(NamedTuple):
    state: CanonicalUMPS
    summary: Dict[str, Any]


def _solve_ground(params: ModelParams, chi: int, options: VumpsOptions, *,
                  seed: Optional[int] = None, noise: float = 0.1) -> GroundStateResult:
    opts = replace(options, seed=seed, noise=noise)
    return find_ground_state(params, chi, opts.tol, opts)


def _solve_sweep_point(params: ModelParams, chi: int, options: VumpsOptions,
                       initial: Optional[CanonicalUMPS], *, seed: Optional[int] = None,
                       noise: float = 0.1) -> GroundStateResult:
    """First attempt warm-starts from initial; reseeded retries start cold"""
    warm = initial if (seed, noise) == (options.seed, options.noise) else None
    opts = replace(options, seed=seed, noise=noise)
    return find_ground_state(params, chi, opts.tol, opts, initial=warm)


def ground_summary(result: GroundStateResult, r_max: int) -> Dict[str, Any]:
    """Scalar observables of a ground state, as stored next to its snapshot"""
    xi = result.correlation_length
    m_S = scalar_mass(result.state)
    d_K = kink_width(m_S) if np.isfinite(m_S) and m_S > 0 else float("nan")
    vacuum = vacuum_correlator(result.state, r_max, k_grid=np.array([0.0]))
    return {
        "energy_density": result.energy_density,
        "vev": result.vev,
        "xi": xi,
        "entropy": result.entropy,
        "m_S": m_S,
        "d_K": d_K,
        "g2k0_vacuum": vacuum.at_zero,
        "gradient_norm": result.gradient_norm,
        "converged": result.converged,
        "iterations": result.iterations,
    }


class Campaign:
    """Shared state of one CLI invocation"""

    def __init__(self, config: CampaignConfig):
        self.config = config
        self.hash = config_hash(config)
        self.paths = CampaignPaths(config.output_dir)
        self.monitor = RunMonitor()
        self.retry = RetryManager({
            'ground_state': {'max_retries': config.vumps.max_retries, 'noise_factor': 1.5},
        })
        self._solve = self.retry.retry_with_reseed('ground_state')(_solve_ground)
        self._solve_point = self.retry.retry_with_reseed('sweep_point')(_solve_sweep_point)
        self.logger = logging.getLogger('Campaign')

        try:
            self.paths.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigurationError(f"Cannot create output directory {self.paths.root}: {e}",
                                     field="output_dir") from e
        if not os.access(self.paths.root, os.W_OK):
            raise ConfigurationError(f"Output directory {self.paths.root} is not writable",
                                     field="output_dir")

    # -- building blocks ---------------------------------------------------

    def vumps_options(self, bias: Optional[float] = None) -> VumpsOptions:
        v = self.config.vumps
        return VumpsOptions(tol=v.tol, maxiter=v.maxiter, env_tol=v.env_tol,
                            eig_tol_factor=v.eig_tol_factor, canonical_tol=v.canonical_tol,
                            bias=v.bias if bias is None else bias, noise=v.noise, seed=v.seed)

    def evolver_config(self) -> EvolverConfig:
        return EvolverConfig(**self.config.evolver.model_dump())

    def schedule(self, tauQ: float, mu0sq_final: float) -> QuenchSchedule:
        return QuenchSchedule(self.config.model.mu0sq_initial, mu0sq_final, tauQ,
                              self.config.campaign.t_relax)

    def model_params(self, mu0sq: float) -> ModelParams:
        return ModelParams(self.config.model.lambda0, float(mu0sq), self.config.model.d)

    def sweep_point(self, params: ModelParams, chi: int, options: VumpsOptions,
                    initial: Optional[CanonicalUMPS]) -> GroundStateResult:
        return self._solve_point(params, chi, options, initial, seed=options.seed, noise=options.noise)

    @property
    def chi_max(self) -> int:
        return max(self.config.campaign.chi)

    def ground_state(self, mu0sq: float, chi: int, bias: Optional[float] = None) -> GroundRecord:
        """Load the cached ground state or compute and cache it"""
        bias = self.config.vumps.bias if bias is None else float(bias)
        path = self.paths.ground(chi, mu0sq, bias)
        key = ground_hash(self.config, mu0sq, chi, bias)
        if path.exists():
            try:
                state, metadata = load_snapshot(path)
                if metadata.get("ground_hash") == key:
                    self.logger.debug(f"Using cached ground state {path.name}")
                    return GroundRecord(state, metadata["summary"])
                self.logger.info(f"Cached ground state {path.name} belongs to other parameters; recomputing")
            except (OSError, ValueError, KeyError, PhiFourError) as e:
                self.logger.warning(f"Unreadable ground-state cache {path}: {e}")

        options = self.vumps_options(bias)
        result = self._solve(self.model_params(mu0sq), chi, options, seed=options.seed, noise=options.noise)
        summary = {"mu0sq": float(mu0sq), "chi": int(chi), "bias": bias,
                   **ground_summary(result, self.config.evolver.r_max)}
        save_snapshot(path, result.state, {"ground_hash": key, "config_hash": self.hash, "summary": summary})
        write_json(path.with_suffix(".json"), summary, config_hash=self.hash)
        self.logger.info(f"Ground state mu0sq={mu0sq:+.4f} chi={chi}: e={result.energy_density:.10f}, "
                         f"vev={result.vev:.6f}, xi={summary['xi']:.4g}")
        return GroundRecord(result.state, summary)

    def config_data(self) -> Dict[str, Any]:
        return self.config.model_dump(mode="json")

    def run_jobs(self, fn: Callable[..., Dict[str, Any]], jobs: Sequence[Tuple], desc: str) -> List[Dict[str, Any]]:
        """
        Run fn(config_data, *job) for every job; workers = 1 runs inline.

        Outcomes are returned in job order. After a stop request no new job
        is started.
        """
        data = self.config_data()
        outcomes: Dict[int, Dict[str, Any]] = {}
        shutdown = GracefulShutdown()
        try:
            if self.config.workers == 1:
                for i, job in enumerate(tqdm(jobs, desc=desc, disable=len(jobs) < 2)):
                    if shutdown.should_stop():
                        break
                    outcomes[i] = fn(data, *job, shutdown=shutdown)
            else:
                with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
                    futures = {pool.submit(fn, data, *job): i for i, job in enumerate(jobs)}
                    shutdown.register_shutdown_handler(lambda: [f.cancel() for f in futures])
                    for future in tqdm(as_completed(futures), total=len(futures), desc=desc):
                        if future.cancelled():
                            continue
                        outcomes[futures[future]] = future.result()
        finally:
            shutdown.restore()

        for i, job in enumerate(jobs):
            outcome = outcomes.get(i)
            if outcome is None:
                self.monitor.finish_run(f"{desc}:{job}", "interrupted", 0.0)
                continue
            self.monitor.finish_run(outcome["run_id"], outcome["status"], outcome.get("wall_clock"),
                                    outcome.get("peak_rss_mb"))
        return [outcomes[i] for i in sorted(outcomes)]

    def write_manifest(self, command: str, **extra) -> Path:
        payload = {
            "command": command,
            "software_version": __version__,
            "config": self.config_data(),
            **self.monitor.get_status(),
            **extra,
        }
        return write_json(self.paths.manifest(command), payload, config_hash=self.hash)

    # -- quench runs -------------------------------------------------------

    def run_quench(self, tauQ: float, chi: int, mu0sq_final: float,
                   shutdown: Optional[GracefulShutdown] = None) -> Dict[str, Any]:
        """One TDVP run; resumable from its checkpoint when config.resume is set"""
        run_id = self.paths.run_id(tauQ, chi, mu0sq_final)
        run_dir = self.paths.run_dir(tauQ, chi, mu0sq_final)
        manifest_path = run_dir / "manifest.json"
        rhash = run_hash(self.config, tauQ, chi, mu0sq_final)
        checkpoints = CheckpointManager(run_dir / "checkpoint.npz")
        writer = SeriesWriter(run_dir, self.hash, {"run_hash": rhash[:16], "tauQ": tauQ, "chi": chi,
                                                   "mu0sq_final": mu0sq_final,
                                                   "step": self.config.evolver.step})
        shutdown = shutdown or GracefulShutdown(install=False)

        manifest = RunManifest.load(manifest_path) if manifest_path.exists() else None
        if manifest is not None and manifest.run_hash != rhash and self.config.resume:
            raise MixedConfigError(f"run {run_id} was produced with other parameters",
                                   run_id=run_id, expected=rhash, found=manifest.run_hash)

        state, start_step = None, 0
        if self.config.resume and manifest is not None:
            if manifest.status == "complete":
                self.logger.info(f"Run {run_id} already complete; skipping")
                return {"run_id": run_id, "status": "complete", "wall_clock": manifest.wall_clock,
                        "peak_rss_mb": manifest.peak_rss_mb, "error": None, "skipped": True}
            loaded = checkpoints.load()
            if loaded is not None and loaded[2].get("run_hash") == rhash:
                state, start_step, _ = loaded
                writer.truncate_after(start_step)
                manifest.log_event("resumed", step=start_step)

        if state is None:
            for stale in (writer.scalars_path, writer.g2r_path, checkpoints.path, checkpoints.backup):
                stale.unlink(missing_ok=True)
            manifest = RunManifest(run_id=run_id, tauQ=float(tauQ), chi=int(chi),
                                   mu0sq_final=float(mu0sq_final), run_hash=rhash,
                                   config_hash=self.hash, software_version=__version__)
            manifest.log_event("started")

        manifest.status = "running"
        manifest.snapshots = writer.paths
        manifest.checkpoint = str(checkpoints.path)
        manifest.error = None
        run_dir.mkdir(parents=True, exist_ok=True)
        manifest.save(manifest_path)
        self.monitor.start_run(run_id)

        def checkpoint(current: CanonicalUMPS, step: int):
            checkpoints.save(current, step, {"run_hash": rhash, "config_hash": self.hash})
            manifest.step = step
            manifest.save(manifest_path)

        started = time.time()
        error = None
        try:
            if state is None:
                state = self.ground_state(self.config.model.mu0sq_initial, chi, bias=0.0).state
            hamiltonian = TimeDependentHamiltonian(self.config.model.lambda0, self.config.model.d,
                                                   self.schedule(tauQ, mu0sq_final))
            evolver = TdvpEvolver(hamiltonian, self.evolver_config())
            trajectory = evolver.evolve(state, observers=[writer], checkpoint=checkpoint,
                                        should_stop=shutdown.should_stop, start_step=start_step,
                                        show_progress=self.config.workers == 1)
            if trajectory.completed:
                checkpoint(trajectory.state, trajectory.step)
            status = "complete" if trajectory.completed else "interrupted"
            manifest.step = trajectory.step
        except PhiFourError as e:
            status, error = "failed", e.to_dict()
            self.monitor.record_error(run_id, e, {"tauQ": tauQ, "chi": chi, "mu0sq_final": mu0sq_final})
            self.logger.error(f"Run {run_id} failed: {e}")

        wall_clock = time.time() - started
        self.monitor.finish_run(run_id, status, wall_clock)
        peak = self.monitor.runs[run_id]['peak_rss_mb']
        manifest.status = status
        manifest.error = error
        manifest.wall_clock += wall_clock
        manifest.peak_rss_mb = max(manifest.peak_rss_mb, peak)
        manifest.log_event(status, step=manifest.step)
        manifest.save(manifest_path)
        return {"run_id": run_id, "status": status, "wall_clock": wall_clock, "peak_rss_mb": peak,
                "error": error}

    def chi_error_table(self, tauQ: float, mu0sq_final: float) -> Optional[pd.DataFrame]:
        """g2k0 at chi_max with its per-time chi-difference error, or None if a run is missing"""
        values, times = {}, None
        for chi in self.config.campaign.chi:
            scalars_path = self.paths.run_dir(tauQ, chi, mu0sq_final) / "scalars.csv"
            if not scalars_path.exists():
                return None
            scalars, _ = read_csv(scalars_path)
            scalars = scalars.sort_values("time")
            values[chi] = scalars["g2k0"].to_numpy()
            if chi == self.chi_max:
                times = scalars["time"].to_numpy()
        error = chi_error_estimate(values)
        n = len(error)
        return pd.DataFrame({"time": times[:n], "g2k0": values[self.chi_max][:n], "chi_error": error})

    # -- analysis helpers --------------------------------------------------

    def collect_runs(self, force: bool = False) -> Tuple[Dict[Tuple[float, int, float], Path], List[str]]:
        """Completed run directories keyed by (tauQ, chi, mu0sq_final), plus the problems found"""
        found, problems, mismatched = {}, [], []
        for tauQ in self.config.campaign.tauQ:
            for chi in self.config.campaign.chi:
                for mu in self.config.campaign.mu0sq_final:
                    run_dir = self.paths.run_dir(tauQ, chi, mu)
                    manifest_path = run_dir / "manifest.json"
                    if not manifest_path.exists():
                        problems.append(f"missing run {run_dir.name}")
                        continue
                    manifest = RunManifest.load(manifest_path)
                    if manifest.run_hash != run_hash(self.config, tauQ, chi, mu):
                        mismatched.append(run_dir.name)
                        if not force:
                            continue
                    if manifest.status != "complete":
                        problems.append(f"run {run_dir.name} is {manifest.status}")
                        continue
                    found[(tauQ, chi, mu)] = run_dir
        if mismatched and not force:
            raise MixedConfigError(f"{len(mismatched)} runs were produced with other parameters; "
                                   f"rerun them or pass --force", runs=mismatched)
        if mismatched:
            problems.extend(f"run {name} has a different run hash (forced)" for name in mismatched)
        return found, problems

    def sweep_frame(self, chi: int) -> Optional[pd.DataFrame]:
        path = self.paths.sweep(chi)
        if not path.exists():
            return None
        frame, _ = read_csv(path)
        frame = frame[frame["converged"].astype(bool) & np.isfinite(frame["xi"])]
        return frame.sort_values("mu0sq")


# ---------------------------------------------------------------------------
# Picklable jobs
# ---------------------------------------------------------------------------

def run_sweep_job(config_data: Dict[str, Any], chi: int,
                  shutdown: Optional[GracefulShutdown] = None) -> Dict[str, Any]:
    """Warm-started equilibrium scan at one bond dimension"""
    campaign = Campaign(CampaignConfig.model_validate(config_data))
    cfg = campaign.config
    grid = np.linspace(cfg.sweep.mu0sq_min, cfg.sweep.mu0sq_max, cfg.sweep.points)
    started = time.time()
    points = sweep_mass(cfg.model.lambda0, grid, cfg.model.d, chi, campaign.vumps_options(),
                        warm_start=cfg.sweep.warm_start, solver=campaign.sweep_point)
    rows = []
    for point in points:
        row = {"chi": chi, "mu0sq": point.mu0sq}
        if point.result is None:
            row.update({"energy_density": np.nan, "vev": np.nan, "xi": np.nan, "entropy": np.nan,
                        "m_S": np.nan, "d_K": np.nan, "g2k0_vacuum": np.nan, "gradient_norm": np.nan,
                        "converged": False, "iterations": 0, "error": point.error["error_type"]})
        else:
            row.update({**ground_summary(point.result, cfg.evolver.r_max), "error": ""})
        rows.append(row)
    failed = sum(point.result is None for point in points)
    status = "complete" if failed == 0 else ("failed" if failed == len(points) else "partial")
    return {"run_id": f"sweep_chi{chi}", "status": status, "wall_clock": time.time() - started,
            "peak_rss_mb": campaign.monitor.get_status()['peak_rss_mb'], "rows": rows,
            "chi": chi, "failed_points": failed}


def run_quench_job(config_data: Dict[str, Any], tauQ: float, chi: int, mu0sq_final: float,
                   shutdown: Optional[GracefulShutdown] = None) -> Dict[str, Any]:
    own = shutdown is None
    shutdown = shutdown or GracefulShutdown()
    try:
        campaign = Campaign(CampaignConfig.model_validate(config_data))
        return campaign.run_quench(tauQ, chi, mu0sq_final, shutdown)
    except PhiFourError as e:
        logger.error(f"Run tauQ={tauQ:g} chi={chi} mu0sq_final={mu0sq_final:+.4f} refused: {e}")
        return {"run_id": CampaignPaths.run_id(tauQ, chi, mu0sq_final), "status": "failed",
                "wall_clock": 0.0, "peak_rss_mb": None, "error": e.to_dict()}
    finally:
        if own:
            shutdown.restore()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_sweep(config: CampaignConfig) -> int:
    campaign = Campaign(config)
    outcomes = campaign.run_jobs(run_sweep_job, [(chi,) for chi in config.campaign.chi], "sweep")
    summary = {}
    meta = {"tol": config.vumps.tol, "env_tol": config.vumps.env_tol, "d": config.model.d,
            "lambda0": config.model.lambda0, "bias": config.vumps.bias}
    for outcome in outcomes:
        frame = pd.DataFrame(outcome["rows"])
        write_csv(campaign.paths.sweep(outcome["chi"]), frame, campaign.hash, meta)
        usable = frame[frame["converged"].astype(bool) & np.isfinite(frame["xi"])]
        entry = {"failed_points": outcome["failed_points"], "points": len(frame)}
        try:
            entry["m_C2"] = estimate_critical_mass(usable["mu0sq"], usable["xi"])
        except ValueError as e:
            entry["m_C2"] = None
            entry["problem"] = str(e)
        summary[str(outcome["chi"])] = entry
        logger.info(f"Sweep chi={outcome['chi']}: m_C^2 estimate {entry['m_C2']}")
    write_json(campaign.paths.sweep_summary, {"chi": summary}, config_hash=campaign.hash)
    campaign.write_manifest("sweep")
    return campaign.monitor.exit_code()


def cmd_ground(config: CampaignConfig, mu0sq: Optional[float] = None, chi: Optional[int] = None,
               bias: Optional[float] = None) -> int:
    campaign = Campaign(config)
    mu0sq = config.model.mu0sq_initial if mu0sq is None else mu0sq
    summaries = []
    for c in ([chi] if chi is not None else config.campaign.chi):
        run_id = f"ground_chi{c}_mu{mu0sq:+.4f}"
        campaign.monitor.start_run(run_id)
        try:
            record = campaign.ground_state(mu0sq, c, bias)
            summaries.append(record.summary)
            campaign.monitor.finish_run(run_id, "complete")
        except PhiFourError as e:
            logger.error(f"Ground state {run_id} failed: {e}")
            campaign.monitor.record_error(run_id, e)
            campaign.monitor.finish_run(run_id, "failed")
    campaign.write_manifest("ground", summaries=summaries)
    return campaign.monitor.exit_code()


def cmd_quench(config: CampaignConfig) -> int:
    campaign = Campaign(config)
    for chi in config.campaign.chi:
        try:
            campaign.ground_state(config.model.mu0sq_initial, chi, bias=0.0)
        except PhiFourError as e:
            logger.error(f"Initial ground state at chi={chi} failed: {e}")
            campaign.monitor.record_error(f"ground_chi{chi}", e)
            campaign.write_manifest("quench")
            return EXIT_FATAL

    jobs = [(tauQ, chi, mu) for tauQ in config.campaign.tauQ
            for chi in config.campaign.chi for mu in config.campaign.mu0sq_final]
    outcomes = campaign.run_jobs(run_quench_job, jobs, "quench")

    if len(config.campaign.chi) > 1:
        for tauQ in config.campaign.tauQ:
            for mu in config.campaign.mu0sq_final:
                table = campaign.chi_error_table(tauQ, mu)
                if table is not None:
                    write_csv(campaign.paths.chi_errors(tauQ, mu), table, campaign.hash,
                              {"chi": ",".join(map(str, config.campaign.chi))})
    campaign.write_manifest("quench", runs=outcomes)
    return campaign.monitor.exit_code()


def _power_law_report(fit) -> Dict[str, Any]:
    report = fit.to_dict()
    report["classification"] = classify_exponent(fit.params["exponent"])
    return report


def cmd_analyze(config: CampaignConfig, force: bool = False) -> int:
    """
    Time averages, defect-density table, freeze-out points, power-law fits,
    collapse and ansatz fits; every table is written under analysis/.
    """
    campaign = Campaign(config)
    out = campaign.paths.analysis_dir
    runs, problems = campaign.collect_runs(force)
    if not runs:
        logger.error("No completed runs to analyze: " + "; ".join(problems))
        campaign.write_manifest("analyze", problems=problems)
        return EXIT_FATAL

    k_grid = default_k_grid(config.analysis.k_points)
    r_max = config.evolver.r_max
    chi_max = max(chi for _, chi, _ in runs)
    fits: Dict[str, Any] = {}

    # Time-averaged correlators against the vacuum at mu0sq_final
    averaged, vacua, rows = {}, {}, []
    for (tauQ, chi, mu), run_dir in sorted(runs.items()):
        schedule = campaign.schedule(tauQ, mu)
        try:
            series = [momentum_transform(r.g2_r, k_grid, r.time) for r in load_series(run_dir)]
            avg = time_average(series, schedule.t_F, config.t_R)
            if (chi, mu) not in vacua:
                ground = campaign.ground_state(mu, chi)
                vacua[(chi, mu)] = (vacuum_correlator(ground.state, r_max, k_grid), ground.summary)
        except (PhiFourError, ValueError, OSError) as e:
            problems.append(f"{run_dir.name}: {e}")
            continue
        averaged[(tauQ, chi, mu)] = avg
        vac, summary = vacua[(chi, mu)]
        v = abs(summary["vev"])
        row = {"tauQ": tauQ, "chi": chi, "mu0sq_final": mu, "g2k0_bar": avg.at_zero,
               "g2k0_vacuum": vac.at_zero, "delta_g2k0": avg.at_zero - vac.at_zero, "v": v,
               "n_est": np.nan, "n_kink": np.nan, "m_S": summary["m_S"], "d_K": summary["d_K"],
               "excitation_cutoff": excitation_at_cutoff(avg, vac)}
        try:
            row["n_est"] = estimate_defect_density(avg.at_zero, vac.at_zero, v)
            row["n_kink"] = ansatz_density_scale(avg.at_zero, vac.at_zero, v)
        except (NegativeDefectSignalError, ValueError) as e:
            problems.append(f"{run_dir.name}: {e}")
        rows.append(row)

    table = pd.DataFrame(rows)
    if table.empty:
        campaign.write_manifest("analyze", problems=problems)
        return EXIT_FATAL

    # chi-difference error on the k = 0 excess
    table["delta_error"] = 0.0
    for (tauQ, mu), grp in table.groupby(["tauQ", "mu0sq_final"]):
        by_chi = {int(r.chi): [r.delta_g2k0] for r in grp.itertuples()}
        table.loc[grp.index[(grp["chi"] == grp["chi"].max()).to_numpy()], "delta_error"] = chi_error_estimate(by_chi)[0]

    best = table[table["chi"] == chi_max].sort_values(["mu0sq_final", "tauQ"])

    # Defect-signal power laws per mu0sq_final, compared with n_est
    fits["defect_signal"] = {}
    best = best.assign(n_fit=np.nan)
    for mu, grp in best.groupby("mu0sq_final"):
        grp = grp[grp["delta_g2k0"] > 0]
        if len(grp) < 2:
            problems.append(f"defect-signal fit at mu0sq_final={mu:+.4f} needs two positive points")
            continue
        sigmas = grp["delta_error"].to_numpy()
        fit = fit_power_law(grp["tauQ"], grp["delta_g2k0"], sigmas if np.any(sigmas > 0) else None)
        n_fit = defect_density_from_fit(fit, grp["tauQ"].to_numpy(), float(grp["v"].iloc[0]))
        best.loc[grp.index, "n_fit"] = n_fit
        fits["defect_signal"][f"{mu:+.4f}"] = {
            **fit.to_dict(),
            "max_relative_deviation": float(np.max(np.abs(n_fit / grp["n_est"].to_numpy() - 1.0))),
        }
    table = table.merge(best[["tauQ", "chi", "mu0sq_final", "n_fit"]], how="left",
                        on=["tauQ", "chi", "mu0sq_final"])
    write_csv(out / "defect_density.csv", table, campaign.hash,
              {"t_R": config.t_R, "k_points": config.analysis.k_points})

    # Freeze-out points from the ramp part of the lowest-mu0sq_final runs
    sweep = campaign.sweep_frame(chi_max)
    eps_rows = []
    if sweep is None or len(sweep) < 2:
        problems.append(f"no usable sweep at chi={chi_max}; run the sweep command first")
    else:
        m_C2 = estimate_critical_mass(sweep["mu0sq"], sweep["xi"])
        fits["m_C2"] = m_C2
        mu_low = min(mu for (_, chi, mu) in runs if chi == chi_max)
        for tauQ in config.campaign.tauQ:
            run_dir = runs.get((tauQ, chi_max, mu_low))
            if run_dir is None:
                continue
            scalars, _ = read_csv(run_dir / "scalars.csv")
            scalars = scalars.sort_values("time")
            ramp = scalars[(scalars["time"] <= campaign.schedule(tauQ, mu_low).t_F)
                           & (scalars["mu0sq"] >= sweep["mu0sq"].min())
                           & (scalars["mu0sq"] <= sweep["mu0sq"].max())]
            ratio = ramp["g2k0"] / np.interp(ramp["mu0sq"], sweep["mu0sq"], sweep["g2k0_vacuum"])
            try:
                eps = extract_epsilon_hat(ramp["mu0sq"], ratio, m_C2, config.analysis.threshold)
            except (PhiFourError, ValueError) as e:
                problems.append(f"epsilon_hat at tauQ={tauQ:g}: {e}")
                continue
            eps_rows.append({"tauQ": tauQ, "chi": chi_max, "mu0sq_final": mu_low,
                             "mu_hat_sq": eps + m_C2, "epsilon_hat": eps, "m_C2": m_C2})
    eps_table = pd.DataFrame(eps_rows, columns=["tauQ", "chi", "mu0sq_final", "mu_hat_sq",
                                                "epsilon_hat", "m_C2"])
    write_csv(out / "epsilon_hat.csv", eps_table, campaign.hash, {"threshold": config.analysis.threshold})
    nonzero = eps_table[eps_table["epsilon_hat"] != 0]
    if len(nonzero) >= 2:
        fits["epsilon_hat"] = _power_law_report(fit_power_law(nonzero["tauQ"], nonzero["epsilon_hat"].abs()))
    else:
        problems.append("epsilon_hat power law needs at least two freeze-out points")

    # Collapse and the G_corr shape at the reference mu0sq_final
    mu_ref = min(config.campaign.mu0sq_final, key=lambda m: abs(m - config.analysis.reference_mu0sq_final))
    reference = best[(best["mu0sq_final"] == mu_ref) & np.isfinite(best["n_kink"]) & np.isfinite(best["d_K"])]
    curves, kink_curves, collapse_rows = [], [], []
    for r in reference.itertuples():
        avg = averaged[(r.tauQ, chi_max, mu_ref)]
        vac, _ = vacua[(chi_max, mu_ref)]
        y = k_grid / r.n_kink
        uni = g_uni(avg.g2_k, vac.g2_k)
        uni_kink = divide_by_kink(k_grid, uni, r.d_K)
        curves.append((y, uni))
        kink_curves.append((y, uni_kink))
        collapse_rows.append(pd.DataFrame({"tauQ": r.tauQ, "k": k_grid, "y": y, "g_uni": uni,
                                           "g_uni_kink": uni_kink}))
    if collapse_rows:
        write_csv(out / "collapse.csv", pd.concat(collapse_rows, ignore_index=True), campaign.hash,
                  {"mu0sq_final": mu_ref, "chi": chi_max})

    collapse = {"mu0sq_final": mu_ref, "window": list(config.analysis.collapse_window),
                "kink_window": list(config.analysis.kink_window), "probe": config.analysis.kink_probe}
    probe = (config.analysis.kink_probe, config.analysis.kink_probe)
    metrics = {
        "spread": (curves, config.analysis.collapse_window),
        "spread_kink": (kink_curves, config.analysis.kink_window),
        "spread_at_probe": (curves, probe),
        "spread_kink_at_probe": (kink_curves, probe),
    }
    for name, (source, window) in metrics.items():
        try:
            collapse[name] = collapse_metric(source, window)
        except ValueError as e:
            problems.append(f"collapse {name}: {e}")
    fits["collapse"] = collapse

    corr = REFERENCE_CORR_PARAMS
    for name, source, window in (("g_corr", curves, config.analysis.collapse_window),
                                 ("g_corr_kink", kink_curves, config.analysis.kink_window)):
        if not source:
            continue
        try:
            fit = fit_g_corr(np.concatenate([c[0] for c in source]),
                             np.concatenate([c[1] for c in source]), window=window)
        except (PhiFourError, ValueError) as e:
            problems.append(f"{name}: {e}")
            continue
        fits[name] = fit.to_dict()
        if name == "g_corr" and fit.converged:
            corr = tuple(fit.params[p] for p in ("alpha1", "alpha2", "beta1", "beta2"))

    # Matter fit per tauQ and the averaged spectra
    fits["ansatz"] = {}
    for (tauQ, chi, mu), avg in sorted(averaged.items()):
        if chi != chi_max:
            continue
        vac, _ = vacua[(chi, mu)]
        frame = pd.DataFrame({"k": k_grid, "G2k_bar": avg.g2_k, "G2k_vacuum": vac.g2_k})
        row = reference[reference["tauQ"] == tauQ] if mu == mu_ref else reference.iloc[0:0]
        if not row.empty:
            n_kink, v, d_K = (float(row[c].iloc[0]) for c in ("n_kink", "v", "d_K"))
            by_chi = {c: averaged[(tauQ, c, mu)].g2_k for c in config.campaign.chi
                      if (tauQ, c, mu) in averaged}
            sigmas = chi_error_estimate(by_chi)
            try:
                fit = fit_defect_ansatz(k_grid, avg.g2_k, vac.g2_k, n_kink, v, d_K,
                                        sigmas=sigmas if np.any(sigmas > 0) else None, corr=corr)
                params = DefectAnsatzParams(n=n_kink, v=v, d_K=d_K, alpha1=corr[0], alpha2=corr[1],
                                            beta1=corr[2], beta2=corr[3],
                                            beta_temp=fit.params["beta_temp"], mu_fit=fit.params["mu_fit"])
                frame["G2k_fit"] = defect_ansatz(k_grid, params, vac.g2_k)
                fits["ansatz"][f"{tauQ:g}"] = fit.to_dict()
            except (PhiFourError, ValueError) as e:
                problems.append(f"ansatz fit at tauQ={tauQ:g}: {e}")
        write_csv(out / f"averaged_tau{tauQ:g}_mu{mu:+.4f}.csv", frame, campaign.hash,
                  {"chi": chi, "t_R": config.t_R})

    series = []
    for tauQ in config.campaign.tauQ:
        run_dir = runs.get((tauQ, chi_max, mu_ref))
        if run_dir is not None:
            scalars, _ = read_csv(run_dir / "scalars.csv")
            series.append(scalars[["time", "g2k0"]].assign(tauQ=tauQ))
    if series:
        write_csv(out / "g2k0_series.csv", pd.concat(series, ignore_index=True), campaign.hash,
                  {"mu0sq_final": mu_ref, "chi": chi_max})

    fits["problems"] = problems
    write_json(out / "fits.json", {str(k): v for k, v in fits.items()}, config_hash=campaign.hash)
    if config.analysis.plots:
        render_analysis(out)

    for problem in problems:
        logger.warning(problem)
    campaign.write_manifest("analyze", problems=problems, runs_analyzed=len(averaged))
    return EXIT_PARTIAL if problems else EXIT_OK


def cmd_oracle(config: CampaignConfig) -> int:
    """Free-field and exact-diagonalization reference tables"""
    campaign = Campaign(config)
    o = config.oracle
    out = campaign.paths.oracle_dir
    report: Dict[str, Any] = {}
    problems: List[str] = []

    def attempt(name: str, func: Callable[[], None]):
        campaign.monitor.start_run(name)
        try:
            func()
            campaign.monitor.finish_run(name, "complete")
        except PhiFourError as e:
            problems.append(f"{name}: {e}")
            campaign.monitor.record_error(name, e)
            campaign.monitor.finish_run(name, "failed")

    k = np.linspace(0.0, np.pi, o.k_points)
    schedule = QuenchSchedule(o.musq_initial, o.musq_final, o.tauQ, o.t_after)
    times = np.arange(0.0, schedule.end_time + 1e-9, 1.0)

    def free_ground():
        write_csv(out / "free_ground.csv",
                  pd.DataFrame({"k": k, "omega": np.sqrt(omega_squared(k, o.musq_initial)),
                                "G2k": free_ground_g2k(k, o.musq_initial)}),
                  campaign.hash, {"method": "closed-form", "musq": o.musq_initial})
        r = np.arange(o.r_max + 1)
        write_csv(out / "free_ground_r.csv",
                  pd.DataFrame({"r": r, "G2r": free_ground_g2r(r, o.musq_initial)}),
                  campaign.hash, {"method": "quadrature", "epsrel": 1e-10, "musq": o.musq_initial})
        report["free_energy_density"] = free_energy_density(o.musq_initial)
        report["lattice_mass"] = lattice_mass(o.musq_initial)

    def free_quenches():
        sudden = [pd.DataFrame({"time": t, "k": k, "G2k": free_quench_g2k(k, o.musq_initial, o.musq_final, t)})
                  for t in times]
        write_csv(out / "free_sudden.csv", pd.concat(sudden, ignore_index=True), campaign.hash,
                  {"method": "closed-form", "musq_initial": o.musq_initial, "musq_final": o.musq_final})
        ramp, deviation = free_ramp_g2k(k, schedule, times, return_wronskian=True)
        frame = pd.DataFrame({"time": np.repeat(times, len(k)), "k": np.tile(k, len(times)),
                              "G2k": ramp.ravel()})
        write_csv(out / "free_ramp.csv", frame, campaign.hash,
                  {"method": "mode-ode", "rtol": 1e-12, "atol": 1e-14, "wronskian_deviation": f"{deviation:.3e}",
                   "tauQ": o.tauQ, "t_F": schedule.t_F})
        report["wronskian_deviation"] = deviation

    def small_chain():
        ed = ExactDiagonalization(o.ed_L, o.ed_d, o.ed_lambda0)
        ground = ed.ground_state(o.ed_mu0sq_initial)
        write_csv(out / "ed_ground.csv",
                  pd.DataFrame({"r": np.arange(o.ed_L), "G2r": ground.values["g2_r"]}),
                  campaign.hash, {"method": "exact-diag", "L": o.ed_L, "d": o.ed_d})
        _, vecs = ed.levels(o.ed_mu0sq_initial, 1)
        ed_times = np.linspace(0.0, o.ed_t_max, o.ed_samples)
        g2 = ed.evolve(vecs[:, 0], lambda t: o.ed_mu0sq_final, ed_times)
        frame = pd.DataFrame({"time": np.repeat(ed_times, o.ed_L), "r": np.tile(np.arange(o.ed_L), len(ed_times)),
                              "G2r": g2.ravel()})
        write_csv(out / "ed_quench.csv", frame, campaign.hash,
                  {"method": "exact-diag", "rtol": 1e-10, "atol": 1e-12, "L": o.ed_L, "d": o.ed_d,
                   "mu0sq_initial": o.ed_mu0sq_initial, "mu0sq_final": o.ed_mu0sq_final})
        report["ed"] = {"energies": ground.values["energies"], **ground.metadata}

    attempt("free_ground", free_ground)
    attempt("free_quench", free_quenches)
    attempt("exact_diag", small_chain)

    write_json(out / "oracle.json", {**report, "problems": problems}, config_hash=campaign.hash)
    campaign.write_manifest("oracle", problems=problems)
    return campaign.monitor.exit_code()


__all__ = [
    "EXIT_OK",
    "EXIT_FATAL",
    "EXIT_PARTIAL",
    "CampaignPaths",
    "GroundRecord",
    "Campaign",
    "ground_summary",
    "run_sweep_job",
    "run_quench_job",
    "cmd_sweep",
    "cmd_ground",
    "cmd_quench",
    "cmd_analyze",
    "cmd_oracle",
]

"""
Operational Resilience Module
Provides logging setup, retry-with-reseed, run monitoring, checkpointing and
graceful shutdown for long simulation campaigns
"""

import logging
import os
import shutil
import signal
import threading
import time
import traceback
from collections import deque
from datetime import datetime
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import psutil
from pythonjsonlogger import jsonlogger

from solvers.errors import PhiFourError
from solvers.umps_state import CanonicalUMPS, load_snapshot, save_snapshot

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
SEED_STRIDE = 7919


def setup_logging(level: str = "INFO", log_file: Optional[str] = None,
                  error_file: Optional[str] = None, json_file: Optional[str] = None) -> logging.Logger:
    """Configure the root logger once: console, optional run log, error log and JSON lines"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))

    formatter = logging.Formatter(LOG_FORMAT)
    console = logging.StreamHandler()
    console.setFormatter(formatter)
    root.addHandler(console)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    # Separate error log
    if error_file:
        Path(error_file).parent.mkdir(parents=True, exist_ok=True)
        error_handler = logging.FileHandler(error_file)
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s - %(pathname)s:%(lineno)d'
        ))
        root.addHandler(error_handler)

    if json_file:
        Path(json_file).parent.mkdir(parents=True, exist_ok=True)
        json_handler = logging.FileHandler(json_file)
        json_handler.setFormatter(jsonlogger.JsonFormatter('%(asctime)s %(name)s %(levelname)s %(message)s'))
        root.addHandler(json_handler)

    # scipy/matplotlib chatter
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    return root


class RetryManager:
    """Re-runs stochastic solver stages with a perturbed seed"""

    def __init__(self, retry_configs: Optional[Dict[str, Dict[str, Any]]] = None):
        self.retry_configs = {
            'ground_state': {'max_retries': 2, 'noise_factor': 1.5},
            'sweep_point': {'max_retries': 1, 'noise_factor': 2.0},
        }
        if retry_configs:
            self.retry_configs.update(retry_configs)

    def retry_with_reseed(self, operation_type: str = 'ground_state'):
        """
        Decorator for functions taking `seed` and `noise` keyword arguments.

        After a PhiFourError the call is repeated with seed + k*SEED_STRIDE and
        the noise scaled by noise_factor**k; the last error is re-raised.
        """
        def decorator(func):
            @wraps(func)
            def wrapper(*args, seed: Optional[int] = None, noise: float = 0.1, **kwargs):
                config = self.retry_configs.get(operation_type, self.retry_configs['ground_state'])

                last_exception = None
                for attempt in range(config['max_retries'] + 1):
                    attempt_seed = None if seed is None else seed + attempt * SEED_STRIDE
                    attempt_noise = noise * config['noise_factor'] ** attempt
                    try:
                        return func(*args, seed=attempt_seed, noise=attempt_noise, **kwargs)
                    except PhiFourError as e:
                        last_exception = e
                        if attempt == config['max_retries']:
                            break
                        logging.warning(
                            f"Attempt {attempt + 1} failed for {func.__name__}: {str(e)}. "
                            f"Retrying with seed={attempt_seed and attempt_seed + SEED_STRIDE}, "
                            f"noise={noise * config['noise_factor'] ** (attempt + 1):.3g}"
                        )

                raise last_exception
            return wrapper
        return decorator


class RunMonitor:
    """Per-run outcome, wall-clock and memory bookkeeping for a campaign"""

    def __init__(self):
        self.runs: Dict[str, Dict[str, Any]] = {}
        self.errors = deque(maxlen=500)
        self.start_time = time.time()
        self.lock = threading.Lock()
        self.process = psutil.Process(os.getpid())
        self.logger = logging.getLogger('RunMonitor')

    def _rss_mb(self) -> float:
        try:
            return self.process.memory_info().rss / 2 ** 20
        except psutil.Error:
            return float('nan')

    def start_run(self, run_id: str):
        with self.lock:
            self.runs[run_id] = {
                'status': 'running',
                'started': time.time(),
                'wall_clock': None,
                'peak_rss_mb': self._rss_mb(),
            }

    def finish_run(self, run_id: str, status: str, wall_clock: Optional[float] = None,
                   peak_rss_mb: Optional[float] = None):
        """status: complete, partial, failed or interrupted"""
        with self.lock:
            run = self.runs.setdefault(run_id, {'started': time.time(), 'peak_rss_mb': 0.0})
            run['status'] = status
            run['wall_clock'] = wall_clock if wall_clock is not None else time.time() - run['started']
            rss = peak_rss_mb if peak_rss_mb is not None else self._rss_mb()
            run['peak_rss_mb'] = max(run.get('peak_rss_mb') or 0.0, rss)
        self.logger.info(f"Run {run_id} {status} after {run['wall_clock']:.1f}s")

    def record_error(self, run_id: str, error: Exception, context: Optional[Dict[str, Any]] = None):
        """Record error for the campaign report"""
        with self.lock:
            self.errors.append({
                'timestamp': datetime.now().isoformat(),
                'run_id': run_id,
                'error_type': type(error).__name__,
                'error_message': str(error),
                'details': error.to_dict() if isinstance(error, PhiFourError) else {},
                'context': context or {},
                'traceback': traceback.format_exc(),
            })

    def get_status(self) -> Dict[str, Any]:
        """Campaign classification: idle, running, complete, partial or failed"""
        with self.lock:
            statuses = [run['status'] for run in self.runs.values()]
            counts = {s: statuses.count(s) for s in set(statuses)}

            if not statuses:
                status = 'idle'
            elif counts.get('running'):
                status = 'running'
            elif counts.get('complete', 0) == len(statuses):
                status = 'complete'
            elif counts.get('complete', 0) == 0 and counts.get('failed', 0) == len(statuses):
                status = 'failed'
            else:
                status = 'partial'

            return {
                'status': status,
                'runs_total': len(statuses),
                'counts': counts,
                'uptime_seconds': time.time() - self.start_time,
                'peak_rss_mb': max((r.get('peak_rss_mb') or 0.0 for r in self.runs.values()), default=0.0),
                'recent_errors': [
                    {k: e[k] for k in ('run_id', 'error_type', 'error_message')} for e in list(self.errors)[-10:]
                ],
                'timestamp': datetime.now().isoformat(),
            }

    def exit_code(self) -> int:
        """0 complete (or nothing to do), 2 partial, 1 everything failed"""
        status = self.get_status()['status']
        return {'idle': 0, 'complete': 0, 'failed': 1}.get(status, 2)


class CheckpointManager:
    """Atomic state checkpoints with a .bak copy of the previous one"""

    def __init__(self, path):
        self.path = Path(path)
        self.backup = self.path.with_name(self.path.name + '.bak')
        self.lock = threading.Lock()
        self.logger = logging.getLogger('CheckpointManager')

    def save(self, state: CanonicalUMPS, step: int, metadata: Optional[Dict[str, Any]] = None):
        with self.lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.path.exists():
                shutil.copy2(self.path, self.backup)
            tmp = self.path.with_name(self.path.stem + '.tmp.npz')
            save_snapshot(tmp, state, {**(metadata or {}), 'step': int(step)})
            os.replace(tmp, self.path)
            self.logger.debug(f"Checkpoint saved to {self.path} at step {step}")

    def load(self) -> Optional[Tuple[CanonicalUMPS, int, Dict[str, Any]]]:
        """(state, step, metadata) from the checkpoint, falling back to the backup"""
        for candidate in (self.path, self.backup):
            if not candidate.exists():
                continue
            try:
                state, metadata = load_snapshot(candidate)
                self.logger.info(f"Loaded checkpoint {candidate} at step {metadata.get('step', 0)}")
                return state, int(metadata.get('step', 0)), metadata
            except Exception as e:
                self.logger.error(f"Failed to load checkpoint {candidate}: {str(e)}")
        return None

    def exists(self) -> bool:
        return self.path.exists() or self.backup.exists()


class GracefulShutdown:
    """Turns SIGINT/SIGTERM into a stop flag polled between integration steps"""

    def __init__(self, install: bool = True):
        self.shutdown_handlers = []
        self.is_shutting_down = False
        self._event = threading.Event()
        self._previous = {}
        self.logger = logging.getLogger('GracefulShutdown')
        if install:
            self.setup_signal_handlers()

    def setup_signal_handlers(self):
        """Setup signal handlers for graceful shutdown"""
        def signal_handler(signum, frame):
            self.logger.info(f"Received signal {signum}, finishing the current step...")
            self.initiate_shutdown()

        try:
            for sig in (signal.SIGINT, signal.SIGTERM):
                self._previous[sig] = signal.signal(sig, signal_handler)
        except ValueError:
            # Not in the main thread
            self.logger.warning("Signal handling not available in this environment")

    def restore(self):
        for sig, handler in self._previous.items():
            try:
                signal.signal(sig, handler)
            except (ValueError, TypeError):
                pass
        self._previous.clear()

    def register_shutdown_handler(self, handler: Callable):
        """Register a function to be called during shutdown"""
        self.shutdown_handlers.append(handler)
        self.logger.debug(f"Registered shutdown handler: {handler.__name__}")

    def should_stop(self) -> bool:
        return self._event.is_set()

    def initiate_shutdown(self):
        """Initiate graceful shutdown process"""
        if self.is_shutting_down:
            return

        self.is_shutting_down = True
        self._event.set()

        for handler in self.shutdown_handlers:
            try:
                handler()
                self.logger.info(f"Executed shutdown handler: {handler.__name__}")
            except Exception as e:
                self.logger.error(f"Error in shutdown handler {handler.__name__}: {str(e)}")


__all__ = [
    "LOG_FORMAT",
    "setup_logging",
    "RetryManager",
    "RunMonitor",
    "CheckpointManager",
    "GracefulShutdown",
]

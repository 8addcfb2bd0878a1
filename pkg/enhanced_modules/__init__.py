"""
Enhanced Modules Package for the phi^4 quench toolkit

This package provides the operational layer around the solvers:
- Logging setup (console, run log, error log, JSON lines)
- Retry with reseeding for stochastic ground-state searches
- Run monitoring and campaign status
- Atomic checkpoints and graceful shutdown

Usage:
    from enhanced_modules.resilience_module import setup_logging, CheckpointManager
"""

__version__ = "1.1.0"
__description__ = "Operational resilience for long-running simulation campaigns"

from .resilience_module import (
    CheckpointManager,
    GracefulShutdown,
    RetryManager,
    RunMonitor,
    setup_logging,
)

__all__ = [
    "CheckpointManager",
    "GracefulShutdown",
    "RetryManager",
    "RunMonitor",
    "setup_logging",
]

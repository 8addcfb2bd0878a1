"""
Harness Package: campaign orchestration, file formats and plots.

Usage:
    from harness.quench_harness import cmd_quench
    from harness.persistence import read_csv
"""

__version__ = "1.0.0"
__description__ = "Sweep, quench, analysis and oracle campaigns"

"""
Analysis Package for quench data

- observables: momentum transform, time averages, vacuum subtraction, defect density
- kzm_analysis: scaling predictions, defect ansatz, power-law and ansatz fits, collapse

Usage:
    from analysis.observables import momentum_transform
    from analysis.kzm_analysis import fit_power_law
"""

__version__ = "1.0.0"
__description__ = "Kibble-Zurek analysis of post-quench correlators"

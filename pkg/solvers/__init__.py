"""
Solvers Package for the lattice phi^4 model

This package contains the uniform-MPS machinery:
- lattice_model: Fock-space operators, Hamiltonian terms, quench schedule
- umps_state: canonical forms, transfer matrices, correlators, snapshots
- vumps_solver: variational ground states and equilibrium sweeps
- tdvp_evolver: tangent-space time evolution with an RKF tableau
- errors: the PhiFourError hierarchy shared by every package

Usage:
    from solvers.vumps_solver import find_ground_state
    from solvers.tdvp_evolver import evolve_quench
"""

__version__ = "1.0.0"
__description__ = "Uniform MPS ground states and time evolution"

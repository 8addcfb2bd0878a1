"""
Reference results independent of the uniform-MPS code: free-field closed
forms, per-mode ODE integration and exact diagonalization of short chains.
"""

__version__ = "1.0.0"

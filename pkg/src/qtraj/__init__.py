"""Quantum repeated-measurement trajectories of a qubit coupled to a
thermal spin chain, with their continuous-time limits.

Modules: ``algebra`` (matrix kernel), ``model`` (Hamiltonians, Gibbs
weight, interaction unitary blocks), ``discrete`` (trajectory Markov
chain for the four measurement setups), ``continuous`` (Lindblad,
diffusive and jump SDE integrators), ``unraveling`` (pure-state
stochastic Schrödinger equations), ``verify`` (generator convergence
and martingale diagnostics), ``cli`` (batch front end).
"""

from .model import (
    ModelParams,
    Observable,
    UnitaryBlocks,
    build_total_hamiltonian,
    build_unitary_blocks,
    diagonal_observable,
    dipole_default,
    gibbs_p,
    symmetric_observable,
)

__all__ = [
    "ModelParams",
    "Observable",
    "UnitaryBlocks",
    "build_total_hamiltonian",
    "build_unitary_blocks",
    "diagonal_observable",
    "dipole_default",
    "gibbs_p",
    "symmetric_observable",
]

__version__ = "0.1.0"

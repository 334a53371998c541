"""Quench dynamics of the 2d transverse-field Ising model on binary tree
tensor networks, with a dense reference engine for small systems."""

__version__ = "0.1.0"

from .lattice import Lattice, SiteMapping, build_mapping, neighbor_pairs
from .model import (PauliTerm, SpinPattern, build_hamiltonian,
                    classical_energy, make_pattern, pattern_from_text)
from .series import SeriesWriter, TimeSeries
from .tdvp import Sweeper, run_quench
from .ttn import (TreeState, TreeTopology, from_product, load_checkpoint,
                  move_center, random_state, save_checkpoint, to_statevector)

__all__ = [
    "Lattice", "SiteMapping", "build_mapping", "neighbor_pairs",
    "PauliTerm", "SpinPattern", "build_hamiltonian", "classical_energy",
    "make_pattern", "pattern_from_text",
    "SeriesWriter", "TimeSeries",
    "Sweeper", "run_quench",
    "TreeState", "TreeTopology", "from_product", "load_checkpoint",
    "move_center", "random_state", "save_checkpoint", "to_statevector",
    "__version__",
]

"""Dynamic iteration with restricted additive Schwarz splitting for linear DAEs."""

from .dae import CombinedSystem, LinearDae, Trajectory, combine, consistent_y0, monolithic_solve
from .partition import AdjacencyGraph, OverlapPartition, grow_overlap, interface_map
from .ras import RasSplitting, build_local, di_solve, di_sweep, interface_iterate
from .aitken import InterfaceOperator, accelerate, analytic_p_two_partitions, numeric_p, spectral_report
from .circuits import assemble, reference_circuit, parse_netlist

__version__ = "0.1.0"

"""Full-order incompressible flow model."""

from .driver import (CycleLog, Snapshot, read_snapshots, run_cycles, snapshot_times,
                     time_one_cycle, write_snapshots)
from .solver import (FlowSolver, FlowState, FvOps, SolverConfig, apply_boundary_conditions,
                     assemble_momentum, bdf2_step, piso_loop, quiescent_state, solve_poisson,
                     solve_pressure_poisson, state_from_arrays)
from .waveform import (BoundarySpec, WaveformBc, channel_boundaries, default_waveform,
                       dirichlet_boundaries, inflow_rate, inlet_velocity, load_waveform_csv,
                       save_waveform_csv, triangle_waveform, waveform_from_spec)
from .wss import compute_wss

"""Particle simulator and experiment harness for aggregation dynamics
with repulsive-attractive radial kernels."""

__version__ = "0.1.0"

from .dynamics import ParticleState, VelocityField, center_of_mass, energy, recenter, velocity
from .diagnostics import DiagnosticsRecord, dm3dt_pairwise, radius, t_factor, third_moment
from .integrators import RK4, EULER_DESCENT, RunOutcome, StepperConfig, run_to_steady, step_euler, step_rk4
from .potentials import (KernelReport, ProbeGrid, RadialKernel, certify,
                         kernel_from_config, make_morse, make_piecewise_log,
                         make_piecewise_loglog)
from .theory import (NeighborhoodPartition, claim_ratio_check, k1_radius,
                     one_third_mass_check, partition, theory_report, with_k1)
from .harness import (ExperimentResult, ExperimentSpec, InitSpec, TrialResult,
                      default_square_side, generate_initial,
                      regress_radius_squared, run_experiment, trial_rng)

__all__ = [
    "__version__",
    "ParticleState", "VelocityField", "velocity", "energy", "center_of_mass", "recenter",
    "DiagnosticsRecord", "radius", "third_moment", "dm3dt_pairwise", "t_factor",
    "StepperConfig", "RunOutcome", "EULER_DESCENT", "RK4",
    "step_euler", "step_rk4", "run_to_steady",
    "RadialKernel", "KernelReport", "ProbeGrid", "certify", "kernel_from_config",
    "make_piecewise_log", "make_piecewise_loglog", "make_morse",
    "NeighborhoodPartition", "partition", "one_third_mass_check",
    "claim_ratio_check", "k1_radius", "with_k1", "theory_report",
    "ExperimentSpec", "ExperimentResult", "InitSpec", "TrialResult",
    "generate_initial", "run_experiment", "regress_radius_squared",
    "default_square_side", "trial_rng",
]

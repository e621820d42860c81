"""Simulation toolkit for a trapped-ion 171Yb+ magnetometer using dressed states
and mixed dynamical decoupling."""

import os

# The bundled TBB is often older than numba expects; the workqueue layer is
# sufficient for the parallel force loop and avoids a warning on import.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from .crystal import (  # noqa: E402
    ConvergenceError,
    IonEnsemble,
    MDParams,
    TrapConfig,
    reference_crystal,
    solve_equilibrium,
)
from .experiment import (  # noqa: E402
    ContrastFit,
    IonSelection,
    PopulationTrace,
    RunSpec,
    SensitivityReport,
    ensemble_average,
    fit_contrast,
    measure_t2,
    phase_scan,
    scan_pi_duration,
    sensitivity,
    simulate_trajectory,
    sweep_t2_grid,
    t2_crossing,
)
from .fieldmap import CoilPair, InhomogeneityMap, coil_pair_field, inhomogeneity_map  # noqa: E402
from .noise import IonDisorder, ShotNoiseSpec  # noqa: E402
from .sequence import ProtocolConfig, ScheduledSequence  # noqa: E402
from .spin import DriveSet, HyperfineLevels  # noqa: E402

__version__ = "0.1.0"

"""End-to-end model runs built on qcore + ontic + chain.

Each submodule drives one experiment family: pointer measurement with a
qubit-register device (``naive``), the same device read through an error
matrix with a large environment (``realistic``), coarse position
measurement (``binned``), a two-wing spin pair with local device couplings
(``epr``), reduced-state typicality sampling (``typicality``), and the
product-approximation test for joint ontic tables (``joint``).
"""

from .binned import BinnedRun, run_binned_position
from .epr import ChshEstimate, EprConfig, EprRun, chsh, chsh_sampled, run_epr
from .joint import JointTable, joint_factorization
from .naive import (
    NaiveModelConfig,
    NaiveRun,
    ProbeReport,
    near_degenerate_probe,
    ramp_schedule,
    run_naive,
)
from .realistic import (
    CollapsedState,
    ErrorMatrix,
    RealisticRun,
    collapse_prune,
    realistic_chain,
    run_realistic,
)
from .typicality import TypicalityConfig, TypicalityReport, run_typicality

__all__ = [
    "BinnedRun",
    "ChshEstimate",
    "CollapsedState",
    "EprConfig",
    "EprRun",
    "ErrorMatrix",
    "JointTable",
    "NaiveModelConfig",
    "NaiveRun",
    "ProbeReport",
    "RealisticRun",
    "TypicalityConfig",
    "TypicalityReport",
    "chsh",
    "chsh_sampled",
    "collapse_prune",
    "joint_factorization",
    "near_degenerate_probe",
    "ramp_schedule",
    "realistic_chain",
    "run_binned_position",
    "run_epr",
    "run_naive",
    "run_typicality",
]

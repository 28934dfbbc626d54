"""Simulation and stability analysis of unstructured P2P file-distribution swarms."""

from p2pswarm.analyze import (
    BranchingMoments,
    StabilityVerdict,
    Verdict,
    branching_moments,
    classify,
    classify_coded,
    delta_S,
    kingman_bound,
    mginfty_bound,
)
from p2pswarm.model import (
    CodedArrival,
    CountState,
    InvalidParams,
    RateTable,
    SwarmParams,
    drift,
    full_mask,
    gamma_rate,
    neighbors,
    pieces_of,
    pieceset,
)
from p2pswarm.simulate import Trajectory, replicate, run, run_watched

__version__ = "0.1.0"

__all__ = [
    "BranchingMoments",
    "CodedArrival",
    "CountState",
    "InvalidParams",
    "RateTable",
    "StabilityVerdict",
    "SwarmParams",
    "Trajectory",
    "Verdict",
    "branching_moments",
    "classify",
    "classify_coded",
    "delta_S",
    "drift",
    "full_mask",
    "gamma_rate",
    "kingman_bound",
    "mginfty_bound",
    "neighbors",
    "pieces_of",
    "pieceset",
    "replicate",
    "run",
    "run_watched",
]

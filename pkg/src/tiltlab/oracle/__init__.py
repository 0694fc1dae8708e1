from .tilt import TiltedGaussian, tilted_gaussian_target
from .chain import ChainStats, chain_stats, conditional_expected_noise
from .grid import GridMDP, SoftSolution, bellman_residual, grid_build, grid_soft_solve, verify_theorems
from .mala import MalaResult, mala_sample

__all__ = [
    "TiltedGaussian", "tilted_gaussian_target",
    "ChainStats", "chain_stats", "conditional_expected_noise",
    "GridMDP", "SoftSolution", "bellman_residual", "grid_build", "grid_soft_solve", "verify_theorems",
    "MalaResult", "mala_sample",
]

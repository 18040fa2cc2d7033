"""Auto-Phi surrogate, RIIU agents and the experiment harness."""

from ._core import (
    Divergence,
    IllConditioned,
    ShapeError,
    auto_phi_cov,
    auto_phi_rel,
    bipartition_mi,
    calibrate,
    default_config,
    grad_auto_phi,
    lipschitz_bound,
    optimal_return,
    oracle_phi,
    repair_latency,
    train,
    verify,
)

__all__ = [
    "Divergence",
    "IllConditioned",
    "ShapeError",
    "auto_phi_cov",
    "auto_phi_rel",
    "bipartition_mi",
    "calibrate",
    "default_config",
    "grad_auto_phi",
    "lipschitz_bound",
    "optimal_return",
    "oracle_phi",
    "repair_latency",
    "train",
    "verify",
]

"""Simulation and verification toolkit for oscillator chains driven by heat reservoirs."""

from ._backend import backend_info
from .chain_model import (ChainParams, DomainError, GrowthReport, PotentialSpec,
                          PotentialTerm, State, extended_energy, potential_energy,
                          potential_gradient, potential_hessian, power_spec,
                          validate_growth)
from .sde_dynamics import (BlowUp, IntegratorConfig, Model, Trajectory,
                           deterministic_flow, drift_field, ou_exact_step,
                           simulate, suggest_dt)
from .seeding import make_rng, split_seed

__version__ = "0.1.0"

__all__ = [
    "BlowUp",
    "ChainParams",
    "DomainError",
    "GrowthReport",
    "IntegratorConfig",
    "Model",
    "PotentialSpec",
    "PotentialTerm",
    "State",
    "Trajectory",
    "backend_info",
    "deterministic_flow",
    "drift_field",
    "extended_energy",
    "make_rng",
    "ou_exact_step",
    "potential_energy",
    "potential_gradient",
    "potential_hessian",
    "power_spec",
    "simulate",
    "split_seed",
    "suggest_dt",
    "validate_growth",
    "__version__",
]

"""Simulation and numerics for branching Brownian motion with two speeds.

Modules: ``model`` (profiles, offspring laws, plans), ``engine`` (exact BBM
simulation), ``observables`` (martingales, configurations, localization),
``fkpp`` (F-KPP solver and tail constants), ``auxiliary`` (Poisson cluster
constructions), ``stats`` (tests and reports), ``experiments`` and ``cli``.
"""
from ._backend import BACKEND, USE_NUMBA
from .model import (CANONICAL_ABOVE, CANONICAL_BELOW, BarrierSpec, ConfigError, OffspringLaw,
                    SimulationPlan, SpeedProfile)

__version__ = "0.1.0"
__all__ = ["BACKEND", "USE_NUMBA", "CANONICAL_ABOVE", "CANONICAL_BELOW", "BarrierSpec",
           "ConfigError", "OffspringLaw", "SimulationPlan", "SpeedProfile"]

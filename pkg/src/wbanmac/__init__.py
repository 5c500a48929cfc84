"""Discrete-event simulation of intra-WBAN channel access: combined CSMA/CA
and flexible TDMA with stable-channel selection, against opportunistic
relaying and fixed TDMA baselines."""

from .model import ScenarioConfig, Scheme, baseline_config, validate_scenario
from .protocols import simulate

__version__ = "0.1.0"

__all__ = ["ScenarioConfig", "Scheme", "baseline_config", "validate_scenario", "simulate"]

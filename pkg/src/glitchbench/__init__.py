"""A simulated fault-injection lab with an RV32I target and glitch physics."""

from .attribution import Explanation, Observation, attribute, oracle_exhaustive
from .campaign import AttemptRecord, CampaignConfig, Outcome, run_attempt, run_campaign
from .faults import Effect, FaultEvent, FaultSchedule, Surface
from .machine import run
from .testprogs import TestId, build

__version__ = "0.1.0"

__all__ = [
    "AttemptRecord",
    "CampaignConfig",
    "Effect",
    "Explanation",
    "FaultEvent",
    "FaultSchedule",
    "Observation",
    "Outcome",
    "Surface",
    "TestId",
    "attribute",
    "build",
    "oracle_exhaustive",
    "run",
    "run_attempt",
    "run_campaign",
]

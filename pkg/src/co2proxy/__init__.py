"""Conditional CO2-proxy deduction for day-ahead electricity settlement."""
from co2proxy.settlement import (
    CrisisRamp,
    HardThreshold,
    LinearRamp,
    NoPolicy,
    ReferenceCost,
    SettlementResult,
    deduction,
    levy_settlement,
    remuneration,
    settle_hour,
)
from co2proxy.technology import EligibilitySet, Technology

__all__ = [
    "CrisisRamp",
    "EligibilitySet",
    "HardThreshold",
    "LinearRamp",
    "NoPolicy",
    "ReferenceCost",
    "SettlementResult",
    "Technology",
    "deduction",
    "levy_settlement",
    "remuneration",
    "settle_hour",
]

"""Generation technology tags and the eligible/fossil partition."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from importlib import resources


class Technology(str, enum.Enum):
    WIND_ONSHORE = "WindOnshore"
    WIND_OFFSHORE = "WindOffshore"
    SOLAR = "Solar"
    HYDRO_RUN_OF_RIVER = "HydroRunOfRiver"
    HYDRO_RESERVOIR = "HydroReservoir"
    NUCLEAR = "Nuclear"
    GEOTHERMAL = "Geothermal"
    BIOMASS = "Biomass"
    OTHER_RENEWABLE = "OtherRenewable"
    PUMPED_STORAGE = "PumpedStorage"
    GAS_CCGT = "GasCCGT"
    GAS_PEAKER = "GasPeaker"
    HARD_COAL = "HardCoal"
    LIGNITE = "Lignite"
    OIL = "Oil"
    OTHER = "Other"

    @classmethod
    def parse(cls, value: str | Technology) -> Technology:
        if isinstance(value, Technology):
            return value
        try:
            return cls(value)
        except ValueError:
            pass
        try:
            return cls[value.upper()]
        except KeyError:
            raise ValueError(f"unknown technology {value!r}") from None

    @property
    def is_fossil(self) -> bool:
        return self in FOSSIL

    @property
    def eligible_capable(self) -> bool:
        return self in ELIGIBLE_CAPABLE


FOSSIL = frozenset(
    {
        Technology.GAS_CCGT,
        Technology.GAS_PEAKER,
        Technology.HARD_COAL,
        Technology.LIGNITE,
        Technology.OIL,
    }
)

# Storage and the residual "Other" bucket are neither fossil nor eligible by default.
ELIGIBLE_CAPABLE = frozenset(
    {
        Technology.WIND_ONSHORE,
        Technology.WIND_OFFSHORE,
        Technology.SOLAR,
        Technology.HYDRO_RUN_OF_RIVER,
        Technology.HYDRO_RESERVOIR,
        Technology.NUCLEAR,
        Technology.GEOTHERMAL,
        Technology.BIOMASS,
        Technology.OTHER_RENEWABLE,
        Technology.PUMPED_STORAGE,
        Technology.OTHER,
    }
)

DEFAULT_ELIGIBLE = frozenset(
    {
        Technology.WIND_ONSHORE,
        Technology.WIND_OFFSHORE,
        Technology.SOLAR,
        Technology.HYDRO_RUN_OF_RIVER,
        Technology.HYDRO_RESERVOIR,
        Technology.NUCLEAR,
        Technology.GEOTHERMAL,
        Technology.BIOMASS,
        Technology.OTHER_RENEWABLE,
    }
)


@dataclass(frozen=True)
class EligibilitySet:
    """Technologies whose output is settled at the adjusted price.

    Units on a two-way CfD are handled by leaving their technology (or their
    volume) out of the set. ``allow_fossil`` exists for the crisis variant,
    where coal and lignite may be deliberately included.
    """

    technologies: frozenset[Technology] = DEFAULT_ELIGIBLE
    allow_fossil: bool = False

    def __post_init__(self) -> None:
        techs = frozenset(Technology.parse(t) for t in self.technologies)
        object.__setattr__(self, "technologies", techs)
        if not techs:
            raise ValueError("eligibility set must not be empty")
        fossil = techs & FOSSIL
        if fossil and not self.allow_fossil:
            names = ", ".join(sorted(t.value for t in fossil))
            raise ValueError(f"eligibility set contains fossil technologies: {names}")

    def __contains__(self, tech: object) -> bool:
        return tech in self.technologies

    def __iter__(self):
        return iter(sorted(self.technologies, key=_ORDER.__getitem__))

    def with_pumped_storage(self) -> EligibilitySet:
        return EligibilitySet(self.technologies | {Technology.PUMPED_STORAGE}, self.allow_fossil)

    def without(self, *techs: Technology | str) -> EligibilitySet:
        drop = {Technology.parse(t) for t in techs}
        return EligibilitySet(self.technologies - drop, self.allow_fossil)

    def with_coal(self) -> EligibilitySet:
        return EligibilitySet(
            self.technologies | {Technology.HARD_COAL, Technology.LIGNITE}, allow_fossil=True
        )


_ORDER = {tech: i for i, tech in enumerate(Technology)}


def technology_order(tech: Technology) -> int:
    return _ORDER[tech]


def default_technology_map() -> dict[str, Technology]:
    """Column name -> tag mapping for ENTSO-E production-type labels.

    Canonical tag values (``"WindOnshore"`` etc.) always map to themselves.
    """
    raw = json.loads(
        resources.files("co2proxy.data").joinpath("entsoe_production_types.json").read_text("utf-8")
    )
    mapping = {name: Technology(tag) for name, tag in raw.items()}
    for tech in Technology:
        mapping.setdefault(tech.value, tech)
    return mapping


# Default tCO2/MWh_el for offer-stack carbon adjustment in the auction simulator.
DEFAULT_INTENSITIES: dict[Technology, float] = {
    **{tech: 0.0 for tech in Technology},
    Technology.GAS_CCGT: 0.36,
    Technology.GAS_PEAKER: 0.55,
    Technology.HARD_COAL: 0.85,
    Technology.LIGNITE: 1.0,
    Technology.OIL: 0.75,
}

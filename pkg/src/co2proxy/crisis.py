"""Gas-shock variant: deduct the excess of fossil marginal cost over a reference level.

The maximum deduction for a day is ``max(0, MC_t - MC_ref)`` and it is phased
in over ``[lower, lower + phi * delta_t]``. Fuel and allowance prices are
daily; every hour of a zone-local day shares the same deduction.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Mapping

from co2proxy.panel import Panel, eligible_generation
from co2proxy.settlement import (
    CrisisRamp,
    PolicyError,
    ReferenceCost,
    deduction,
    fossil_marginal_cost,
)
from co2proxy.technology import EligibilitySet

MAX_CARRY_FORWARD_DAYS = 3


class FuelCoverageError(ValueError):
    def __init__(self, missing: list[date]):
        self.missing = missing
        shown = ", ".join(d.isoformat() for d in missing[:30])
        more = f" (+{len(missing) - 30} more)" if len(missing) > 30 else ""
        super().__init__(f"fuel price series does not cover: {shown}{more}")


@dataclass(frozen=True)
class FuelPrices:
    gas: float
    carbon: float


@dataclass(frozen=True)
class FuelPriceSeries:
    prices: Mapping[date, FuelPrices]

    def __post_init__(self) -> None:
        for day, fp in self.prices.items():
            if fp.gas < 0 or fp.carbon < 0:
                raise ValueError(f"negative fuel or carbon price on {day}")

    def covering(self, days: list[date], max_gap: int = MAX_CARRY_FORWARD_DAYS) -> dict[date, FuelPrices]:
        """Prices for ``days``, carrying the last quote forward over gaps of up to ``max_gap`` days."""
        out = {}
        missing = []
        for day in sorted(set(days)):
            for back in range(max_gap + 1):
                quote = self.prices.get(day - timedelta(days=back))
                if quote is not None:
                    out[day] = quote
                    break
            else:
                missing.append(day)
        if missing:
            raise FuelCoverageError(missing)
        return out


def load_fuel_series(path: str | Path) -> FuelPriceSeries:
    prices = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"date", "gas_price_eur_mwh_th", "carbon_price_eur_t"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"{path}: fuel file needs columns {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                day = date.fromisoformat(row["date"].strip()[:10])
                prices[day] = FuelPrices(
                    gas=float(row["gas_price_eur_mwh_th"]), carbon=float(row["carbon_price_eur_t"])
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not prices:
        raise ValueError(f"{path}: no records")
    return FuelPriceSeries(prices)


@dataclass(frozen=True)
class CrisisPolicyParams:
    reference: ReferenceCost
    lower: float
    phi: float
    eligibility: EligibilitySet = field(default_factory=EligibilitySet)
    # Hold the allowance price at its reference level so only fuel moves the deduction.
    fixed_carbon: bool = False

    def __post_init__(self) -> None:
        if self.phi < 1:
            raise PolicyError(f"ramp-width factor phi must be >= 1, got {self.phi}")
        if self.lower < 0:
            raise PolicyError(f"lower ramp bound must be >= 0, got {self.lower}")


def excess_cost_delta(params: CrisisPolicyParams, gas_price: float, carbon_price: float) -> float:
    ref = params.reference
    carbon = ref.carbon_price if params.fixed_carbon else carbon_price
    mc_t = fossil_marginal_cost(ref.efficiency, gas_price, ref.emission_intensity, carbon)
    return max(0.0, mc_t - ref.marginal_cost)


def hour_policy(params: CrisisPolicyParams, delta_t: float) -> CrisisRamp:
    return CrisisRamp(lower=params.lower, phi=params.phi, reference=params.reference, excess=delta_t)


def crisis_deduction(params: CrisisPolicyParams, delta_t: float, price: float) -> float:
    if delta_t < 0:
        raise PolicyError(f"excess-cost deduction must be >= 0, got {delta_t}")
    return deduction(hour_policy(params, delta_t), price)


@dataclass(frozen=True)
class CrisisHour:
    price: float
    load: float
    eligible: float
    delta: float
    deduction: float
    transfer: float


@dataclass(frozen=True)
class CrisisReport:
    zone: str
    hours: int
    activated_hours: int
    total_load: float
    eligible_generation: float
    exp_base: float
    transfer: float
    exp_new: float
    eligible_revenue_base: float
    eligible_revenue_new: float

    @property
    def avg_wholesale(self) -> float:
        return self.exp_base / self.total_load

    @property
    def avg_consumer_expenditure(self) -> float:
        return self.exp_new / self.total_load

    @property
    def avg_eligible_remuneration(self) -> float | None:
        if self.eligible_generation == 0:
            return None
        return self.eligible_revenue_new / self.eligible_generation

    @property
    def reduction_pct(self) -> float:
        if self.exp_base == 0:
            return 0.0
        return 100.0 * self.transfer / self.exp_base


def settle_crisis_hours(panel: Panel, fuel: FuelPriceSeries, params: CrisisPolicyParams) -> list[CrisisHour]:
    days = [panel.local_time(r).date() for r in panel.records]
    quotes = fuel.covering(days)
    deltas = {day: excess_cost_delta(params, q.gas, q.carbon) for day, q in quotes.items()}
    hours = []
    for rec, day in zip(panel.records, days):
        delta = deltas[day]
        d = crisis_deduction(params, delta, rec.price)
        r = eligible_generation(rec, params.eligibility)
        hours.append(CrisisHour(rec.price, rec.load, r, delta, d, d * r))
    return hours


def _summarise(zone: str, hours: list[CrisisHour]) -> CrisisReport:
    load = gen = base = trans = new = rev_base = rev_new = 0.0
    activated = 0
    for h in hours:
        exp_base = h.price * h.load
        load += h.load
        gen += h.eligible
        base += exp_base
        trans += h.transfer
        new += exp_base - h.transfer
        rev_base += h.price * h.eligible
        rev_new += (h.price - h.deduction) * h.eligible
        activated += h.deduction > 0
    return CrisisReport(
        zone=zone,
        hours=len(hours),
        activated_hours=activated,
        total_load=load,
        eligible_generation=gen,
        exp_base=base,
        transfer=trans,
        exp_new=new,
        eligible_revenue_base=rev_base,
        eligible_revenue_new=rev_new,
    )


def crisis_quantify(panel: Panel, fuel: FuelPriceSeries, params: CrisisPolicyParams) -> CrisisReport:
    """Consumer averages are load-weighted; eligible remuneration is generation-weighted."""
    if len(panel) == 0:
        raise ValueError(f"panel {panel.zone!r} has no hours")
    report = _summarise(panel.zone, settle_crisis_hours(panel, fuel, params))
    if report.total_load == 0:
        raise ValueError(f"panel {panel.zone!r} has zero total load")
    return report


@dataclass(frozen=True)
class WeeklyRow:
    iso_week: str
    hours: int
    avg_wholesale: float | None
    avg_eligible_remuneration: float | None
    avg_consumer_expenditure: float | None


def weekly_series(panel: Panel, fuel: FuelPriceSeries, params: CrisisPolicyParams) -> list[WeeklyRow]:
    """ISO-week averages (zone-local) of wholesale price, eligible remuneration and net expenditure."""
    hours = settle_crisis_hours(panel, fuel, params)
    groups: dict[str, list[CrisisHour]] = {}
    for rec, h in zip(panel.records, hours):
        year, week, _ = panel.local_time(rec).isocalendar()
        groups.setdefault(f"{year}-W{week:02d}", []).append(h)
    rows = []
    for key in sorted(groups):
        rep = _summarise(panel.zone, groups[key])
        rows.append(
            WeeklyRow(
                iso_week=key,
                hours=rep.hours,
                avg_wholesale=rep.avg_wholesale if rep.total_load else None,
                avg_eligible_remuneration=rep.avg_eligible_remuneration,
                avg_consumer_expenditure=rep.avg_consumer_expenditure if rep.total_load else None,
            )
        )
    return rows

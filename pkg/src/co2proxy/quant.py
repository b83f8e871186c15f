"""Static accounting of the deduction over an hourly panel.

Prices and quantities are held fixed; each hour is settled independently and
totals are accumulated in timestamp order so results do not depend on the
number of worker threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from co2proxy.panel import HourlyRecord, Panel, eligible_generation
from co2proxy.settlement import (
    DeductionPolicy,
    HardThreshold,
    LinearRamp,
    PolicyError,
    SettlementResult,
    deduction,
    settle_hour,
)
from co2proxy.technology import EligibilitySet, Technology


class EmptyPanelError(ValueError):
    pass


class UnsupportedPolicyError(PolicyError):
    pass


@dataclass(frozen=True)
class TechnologyShare:
    technology: Technology
    generation: float
    baseline_revenue: float
    transfer: float
    share_pct: float | None
    loss_pct: float | None


@dataclass(frozen=True)
class BlockResult:
    first_hour: int
    last_hour: int
    hours: int
    load: float
    exp_base: float
    transfer: float
    exp_new: float

    @property
    def label(self) -> str:
        return f"{self.first_hour:02d}-{self.last_hour:02d}"

    @property
    def avg_price_base(self) -> float | None:
        return self.exp_base / self.load if self.load else None

    @property
    def avg_price_new(self) -> float | None:
        return self.exp_new / self.load if self.load else None

    @property
    def reduction_pct(self) -> float | None:
        return 100.0 * self.transfer / self.exp_base if self.exp_base else None


@dataclass(frozen=True)
class QuantReport:
    zone: str
    policy_id: str
    hours: int
    total_load: float
    exp_base: float
    transfer: float
    exp_new: float
    activated_hours: int
    export_hours: int
    coverage_pct: float
    technologies: tuple[TechnologyShare, ...] = ()
    blocks: tuple[BlockResult, ...] = ()

    @property
    def total_load_twh(self) -> float:
        return self.total_load / 1e6

    @property
    def avg_price_base(self) -> float:
        return self.exp_base / self.total_load

    @property
    def avg_price_new(self) -> float:
        return self.exp_new / self.total_load

    @property
    def reduction_abs(self) -> float:
        """EUR/MWh reduction in average expenditure."""
        return self.avg_price_base - self.avg_price_new

    @property
    def reduction_pct(self) -> float:
        if self.exp_base == 0:
            return 0.0
        return 100.0 * self.transfer / self.exp_base


def _settle_all(
    records: Sequence[HourlyRecord],
    policy: DeductionPolicy | Sequence[DeductionPolicy],
    eligibility: EligibilitySet,
    workers: int = 1,
) -> list[SettlementResult]:
    if not isinstance(policy, Sequence):
        policies = [policy] * len(records)
    else:
        policies = list(policy)
        if len(policies) != len(records):
            raise ValueError("need one policy per hour")

    def one(i: int) -> SettlementResult:
        rec = records[i]
        return settle_hour(rec.price, rec.load, eligible_generation(rec, eligibility), policies[i])

    if workers <= 1 or len(records) < 2:
        return [one(i) for i in range(len(records))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(records)), chunksize=256))


def quantify(
    panel: Panel,
    policy: DeductionPolicy | Sequence[DeductionPolicy],
    eligibility: EligibilitySet | None = None,
    block_hours: int = 4,
    workers: int = 1,
) -> QuantReport:
    """Settle every hour of ``panel`` under ``policy`` and aggregate.

    ``policy`` may also be a sequence with one policy per hour, which is how a
    deduction indexed to a daily allowance price is applied.
    """
    if len(panel) == 0:
        raise EmptyPanelError(f"panel {panel.zone!r} has no hours")
    eligibility = eligibility or EligibilitySet()
    results = _settle_all(panel.records, policy, eligibility, workers)
    total_load = exp_base = transfer = exp_new = 0.0
    activated = exports = 0
    for rec, res in zip(panel.records, results):
        total_load += rec.load
        exp_base += res.exp_base
        transfer += res.transfer
        exp_new += res.exp_new
        activated += res.deduction > 0
        exports += res.export_hour
    if total_load == 0:
        raise EmptyPanelError(f"panel {panel.zone!r} has zero total load")
    return QuantReport(
        zone=panel.zone,
        policy_id=_policy_id(policy),
        hours=len(panel),
        total_load=total_load,
        exp_base=exp_base,
        transfer=transfer,
        exp_new=exp_new,
        activated_hours=activated,
        export_hours=exports,
        coverage_pct=panel.coverage.coverage_pct,
        technologies=tuple(_technology_rows(panel, results, eligibility)),
        blocks=tuple(_block_rows(panel, results, block_hours)),
    )


def _policy_id(policy) -> str:
    if hasattr(policy, "policy_id"):
        return policy.policy_id
    return "per-hour"


def average_reduction_identity(
    panel: Panel, policy: HardThreshold, eligibility: EligibilitySet | None = None
) -> float:
    """Closed form of the average reduction: deduction * activated eligible MWh / total load."""
    if not isinstance(policy, HardThreshold):
        raise UnsupportedPolicyError("the closed-form reduction only holds for a hard threshold")
    eligibility = eligibility or EligibilitySet()
    activated_eligible = 0.0
    total_load = 0.0
    for rec in panel.records:
        total_load += rec.load
        if rec.price >= policy.threshold:
            activated_eligible += eligible_generation(rec, eligibility)
    if total_load == 0:
        raise EmptyPanelError(f"panel {panel.zone!r} has zero total load")
    return policy.deduction * activated_eligible / total_load


def technology_decomposition(
    panel: Panel, policy: DeductionPolicy, eligibility: EligibilitySet | None = None
) -> list[TechnologyShare]:
    eligibility = eligibility or EligibilitySet()
    deductions = [deduction(policy, rec.price) for rec in panel.records]
    return _technology_rows(panel, deductions, eligibility)


def _technology_rows(panel: Panel, results, eligibility: EligibilitySet) -> list[TechnologyShare]:
    techs = list(eligibility)
    gen = dict.fromkeys(techs, 0.0)
    revenue = dict.fromkeys(techs, 0.0)
    transfer = dict.fromkeys(techs, 0.0)
    for rec, res in zip(panel.records, results):
        d = res.deduction if isinstance(res, SettlementResult) else res
        for tech in techs:
            q = rec.generation.get(tech, 0.0)
            if q:
                gen[tech] += q
                revenue[tech] += rec.price * q
                transfer[tech] += d * q
    total = 0.0
    for tech in techs:
        total += transfer[tech]
    rows = []
    for tech in techs:
        rows.append(
            TechnologyShare(
                technology=tech,
                generation=gen[tech],
                baseline_revenue=revenue[tech],
                transfer=transfer[tech],
                share_pct=100.0 * transfer[tech] / total if total > 0 else None,
                loss_pct=100.0 * transfer[tech] / revenue[tech] if revenue[tech] > 0 else None,
            )
        )
    return rows


def block_decomposition(
    panel: Panel,
    policy: DeductionPolicy,
    eligibility: EligibilitySet | None = None,
    block_hours: int = 4,
) -> list[BlockResult]:
    """Totals per block of zone-local clock hours (00-03, 04-07, ... for 4-hour blocks)."""
    eligibility = eligibility or EligibilitySet()
    results = _settle_all(panel.records, policy, eligibility)
    return _block_rows(panel, results, block_hours)


def _block_rows(panel: Panel, results, block_hours: int) -> list[BlockResult]:
    if not isinstance(block_hours, int) or block_hours <= 0 or 24 % block_hours:
        raise PolicyError(f"block size must divide 24, got {block_hours}")
    n = 24 // block_hours
    hours = [0] * n
    load = [0.0] * n
    base = [0.0] * n
    trans = [0.0] * n
    new = [0.0] * n
    for rec, res in zip(panel.records, results):
        b = panel.local_time(rec).hour // block_hours
        hours[b] += 1
        load[b] += rec.load
        base[b] += res.exp_base
        trans[b] += res.transfer
        new[b] += res.exp_new
    return [
        BlockResult(
            first_hour=b * block_hours,
            last_hour=(b + 1) * block_hours - 1,
            hours=hours[b],
            load=load[b],
            exp_base=base[b],
            transfer=trans[b],
            exp_new=new[b],
        )
        for b in range(n)
    ]


@dataclass(frozen=True)
class SensitivityRow:
    zone: str
    threshold: float
    deduction: float
    base_price: float
    new_price: float
    reduction_pct: float


def sensitivity_grid(
    panel: Panel,
    thresholds: Sequence[float],
    deductions: Sequence[float],
    eligibility: EligibilitySet | None = None,
) -> list[SensitivityRow]:
    """Hard-threshold outcomes for every (threshold, deduction) pair, threshold-major."""
    if not thresholds or not deductions:
        raise ValueError("sensitivity grid needs at least one threshold and one deduction")
    rows = []
    for p_bar in thresholds:
        for delta in deductions:
            rep = quantify(panel, HardThreshold(p_bar, delta), eligibility)
            rows.append(
                SensitivityRow(
                    zone=panel.zone,
                    threshold=p_bar,
                    deduction=delta,
                    base_price=rep.avg_price_base,
                    new_price=rep.avg_price_new,
                    reduction_pct=rep.reduction_pct,
                )
            )
    return rows


def format_sensitivity_table(rows: Sequence[SensitivityRow]) -> str:
    """Threshold rows by deduction columns, one section per zone."""
    lines = []
    zones = list(dict.fromkeys(r.zone for r in rows))
    for zone in zones:
        zrows = [r for r in rows if r.zone == zone]
        deds = list(dict.fromkeys(r.deduction for r in zrows))
        ths = list(dict.fromkeys(r.threshold for r in zrows))
        head = f"{'Threshold':>9} {'Base':>7}" + "".join(
            f" | {'New':>7} {'Red.%':>6}  (d={d:g})" for d in deds
        )
        lines.append(f"{zone}")
        lines.append(head)
        for th in ths:
            cells = {r.deduction: r for r in zrows if r.threshold == th}
            base = next(iter(cells.values())).base_price
            line = f"{th:>9g} {base:>7.1f}"
            for d in deds:
                r = cells[d]
                line += f" | {r.new_price:>7.1f} {r.reduction_pct:>6.2f}" + " " * (len(f"  (d={d:g})"))
            lines.append(line.rstrip())
    return "\n".join(lines)


@dataclass(frozen=True)
class ComparisonRow:
    zone: str
    policy: str
    exp_base: float
    reduction_abs: float
    exp_new: float
    reduction_pct: float
    avg_price_base: float
    avg_price_new: float


def compare_ramp_vs_threshold(
    panel: Panel,
    hard: HardThreshold,
    ramp: LinearRamp,
    eligibility: EligibilitySet | None = None,
) -> list[ComparisonRow]:
    rows = []
    for label, policy in (("HT", hard), ("LR", ramp)):
        rep = quantify(panel, policy, eligibility)
        rows.append(
            ComparisonRow(
                zone=panel.zone,
                policy=label,
                exp_base=rep.exp_base,
                reduction_abs=rep.transfer,
                exp_new=rep.exp_new,
                reduction_pct=rep.reduction_pct,
                avg_price_base=rep.avg_price_base,
                avg_price_new=rep.avg_price_new,
            )
        )
    return rows

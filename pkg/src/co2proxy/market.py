"""Single-period uniform-price auction and the threshold-push incentive analysis.

Clearing walks the merit order (offer price, then input position) against
either a fixed demand or a linear inverse demand ``p = a - b q``. The
deduction never enters clearing; it is applied to eligible owners' revenue
afterwards.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from co2proxy.settlement import (
    CrisisRamp,
    DeductionPolicy,
    HardThreshold,
    LinearRamp,
    remuneration,
)
from co2proxy.technology import EligibilitySet, Technology


class InfeasibleClearingError(ValueError):
    pass


class UndefinedPortfolioError(ValueError):
    pass


@dataclass(frozen=True)
class Offer:
    owner: str
    technology: Technology
    quantity: float
    price: float
    cost: float | None = None
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "technology", Technology.parse(self.technology))
        if not self.quantity > 0:
            raise ValueError(f"offer quantity must be > 0, got {self.quantity}")

    @property
    def marginal_cost(self) -> float:
        return self.price if self.cost is None else self.cost


@dataclass(frozen=True)
class SupplyCurve:
    offers: tuple[Offer, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "offers", tuple(self.offers))

    @property
    def total(self) -> float:
        return sum(o.quantity for o in self.offers)

    def merit_order(self) -> list[int]:
        """Offer indices sorted by price; equal prices keep input order."""
        return sorted(range(len(self.offers)), key=lambda i: self.offers[i].price)

    def with_prices(self, prices: Mapping[int, float]) -> SupplyCurve:
        offers = list(self.offers)
        for i, p in prices.items():
            offers[i] = replace(offers[i], price=p, cost=offers[i].marginal_cost)
        return SupplyCurve(tuple(offers))


@dataclass(frozen=True)
class Inelastic:
    quantity: float

    def __post_init__(self) -> None:
        if not self.quantity > 0:
            raise ValueError(f"inelastic demand must be > 0, got {self.quantity}")


@dataclass(frozen=True)
class LinearDemand:
    """Inverse demand ``price = intercept - slope * quantity``; slope 0 is a flat bid at ``intercept``."""

    intercept: float
    slope: float

    def __post_init__(self) -> None:
        if not self.intercept > 0:
            raise ValueError(f"demand intercept must be > 0, got {self.intercept}")
        if self.slope < 0:
            raise ValueError(f"demand slope must be >= 0, got {self.slope}")


DemandCurve = Union[Inelastic, LinearDemand]


@dataclass(frozen=True)
class ClearingOutcome:
    price: float
    quantity: float
    accepted: tuple[tuple[int, float], ...]
    marginal: int | None
    supply: SupplyCurve = field(repr=False)

    @property
    def marginal_offer(self) -> Offer | None:
        return None if self.marginal is None else self.supply.offers[self.marginal]

    @property
    def price_set_by_demand(self) -> bool:
        return self.marginal is None

    def accepted_quantity(self, index: int) -> float:
        for i, q in self.accepted:
            if i == index:
                return q
        return 0.0

    def accepted_offers(self) -> list[tuple[Offer, float]]:
        return [(self.supply.offers[i], q) for i, q in self.accepted]


def clear(supply: SupplyCurve, demand: DemandCurve) -> ClearingOutcome:
    """Uniform-price clearing of a step supply curve.

    With fixed demand the price is the offer price of the step that meets it
    (partially accepted if needed). With linear demand the price is where the
    line crosses the step function; on a vertical segment between steps the
    demand line sets the price and ``marginal`` is None.
    """
    return _clear_in_order(supply, supply.merit_order(), demand)


def _clear_in_order(supply: SupplyCurve, order: Sequence[int], demand: DemandCurve) -> ClearingOutcome:
    offers = supply.offers
    accepted: list[tuple[int, float]] = []
    if isinstance(demand, Inelastic):
        target = demand.quantity
        cum = 0.0
        for i in order:
            q = offers[i].quantity
            if cum + q >= target:
                take = target - cum
                accepted.append((i, take))
                return ClearingOutcome(offers[i].price, target, tuple(accepted), i, supply)
            accepted.append((i, q))
            cum += q
        raise InfeasibleClearingError(f"demand {target:g} exceeds total supply {cum:g}")

    a, b = demand.intercept, demand.slope
    cum = 0.0
    marginal = None
    for i in order:
        off = offers[i]
        c, q = off.price, off.quantity
        if b == 0:
            if c > a:
                break
            accepted.append((i, q))
            cum += q
            if c == a:
                marginal = i
            continue
        wanted = (a - c) / b
        if wanted <= cum:
            break
        if wanted <= cum + q:
            accepted.append((i, wanted - cum))
            return ClearingOutcome(c, wanted, tuple(accepted), i, supply)
        accepted.append((i, q))
        cum += q
    if b == 0:
        return ClearingOutcome(a, cum, tuple(accepted), marginal, supply)
    return ClearingOutcome(a - b * cum, cum, tuple(accepted), None, supply)


def apply_carbon_cost(
    supply: SupplyCurve, carbon_price: float, intensities: Mapping[Technology, float]
) -> SupplyCurve:
    """Raise each offer (and its cost) by ``intensity * carbon_price``; returns the new merit order."""
    shifted = []
    for off in supply.offers:
        if off.technology not in intensities:
            raise KeyError(f"no emission intensity for technology {off.technology.value}")
        e = intensities[off.technology]
        if e < 0:
            raise ValueError(f"negative emission intensity for {off.technology.value}")
        add = e * carbon_price
        shifted.append(replace(off, price=off.price + add, cost=off.marginal_cost + add))
    curve = SupplyCurve(tuple(shifted))
    return SupplyCurve(tuple(curve.offers[i] for i in curve.merit_order()))


def pass_through(
    supply: SupplyCurve,
    demand: DemandCurve,
    intensities: Mapping[Technology, float],
    carbon_price: float,
    shift: float,
) -> float:
    """Finite-difference response of the clearing price to a per-MWh emissions-cost shift.

    Every emitting offer (intensity > 0) moves up by ``shift``; the result is
    ``(p*(m + shift) - p*(m)) / shift``.
    """
    if not shift > 0:
        raise ValueError("cost shift must be > 0")
    base = apply_carbon_cost(supply, carbon_price, intensities)
    bumped = SupplyCurve(
        tuple(
            replace(o, price=o.price + shift) if intensities[o.technology] > 0 else o
            for o in base.offers
        )
    )
    return (clear(bumped, demand).price - clear(base, demand).price) / shift


def eligible_profit(price: float, policy: DeductionPolicy, quantity: float, cost: float = 0.0) -> float:
    if quantity < 0:
        raise ValueError("quantity must be >= 0")
    return (remuneration(policy, price) - cost) * quantity


@dataclass(frozen=True)
class Portfolio:
    owner: str
    eligible: float
    fossil: float

    def __post_init__(self) -> None:
        if self.eligible < 0 or self.fossil < 0:
            raise ValueError("portfolio positions must be >= 0")

    @property
    def critical_price_drop(self) -> float:
        """Largest price reduction below which crossing the threshold pays, per unit deduction."""
        return self.eligible / (self.eligible + self.fossil)


def manipulation_gain(price_drop: float, delta: float, portfolio: Portfolio) -> tuple[float, bool]:
    """Profit change from pushing the price below the threshold, and whether it is positive."""
    if not price_drop > 0:
        raise ValueError("price drop must be > 0")
    if portfolio.eligible + portfolio.fossil == 0:
        raise UndefinedPortfolioError(f"portfolio of {portfolio.owner!r} has no output")
    gain = (delta - price_drop) * portfolio.eligible - price_drop * portfolio.fossil
    return gain, gain > 0


def owner_profit(
    outcome: ClearingOutcome,
    owner: str,
    policy: DeductionPolicy,
    eligibility: EligibilitySet,
) -> float:
    """Owner's operating profit: eligible output at the adjusted price, the rest at the clearing price."""
    p = outcome.price
    paid_eligible = remuneration(policy, p)
    total = 0.0
    for off, q in outcome.accepted_offers():
        if off.owner != owner:
            continue
        unit_price = paid_eligible if off.technology in eligibility else p
        total += (unit_price - off.marginal_cost) * q
    return total


def portfolio_of(outcome: ClearingOutcome, owner: str, eligibility: EligibilitySet) -> Portfolio:
    r = f = 0.0
    for off, q in outcome.accepted_offers():
        if off.owner == owner:
            if off.technology in eligibility:
                r += q
            else:
                f += q
    return Portfolio(owner, r, f)


def activation_price(policy: DeductionPolicy) -> float | None:
    """Price at or above which the full deduction applies."""
    if isinstance(policy, HardThreshold):
        return policy.threshold
    if isinstance(policy, (LinearRamp, CrisisRamp)):
        return policy.upper
    return None


def offer_grid(price: float, step: float) -> list[float]:
    """Candidate offer prices from ``price`` down to 0 in ``step`` decrements (``price`` first)."""
    if not step > 0:
        raise ValueError("grid step must be > 0")
    if price <= 0:
        return [price]
    n = int(math.floor(price / step + 1e-9))
    grid = [price - k * step for k in range(n + 1)]
    grid = [g for g in grid if g >= 0]
    if grid[-1] > 0:
        grid.append(0.0)
    return grid


@dataclass(frozen=True)
class DeviationReport:
    owner: str
    baseline_price: float
    baseline_profit: float
    best_price: float
    best_profit: float
    best_offers: tuple[tuple[int, float], ...]
    crosses_threshold: bool
    exhaustive: bool
    evaluations: int

    @property
    def gain(self) -> float:
        return self.best_profit - self.baseline_profit

    @property
    def profitable(self) -> bool:
        return self.best_offers != () and self.gain > 0

    @property
    def threshold_push(self) -> bool:
        return self.profitable and self.crosses_threshold


def _effective_grids(
    supply: SupplyCurve,
    demand: DemandCurve,
    owned: list[int],
    step: float,
    baseline_price: float,
) -> list[list[float]]:
    """Per-offer candidate prices with outcome-equivalent values collapsed.

    Lowering offers can only lower the clearing price, so the all-at-zero
    deviation bounds every reachable price from below. An owned offer priced
    strictly under that bound is inframarginal whatever it bids; an offer
    priced strictly above the baseline price stays out for any bid above it.
    """
    grids = [offer_grid(supply.offers[i].price, step) for i in owned]
    floor_curve = supply.with_prices({i: min(g) for i, g in zip(owned, grids)})
    try:
        price_floor = clear(floor_curve, demand).price
    except InfeasibleClearingError:
        price_floor = -math.inf
    out = []
    for i, grid in zip(owned, grids):
        b = supply.offers[i].price
        if b < price_floor:
            out.append([b])
            continue
        if b > baseline_price:
            grid = [b] + [g for g in grid if g <= baseline_price]
        out.append(grid)
    return out


def best_response_threshold_push(
    supply: SupplyCurve,
    demand: DemandCurve,
    policy: DeductionPolicy,
    owner: str,
    grid_step: float = 0.5,
    eligibility: EligibilitySet | None = None,
    max_evaluations: int = 200_000,
) -> DeviationReport:
    """Best unilateral offer-price reduction for ``owner`` under the settlement rule.

    Each owned offer may be lowered on a grid over ``[0, offer price]``. The
    joint grid is searched exhaustively (after collapsing outcome-equivalent
    points) when it has at most ``max_evaluations`` points, otherwise by
    cyclic coordinate ascent. Ties keep the truthful offers.
    """
    eligibility = eligibility or EligibilitySet()
    owned = [i for i, o in enumerate(supply.offers) if o.owner == owner]
    if not owned:
        raise ValueError(f"owner {owner!r} has no offers")
    base_order = supply.merit_order()
    baseline = _clear_in_order(supply, base_order, demand)
    base_profit = owner_profit(baseline, owner, policy, eligibility)

    others = [i for i in base_order if supply.offers[i].owner != owner]
    grids = _effective_grids(supply, demand, owned, grid_step, baseline.price)
    tol = 1e-9 * max(1.0, abs(base_profit))
    evaluations = 0

    def evaluate(prices: Sequence[float]) -> ClearingOutcome | None:
        nonlocal evaluations
        evaluations += 1
        trial = supply.with_prices(dict(zip(owned, prices)))
        mine = sorted(owned, key=lambda i: trial.offers[i].price)
        order = _merge(trial, others, mine)
        try:
            return _clear_in_order(trial, order, demand)
        except InfeasibleClearingError:
            return None

    best_prices: tuple[float, ...] = ()
    best_outcome = baseline
    best_profit = base_profit
    size = math.prod(len(g) for g in grids)
    exhaustive = size <= max_evaluations
    if exhaustive:
        candidates: Iterable[tuple[float, ...]] = itertools.product(*grids)
        for prices in candidates:
            if all(p == g[0] for p, g in zip(prices, grids)):
                continue
            out = evaluate(prices)
            if out is None:
                continue
            profit = owner_profit(out, owner, policy, eligibility)
            if profit > best_profit + tol:
                best_prices, best_outcome, best_profit = tuple(prices), out, profit
    else:
        current = [g[0] for g in grids]
        improved = True
        while improved:
            improved = False
            for k, grid in enumerate(grids):
                for value in grid:
                    if value == current[k]:
                        continue
                    trial = list(current)
                    trial[k] = value
                    out = evaluate(trial)
                    if out is None:
                        continue
                    profit = owner_profit(out, owner, policy, eligibility)
                    if profit > best_profit + tol:
                        current = trial
                        best_prices, best_outcome, best_profit = tuple(trial), out, profit
                        improved = True

    act = activation_price(policy)
    crosses = bool(
        best_prices
        and act is not None
        and baseline.price >= act
        and best_outcome.price < act
    )
    return DeviationReport(
        owner=owner,
        baseline_price=baseline.price,
        baseline_profit=base_profit,
        best_price=best_outcome.price,
        best_profit=best_profit,
        best_offers=tuple(zip(owned, best_prices)),
        crosses_threshold=crosses,
        exhaustive=exhaustive,
        evaluations=evaluations,
    )


def _merge(supply: SupplyCurve, a: list[int], b: list[int]) -> list[int]:
    """Merge two merit-ordered index lists with the (price, input position) key."""
    offers = supply.offers
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        x, y = a[i], b[j]
        if (offers[x].price, x) <= (offers[y].price, y):
            out.append(x)
            i += 1
        else:
            out.append(y)
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return out


@dataclass(frozen=True)
class ScenarioFamily:
    """Scripted markets whose competitive price lands uniformly in ``[target_low, target_high]``.

    A competitive fringe of small gas steps spread over ``[ladder_low,
    ladder_high]`` sits on top of baseload; the strategic owner holds wind,
    a mid-merit gas unit and a peaker it can bid below cost.
    """

    target_low: float = 95.0
    target_high: float = 110.0
    ladder_low: float = 70.0
    ladder_high: float = 130.0
    ladder_steps: int = 120
    ladder_step_mwh: float = 1.0
    baseload_mwh: float = 100.0
    baseload_price: float = 10.0
    owner: str = "strategic"
    owner_wind_mwh: float = 70.0
    owner_gas_mwh: float = 30.0
    owner_gas_cost: float = 60.0
    owner_peaker_mwh: float = 20.0
    owner_peaker_cost: float = 115.0

    def generate(self, n: int, seed: int) -> list[tuple[SupplyCurve, Inelastic]]:
        if n < 1:
            raise ValueError("need at least one scenario")
        rng = np.random.default_rng(seed)
        # Stratified targets keep the truthful price histogram flat.
        strata = (np.arange(n) + rng.random(n)) / n
        targets = self.target_low + (self.target_high - self.target_low) * rng.permutation(strata)
        out = []
        for target in targets:
            ladder = np.sort(rng.uniform(self.ladder_low, self.ladder_high, self.ladder_steps))
            offers = [
                Offer(self.owner, Technology.WIND_ONSHORE, self.owner_wind_mwh, 0.0, name="owner-wind"),
                Offer("fringe", Technology.NUCLEAR, self.baseload_mwh, self.baseload_price, name="baseload"),
                Offer(self.owner, Technology.GAS_CCGT, self.owner_gas_mwh, self.owner_gas_cost, name="owner-gas"),
                Offer(self.owner, Technology.GAS_PEAKER, self.owner_peaker_mwh, self.owner_peaker_cost, name="owner-peaker"),
            ]
            offers += [
                Offer("fringe", Technology.GAS_CCGT, self.ladder_step_mwh, float(p), name=f"fringe-{k}")
                for k, p in enumerate(ladder)
            ]
            supply = SupplyCurve(tuple(offers))
            below = sum(o.quantity for o in offers if o.price <= target)
            out.append((supply, Inelastic(below - 0.5 * self.ladder_step_mwh)))
        return out


@dataclass(frozen=True)
class BunchingResult:
    prices: tuple[float, ...]
    reference_price: float
    window: float
    statistic: float
    pushes: int

    def histogram(self, bin_width: float = 1.0) -> list[tuple[float, float, int]]:
        """(bin_left, bin_right, count) over the range of outcomes, left-closed bins."""
        if not self.prices:
            return []
        lo = math.floor(min(self.prices) / bin_width) * bin_width
        hi = math.floor(max(self.prices) / bin_width) * bin_width + bin_width
        n_bins = int(round((hi - lo) / bin_width))
        counts = [0] * n_bins
        for p in self.prices:
            k = min(int((p - lo) // bin_width), n_bins - 1)
            counts[k] += 1
        return [(lo + k * bin_width, lo + (k + 1) * bin_width, counts[k]) for k in range(n_bins)]


def bunching_statistic(prices: Sequence[float], reference_price: float, window: float = 2.0) -> float:
    """Share of prices in ``[ref - window, ref)`` minus share in ``[ref, ref + window)``."""
    n = len(prices)
    below = sum(1 for p in prices if reference_price - window <= p < reference_price)
    above = sum(1 for p in prices if reference_price <= p < reference_price + window)
    return (below - above) / n


def bunching_scan(
    scenarios: Sequence[tuple[SupplyCurve, DemandCurve]],
    policy: DeductionPolicy,
    owner: str,
    grid_step: float = 0.5,
    eligibility: EligibilitySet | None = None,
    reference_price: float | None = None,
    window: float = 2.0,
) -> BunchingResult:
    """Best-respond in every scenario and measure price mass just below vs just above the threshold.

    ``reference_price`` defaults to the policy's full-deduction price and
    must be given for :class:`NoPolicy`.
    """
    if not scenarios:
        raise ValueError("need at least one scenario")
    ref = reference_price if reference_price is not None else activation_price(policy)
    if ref is None:
        raise ValueError("reference price required when the policy has no threshold")
    prices = []
    pushes = 0
    for supply, demand in scenarios:
        rep = best_response_threshold_push(supply, demand, policy, owner, grid_step, eligibility)
        prices.append(rep.best_price)
        pushes += rep.threshold_push
    return BunchingResult(
        prices=tuple(prices),
        reference_price=ref,
        window=window,
        statistic=bunching_statistic(prices, ref, window),
        pushes=pushes,
    )


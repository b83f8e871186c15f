"""Settlement kernel for the conditional CO2-proxy deduction.

Every function here is pure: no shared state, same inputs give bit-identical
outputs. Prices are EUR/MWh, energy MWh, money EUR, all as Python floats.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Union


class PolicyError(ValueError):
    """Invalid deduction-policy or formula parameters."""


class SettlementDataError(ValueError):
    """Negative load or generation passed to the settlement kernel."""


class DeductionSlopeWarning(UserWarning):
    """Ramp deduction exceeds ramp width, so remuneration falls with price in the ramp."""


@dataclass(frozen=True)
class ReferenceCost:
    efficiency: float
    fuel_price: float
    emission_intensity: float
    carbon_price: float

    def __post_init__(self) -> None:
        _floats(self, "efficiency", "fuel_price", "emission_intensity", "carbon_price")
        if not self.efficiency > 0 or self.efficiency > 1:
            raise PolicyError(f"efficiency must lie in (0, 1], got {self.efficiency}")
        if self.emission_intensity < 0:
            raise PolicyError("emission intensity must be >= 0")
        if self.fuel_price < 0 or self.carbon_price < 0:
            raise PolicyError("reference prices must be >= 0")

    @property
    def marginal_cost(self) -> float:
        return fossil_marginal_cost(
            self.efficiency, self.fuel_price, self.emission_intensity, self.carbon_price
        )


@dataclass(frozen=True)
class NoPolicy:
    @property
    def policy_id(self) -> str:
        return "none"


@dataclass(frozen=True)
class HardThreshold:
    threshold: float
    deduction: float

    def __post_init__(self) -> None:
        _floats(self, "threshold", "deduction")
        if self.deduction < 0:
            raise PolicyError(f"deduction must be >= 0, got {self.deduction}")

    @property
    def policy_id(self) -> str:
        return f"hard:{_num(self.threshold)}:{_num(self.deduction)}"


@dataclass(frozen=True)
class LinearRamp:
    lower: float
    upper: float
    deduction: float

    def __post_init__(self) -> None:
        _floats(self, "lower", "upper", "deduction")
        if self.deduction < 0:
            raise PolicyError(f"deduction must be >= 0, got {self.deduction}")
        if not self.lower < self.upper:
            raise PolicyError(f"ramp needs lower < upper, got {self.lower} >= {self.upper}")
        if self.deduction > self.upper - self.lower:
            warnings.warn(
                f"deduction {self.deduction} exceeds ramp width {self.upper - self.lower}: "
                "eligible remuneration decreases with price inside the ramp",
                DeductionSlopeWarning,
                stacklevel=3,
            )

    @property
    def slope(self) -> float:
        """d(remuneration)/d(price) strictly inside the ramp."""
        return 1.0 - self.deduction / (self.upper - self.lower)

    @property
    def policy_id(self) -> str:
        return f"ramp:{_num(self.lower)}:{_num(self.upper)}:{_num(self.deduction)}"


@dataclass(frozen=True)
class CrisisRamp:
    """Excess-cost ramp; ``excess`` is the hour's maximum deduction.

    The ramp runs from ``lower`` to ``lower + phi * excess``. Build one per
    day (or hour) from fuel prices with :func:`co2proxy.crisis.hour_policy`.
    """

    lower: float
    phi: float
    reference: ReferenceCost | None = None
    excess: float = 0.0

    def __post_init__(self) -> None:
        _floats(self, "lower", "phi", "excess")
        if self.phi < 1:
            raise PolicyError(f"ramp-width factor phi must be >= 1, got {self.phi}")
        if self.excess < 0:
            raise PolicyError(f"excess-cost deduction must be >= 0, got {self.excess}")

    @property
    def deduction(self) -> float:
        return self.excess

    @property
    def upper(self) -> float:
        return self.lower + self.phi * self.excess

    @property
    def slope(self) -> float:
        return 1.0 - 1.0 / self.phi

    @property
    def policy_id(self) -> str:
        return f"crisis:{_num(self.lower)}:{_num(self.phi)}"


DeductionPolicy = Union[NoPolicy, HardThreshold, LinearRamp, CrisisRamp]


def _floats(obj, *names: str) -> None:
    for name in names:
        object.__setattr__(obj, name, float(getattr(obj, name)))


def _num(x: float) -> str:
    return f"{x:g}"


def _ramp(price: float, lower: float, upper: float, delta: float) -> float:
    if price <= lower:
        return 0.0
    if price >= upper:
        return delta
    return delta * (price - lower) / (upper - lower)


def deduction(policy: DeductionPolicy, price: float) -> float:
    """Amount subtracted from the eligible remuneration at clearing price ``price``."""
    if isinstance(policy, NoPolicy):
        return 0.0
    if isinstance(policy, HardThreshold):
        return policy.deduction if price >= policy.threshold else 0.0
    if isinstance(policy, LinearRamp):
        return _ramp(price, policy.lower, policy.upper, policy.deduction)
    if isinstance(policy, CrisisRamp):
        if policy.excess == 0:
            return 0.0
        return _ramp(price, policy.lower, policy.upper, policy.excess)
    raise PolicyError(f"unsupported policy {policy!r}")


def remuneration(policy: DeductionPolicy, price: float) -> float:
    return price - deduction(policy, price)


def carbon_proxy_delta(alpha: float, intensity_el: float, carbon_price: float) -> float:
    """Deduction tied to the carbon cost of a reference plant: alpha * e * p_CO2."""
    if not 0.0 <= alpha <= 1.0:
        raise PolicyError(f"alpha must lie in [0, 1], got {alpha}")
    if intensity_el < 0:
        raise PolicyError("emission intensity must be >= 0")
    if carbon_price < 0:
        raise PolicyError("carbon price must be >= 0")
    return alpha * intensity_el * carbon_price


def fossil_marginal_cost(
    efficiency: float, fuel_price: float, emission_intensity: float, carbon_price: float
) -> float:
    """(fuel + intensity * carbon) / efficiency, per MWh of electricity."""
    if not efficiency > 0:
        raise PolicyError(f"efficiency must be > 0, got {efficiency}")
    return (fuel_price + emission_intensity * carbon_price) / efficiency


def carbon_cost_share(fuel_price: float, emission_intensity: float, carbon_price: float) -> float:
    """Fraction of fossil marginal cost due to allowances (efficiency cancels)."""
    carbon = emission_intensity * carbon_price
    total = fuel_price + carbon
    if total == 0:
        return 0.0
    return carbon / total


def policies_from_carbon_prices(
    template: HardThreshold | LinearRamp,
    carbon_prices: list[float],
    alpha: float,
    intensity_el: float,
) -> list[HardThreshold | LinearRamp]:
    """One policy per period with the deduction indexed to that period's allowance price."""
    out = []
    for p_co2 in carbon_prices:
        delta = carbon_proxy_delta(alpha, intensity_el, p_co2)
        if isinstance(template, HardThreshold):
            out.append(HardThreshold(template.threshold, delta))
        else:
            out.append(LinearRamp(template.lower, template.upper, delta))
    return out


@dataclass(frozen=True)
class Finding:
    check: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return all(f.passed for f in self.findings)

    def __getitem__(self, check: str) -> Finding:
        for f in self.findings:
            if f.check == check:
                return f
        raise KeyError(check)


def validate_policy(policy: DeductionPolicy, max_eligible_mc: float) -> ValidationReport:
    """Check the parameter conditions that keep eligible units in merit.

    Reports rather than raises. ``threshold_margin`` requires the activation
    price minus the deduction to stay strictly above the highest eligible
    marginal cost; ``ramp_slope`` flags a deduction wider than the ramp.
    """
    findings: list[Finding] = []
    if isinstance(policy, (HardThreshold, LinearRamp)):
        floor = policy.upper if isinstance(policy, LinearRamp) else policy.threshold
        floor -= policy.deduction
        findings.append(
            Finding(
                "threshold_margin",
                floor > max_eligible_mc,
                f"activation price minus deduction = {floor:g} vs max eligible cost {max_eligible_mc:g}",
            )
        )
    if isinstance(policy, LinearRamp):
        width = policy.upper - policy.lower
        findings.append(
            Finding(
                "ramp_slope",
                policy.deduction <= width,
                f"deduction {policy.deduction:g} vs ramp width {width:g} (slope {policy.slope:g})",
            )
        )
    if isinstance(policy, CrisisRamp):
        findings.append(Finding("phi_at_least_one", policy.phi >= 1, f"phi = {policy.phi:g}"))
    return ValidationReport(tuple(findings))


@dataclass(frozen=True)
class SettlementResult:
    exp_base: float
    transfer: float
    exp_new: float
    remuneration: float
    deduction: float
    export_hour: bool = False


def _check_volumes(load: float, eligible_gen: float) -> None:
    if load < 0:
        raise SettlementDataError(f"load must be >= 0, got {load}")
    if eligible_gen < 0:
        raise SettlementDataError(f"eligible generation must be >= 0, got {eligible_gen}")


def settle_hour(
    price: float, load: float, eligible_gen: float, policy: DeductionPolicy
) -> SettlementResult:
    """Two-price settlement of one hour: eligible output is paid ``price - d``."""
    _check_volumes(load, eligible_gen)
    d = deduction(policy, price)
    exp_base = price * load
    transfer = d * eligible_gen
    return SettlementResult(
        exp_base=exp_base,
        transfer=transfer,
        exp_new=exp_base - transfer,
        remuneration=price - d,
        deduction=d,
        export_hour=eligible_gen > load,
    )


def levy_settlement(
    price: float, load: float, eligible_gen: float, policy: DeductionPolicy
) -> SettlementResult:
    """Levy route: everyone is paid ``price``, eligible units pay a levy that is rebated.

    Consumers pay the wholesale bill ``price * load`` and receive the levy
    back, so their net outlay matches :func:`settle_hour` exactly.
    """
    _check_volumes(load, eligible_gen)
    wholesale_bill = price * load
    levy_rate = deduction(policy, price)
    levy = levy_rate * eligible_gen
    rebate = levy
    net_bill = wholesale_bill - rebate
    return SettlementResult(
        exp_base=wholesale_bill,
        transfer=rebate,
        exp_new=net_bill,
        remuneration=price - levy_rate,
        deduction=levy_rate,
        export_hour=eligible_gen > load,
    )


def windfall_tax_marginal_revenue(price: float, benchmark: float, rate: float) -> float:
    """Hourly stylisation of a revenue-skimming windfall tax above ``benchmark``."""
    if not 0.0 <= rate <= 1.0:
        raise PolicyError(f"tax rate must lie in [0, 1], got {rate}")
    if price < benchmark:
        return price
    return benchmark + (1.0 - rate) * (price - benchmark)


def parse_policy(text: str) -> DeductionPolicy:
    """Parse ``none``, ``hard:<threshold>:<deduction>`` or ``ramp:<lower>:<upper>:<deduction>``."""
    parts = text.strip().split(":")
    kind = parts[0].lower()
    try:
        nums = [float(x) for x in parts[1:]]
    except ValueError:
        raise PolicyError(f"bad number in policy {text!r}") from None
    if kind == "none" and not nums:
        return NoPolicy()
    if kind == "hard" and len(nums) == 2:
        return HardThreshold(*nums)
    if kind == "ramp" and len(nums) == 3:
        return LinearRamp(*nums)
    raise PolicyError(
        f"cannot parse policy {text!r}; expected none, hard:<p_bar>:<delta> or ramp:<p_low>:<p_bar>:<delta>"
    )

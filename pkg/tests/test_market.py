import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from co2proxy.market import (
    InfeasibleClearingError,
    Inelastic,
    LinearDemand,
    Offer,
    Portfolio,
    ScenarioFamily,
    SupplyCurve,
    UndefinedPortfolioError,
    apply_carbon_cost,
    best_response_threshold_push,
    bunching_scan,
    bunching_statistic,
    clear,
    eligible_profit,
    manipulation_gain,
    offer_grid,
    pass_through,
)
from co2proxy.settlement import HardThreshold, LinearRamp, NoPolicy, deduction
from co2proxy.technology import DEFAULT_INTENSITIES, Technology
from market_oracle import best_response_brute, clear_brute, random_instance

WIND, NUC, CCGT, PEAK = Technology.WIND_ONSHORE, Technology.NUCLEAR, Technology.GAS_CCGT, Technology.GAS_PEAKER
HT = HardThreshold(100, 28)
RAMP = LinearRamp(72, 100, 28)


def curve(*steps, tech=CCGT, owner="x"):
    return SupplyCurve(tuple(Offer(owner, tech, q, p) for q, p in steps))


def push_instance():
    offers = (
        Offer("s", WIND, 70, 0, name="wind"),
        Offer("s", CCGT, 30, 90, cost=90),
        Offer("s", PEAK, 10, 110, cost=110),
        Offer("n", NUC, 50, 20),
        Offer("a", CCGT, 20, 99, cost=99),
        Offer("b", PEAK, 50, 105, cost=105),
    )
    return SupplyCurve(offers), Inelastic(180)


class TestClear:
    def test_marginal_step_partially_accepted(self):
        out = clear(curve((50, 10), (50, 30), (50, 60)), Inelastic(120))
        assert (out.price, out.quantity) == (60, 120)
        assert out.accepted_quantity(2) == 20
        assert out.marginal == 2

    def test_single_step_exhausted(self):
        out = clear(curve((100, 20)), Inelastic(100))
        assert (out.price, out.quantity) == (20, 100)

    def test_linear_demand(self):
        out = clear(curve((50, 10), (50, 30)), LinearDemand(100, 1))
        assert (out.price, out.quantity) == (30, 70)

    def test_linear_demand_on_vertical_segment(self):
        out = clear(curve((50, 10), (50, 30)), LinearDemand(80, 1))
        assert (out.price, out.quantity) == (30, 50)
        out = clear(curve((50, 10), (50, 30)), LinearDemand(70, 1))
        assert (out.price, out.quantity) == (20, 50)
        assert out.price_set_by_demand

    def test_infeasible(self):
        with pytest.raises(InfeasibleClearingError):
            clear(curve((10, 1)), Inelastic(11))

    def test_ties_follow_input_order(self):
        supply = SupplyCurve((Offer("first", CCGT, 10, 50), Offer("second", CCGT, 10, 50)))
        out = clear(supply, Inelastic(15))
        assert out.accepted == ((0, 10), (1, 5))
        assert out.marginal_offer.owner == "second"

    def test_accepted_sums_to_quantity(self):
        out = clear(curve((50, 10), (50, 30), (50, 60)), Inelastic(120))
        assert sum(q for _, q in out.accepted) == out.quantity

    def test_policy_does_not_change_dispatch(self):
        # clearing never sees the policy; profits are computed afterwards
        supply, demand = push_instance()
        assert clear(supply, demand).accepted == clear(supply, demand).accepted


class TestCarbonCost:
    def test_gas_offer(self):
        shifted = apply_carbon_cost(curve((10, 30)), 80, {CCGT: 0.36})
        assert shifted.offers[0].price == pytest.approx(58.8)

    def test_wind_unchanged(self):
        assert apply_carbon_cost(curve((10, 0), tech=WIND), 80, {WIND: 0}).offers[0].price == 0

    def test_zero_carbon_price(self):
        supply = SupplyCurve((Offer("a", WIND, 10, 0), Offer("b", CCGT, 5, 40)))
        shifted = apply_carbon_cost(supply, 0, DEFAULT_INTENSITIES)
        assert [(o.owner, o.price, o.quantity) for o in shifted.offers] == [
            (o.owner, o.price, o.quantity) for o in supply.offers
        ]

    def test_unknown_technology(self):
        with pytest.raises(KeyError):
            apply_carbon_cost(curve((10, 30)), 80, {WIND: 0})

    def test_merit_order_can_switch(self):
        supply = SupplyCurve((Offer("coal", Technology.LIGNITE, 10, 20), Offer("gas", CCGT, 10, 40)))
        shifted = apply_carbon_cost(supply, 100, DEFAULT_INTENSITIES)
        assert [o.owner for o in shifted.offers] == ["gas", "coal"]


class TestPassThrough:
    def test_fossil_marginal(self):
        supply = SupplyCurve((Offer("w", WIND, 50, 0), Offer("g", CCGT, 100, 40)))
        assert pass_through(supply, Inelastic(100), DEFAULT_INTENSITIES, 80, 1.0) == pytest.approx(1.0)

    def test_renewable_marginal(self):
        supply = SupplyCurve((Offer("w", WIND, 150, 5), Offer("g", CCGT, 100, 40)))
        assert pass_through(supply, Inelastic(100), DEFAULT_INTENSITIES, 80, 1.0) == 0

    def test_linear_demand_switches_marginal_unit(self):
        supply = SupplyCurve((Offer("w", WIND, 50, 45), Offer("g", CCGT, 50, 40)))
        intens = {WIND: 0.0, CCGT: 0.36}
        demand = LinearDemand(100, 1)
        shift = 20.0
        rate = pass_through(supply, demand, intens, 0, shift)
        # brute-force re-clearing of the shifted curve
        before = clear_brute([(50, 45), (50, 40)], ("linear", 100, 1))[0]
        after = clear_brute([(50, 45), (50, 60)], ("linear", 100, 1))[0]
        assert rate == pytest.approx((after - before) / shift)
        assert 0 < rate < 1

    def test_shift_must_be_positive(self):
        with pytest.raises(ValueError):
            pass_through(curve((10, 30)), Inelastic(5), {CCGT: 0.36}, 80, 0)


class TestProfit:
    def test_jump_at_threshold(self):
        above = eligible_profit(101, HT, 100)
        below = eligible_profit(99, HT, 100)
        assert below - above == pytest.approx(2600)

    def test_continuous_without_deduction(self):
        pol = HardThreshold(100, 0)
        assert eligible_profit(100, pol, 100) - eligible_profit(99.999, pol, 100) == pytest.approx(0.1)

    def test_ramp_has_no_jump(self):
        h, q = 0.01, 100
        for k in range(0, 20000):
            p = 50 + k * 0.005
            assert abs(eligible_profit(p + h, RAMP, q) - eligible_profit(p, RAMP, q)) <= h * q + 1e-9


class TestManipulation:
    def test_critical_drop(self):
        port = Portfolio("s", 70, 30)
        assert port.critical_price_drop * 28 == pytest.approx(19.6)
        assert manipulation_gain(19.5, 28, port)[1]
        assert not manipulation_gain(19.7, 28, port)[1]

    def test_no_eligible_never_profitable(self):
        gain, ok = manipulation_gain(1, 28, Portfolio("s", 0, 30))
        assert gain == -30 and not ok

    def test_no_fossil(self):
        assert manipulation_gain(27.9, 28, Portfolio("s", 10, 0))[1]

    def test_empty_portfolio(self):
        with pytest.raises(UndefinedPortfolioError):
            manipulation_gain(1, 28, Portfolio("s", 0, 0))

    def test_drop_must_be_positive(self):
        with pytest.raises(ValueError):
            manipulation_gain(0, 28, Portfolio("s", 1, 1))


class TestBestResponse:
    def test_threshold_push_found(self):
        supply, demand = push_instance()
        rep = best_response_threshold_push(supply, demand, HT, "s")
        assert rep.baseline_price == 105
        assert rep.best_price == 99.5
        assert rep.profitable and rep.threshold_push
        # matches the portfolio formula with the realised drop and volumes
        drop = rep.baseline_price - rep.best_price
        gain_formula = (28 - drop) * 70 - drop * 30
        peaker_loss = (110 - 99.5) * 10
        assert rep.gain == pytest.approx(gain_formula - peaker_loss)

    def test_ramp_removes_the_incentive(self):
        supply, demand = push_instance()
        rep = best_response_threshold_push(supply, demand, RAMP, "s")
        assert not rep.profitable and not rep.threshold_push
        assert rep.best_price == rep.baseline_price

    def test_fossil_only_owner_stays_truthful(self):
        supply, demand = push_instance()
        rep = best_response_threshold_push(supply, demand, HT, "a")
        assert not rep.profitable

    def test_unknown_owner(self):
        supply, demand = push_instance()
        with pytest.raises(ValueError, match="no offers"):
            best_response_threshold_push(supply, demand, HT, "nobody")

    def test_coordinate_ascent_fallback(self):
        supply, demand = push_instance()
        rep = best_response_threshold_push(supply, demand, HT, "s", max_evaluations=10)
        assert not rep.exhaustive
        assert rep.threshold_push

    def test_offer_grid(self):
        assert offer_grid(1.2, 0.5) == [1.2, 0.7, 0.19999999999999996, 0.0]
        assert offer_grid(0, 0.5) == [0]


def test_best_response_matches_exhaustive_oracle():
    rng = random.Random(11)
    eligible = {"WindOnshore", "Nuclear"}
    for _ in range(25):
        offers, bids, demand = random_instance(rng)
        pol = HardThreshold(rng.choice([10.0, 20.0, 25.0]), 28.0)
        supply = SupplyCurve(tuple(Offer(o, t, q, b, cost=c) for (o, t, q, c), b in zip(offers, bids)))
        rep = best_response_threshold_push(supply, Inelastic(demand), pol, "s", 0.5)
        ref_profit, _ = best_response_brute(
            offers, bids, ("inelastic", demand), "s", lambda p: deduction(pol, p), eligible, 0.5
        )
        assert rep.best_profit == pytest.approx(ref_profit, abs=1e-9)


class TestBunching:
    def test_statistic(self):
        assert bunching_statistic([98.5, 99, 100, 150], 100) == pytest.approx(0.25)

    def test_scan_requires_reference_for_no_policy(self):
        scen = ScenarioFamily().generate(2, 0)
        with pytest.raises(ValueError, match="reference"):
            bunching_scan(scen, NoPolicy(), "strategic")

    def test_scan_is_deterministic(self):
        a = bunching_scan(ScenarioFamily().generate(30, 5), HT, "strategic")
        b = bunching_scan(ScenarioFamily().generate(30, 5), HT, "strategic")
        assert a == b

    def test_hard_threshold_bunches(self):
        res = bunching_scan(ScenarioFamily().generate(150, 3), HT, "strategic")
        assert res.statistic > 0.10 and res.pushes > 0

    def test_no_policy_and_ramp_do_not(self):
        scen = ScenarioFamily().generate(150, 3)
        assert abs(bunching_scan(scen, NoPolicy(), "strategic", reference_price=100).statistic) < 0.05
        assert bunching_scan(scen, RAMP, "strategic").statistic < 0.02

    def test_histogram_counts_everything(self):
        res = bunching_scan(ScenarioFamily().generate(40, 1), HT, "strategic")
        hist = res.histogram()
        assert sum(c for _, _, c in hist) == 40
        assert all(r - l == 1.0 for l, r, _ in hist)


# --- properties ---------------------------------------------------------------

step_lists = st.lists(st.tuples(st.integers(1, 50), st.integers(0, 120)), min_size=1, max_size=20)


@settings(max_examples=300, deadline=None)
@given(step_lists, st.integers(1, 1000))
def test_clear_inelastic_matches_brute_force(steps, d):
    supply = curve(*[(float(q), float(p)) for q, p in steps])
    ref = clear_brute([(float(q), float(p)) for q, p in steps], ("inelastic", float(d)))
    if ref is None:
        with pytest.raises(InfeasibleClearingError):
            clear(supply, Inelastic(d))
    else:
        out = clear(supply, Inelastic(d))
        assert (out.price, out.quantity) == ref


@settings(max_examples=300, deadline=None)
@given(step_lists, st.integers(1, 200), st.sampled_from([0.0, 0.25, 0.5, 1.0, 2.0, 4.0]))
def test_clear_linear_matches_brute_force(steps, a, b):
    fl = [(float(q), float(p)) for q, p in steps]
    out = clear(curve(*fl), LinearDemand(float(a), b))
    assert (out.price, out.quantity) == clear_brute(fl, ("linear", float(a), b))


@settings(max_examples=300)
@given(st.floats(0.01, 100), st.floats(0, 100), st.floats(0, 1e4), st.floats(0, 1e4))
def test_manipulation_condition_equivalence(dp, delta, r, f):
    if r + f == 0:
        return
    gain, ok = manipulation_gain(dp, delta, Portfolio("s", r, f))
    assert ok == ((delta - dp) * r - dp * f > 0)
    assert gain == (delta - dp) * r - dp * f


@settings(max_examples=50, deadline=None)
@given(st.randoms(use_true_random=False))
def test_profitable_deviation_never_raises_price(rnd):
    offers, bids, demand = random_instance(rnd)
    supply = SupplyCurve(tuple(Offer(o, t, q, b, cost=c) for (o, t, q, c), b in zip(offers, bids)))
    rep = best_response_threshold_push(supply, Inelastic(demand), HardThreshold(20, 28), "s", 1.0)
    if rep.profitable:
        assert rep.best_price <= rep.baseline_price


@given(st.floats(0, 100), st.floats(1, 100), st.floats(0, 1), st.floats(0.02, 0.98))
def test_ramp_slope_in_simulation(lower, width, frac, at):
    ramp = LinearRamp(lower, lower + width, frac * (lower + width - lower))
    p = lower + at * width
    h = 1e-4 * width
    slope = (eligible_profit(p + h, ramp, 1) - eligible_profit(p - h, ramp, 1)) / (2 * h)
    assert slope == pytest.approx(ramp.slope, abs=1e-6)

import math
import warnings
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from co2proxy.panel import HourlyRecord, Panel
from co2proxy.quant import (
    EmptyPanelError,
    UnsupportedPolicyError,
    average_reduction_identity,
    block_decomposition,
    compare_ramp_vs_threshold,
    format_sensitivity_table,
    quantify,
    sensitivity_grid,
    technology_decomposition,
)
from co2proxy.settlement import DeductionSlopeWarning, HardThreshold, LinearRamp, NoPolicy, PolicyError
from co2proxy.technology import Technology

T0 = datetime(2025, 1, 15, tzinfo=timezone.utc)
HT = HardThreshold(100, 28)
WIND, SOLAR, HYDRO, GAS = (
    Technology.WIND_ONSHORE,
    Technology.SOLAR,
    Technology.HYDRO_RUN_OF_RIVER,
    Technology.GAS_CCGT,
)


def panel(rows, tz="UTC", start=T0):
    """rows: (price, load, {tech: MWh}) per consecutive hour."""
    recs = [
        HourlyRecord(start + timedelta(hours=i), p, q, gen, zone="AT") for i, (p, q, gen) in enumerate(rows)
    ]
    return Panel.from_records("AT", recs, tz=tz)


TOY = panel([(158, 100, {WIND: 60}), (90, 100, {WIND: 60})])


class TestQuantify:
    def test_toy_panel(self):
        rep = quantify(TOY, HT)
        assert (rep.exp_base, rep.transfer, rep.exp_new) == (24800, 1680, 23120)
        assert rep.avg_price_base == 124
        assert rep.avg_price_new == pytest.approx(115.6)
        assert rep.activated_hours == 1
        assert rep.total_load == 200

    def test_no_policy(self):
        rep = quantify(TOY, NoPolicy())
        assert rep.exp_new == rep.exp_base and rep.reduction_pct == 0

    def test_empty_panel(self):
        with pytest.raises(EmptyPanelError):
            quantify(Panel("AT", ()), HT)

    def test_zero_load(self):
        with pytest.raises(EmptyPanelError):
            quantify(panel([(150, 0, {WIND: 10})]), HT)

    def test_per_hour_policies(self):
        rep = quantify(TOY, [HardThreshold(100, 10), HardThreshold(80, 20)])
        assert rep.transfer == 10 * 60 + 20 * 60
        assert rep.policy_id == "per-hour"

    def test_per_hour_policy_count(self):
        with pytest.raises(ValueError):
            quantify(TOY, [HT])

    def test_export_hours_counted(self):
        assert quantify(panel([(150, 10, {WIND: 40})]), HT).export_hours == 1

    def test_pumped_storage_switch(self):
        p = panel([(150, 100, {WIND: 10, Technology.PUMPED_STORAGE: 20})])
        from co2proxy.technology import EligibilitySet

        assert quantify(p, HT).transfer == 280
        assert quantify(p, HT, EligibilitySet().with_pumped_storage()).transfer == 840


class TestIdentity:
    def test_toy(self):
        assert average_reduction_identity(TOY, HT) == pytest.approx(8.4)
        assert quantify(TOY, HT).reduction_abs == pytest.approx(8.4)

    def test_nothing_above_threshold(self):
        assert average_reduction_identity(TOY, HardThreshold(200, 28)) == 0

    def test_zero_deduction(self):
        assert average_reduction_identity(TOY, HardThreshold(100, 0)) == 0

    def test_ramp_unsupported(self):
        with pytest.raises(UnsupportedPolicyError):
            average_reduction_identity(TOY, LinearRamp(72, 100, 28))


class TestTechnologyDecomposition:
    def test_single_hour_shares(self):
        rows = {r.technology: r for r in technology_decomposition(panel([(158, 100, {HYDRO: 40, SOLAR: 20})]), HT)}
        assert rows[HYDRO].share_pct == pytest.approx(200 / 3)
        assert rows[SOLAR].share_pct == pytest.approx(100 / 3)
        assert rows[HYDRO].loss_pct == pytest.approx(100 * 28 / 158)
        assert rows[SOLAR].loss_pct == pytest.approx(17.72, abs=0.01)

    def test_zero_revenue_is_not_applicable(self):
        rows = {r.technology: r for r in technology_decomposition(TOY, HT)}
        assert rows[SOLAR].loss_pct is None

    def test_no_transfer_means_no_shares(self):
        rows = technology_decomposition(TOY, NoPolicy())
        assert all(r.share_pct is None for r in rows)


class TestBlocks:
    def test_activated_hour_lands_in_its_local_block(self):
        rows = [(50, 100, {WIND: 10})] * 24
        rows[16] = (150, 100, {WIND: 10})  # 16:00 UTC = 17:00 Vienna in winter
        blocks = block_decomposition(panel(rows, tz="Europe/Vienna"), HT)
        moved = {b.label: b.transfer for b in blocks}
        assert moved["16-19"] == 280
        assert sum(moved.values()) == 280

    def test_uniform_panel_is_symmetric(self):
        blocks = block_decomposition(panel([(120, 100, {WIND: 30})] * 48), HT)
        assert len({b.reduction_pct for b in blocks}) == 1

    @pytest.mark.parametrize("size", [5, 0, -4])
    def test_invalid_block_size(self, size):
        with pytest.raises(PolicyError, match="divide 24"):
            block_decomposition(TOY, HT, block_hours=size)

    def test_other_block_sizes(self):
        assert len(block_decomposition(TOY, HT, block_hours=6)) == 4

    def test_empty_block_has_no_percentage(self):
        assert block_decomposition(TOY, HT)[5].reduction_pct is None


class TestSensitivity:
    def test_shape_and_order(self):
        rows = sensitivity_grid(TOY, [80, 90, 100, 110], [23, 28, 33])
        assert len(rows) == 12
        assert [(r.threshold, r.deduction) for r in rows[:4]] == [(80, 23), (80, 28), (80, 33), (90, 23)]

    def test_zero_deduction_column(self):
        assert all(r.reduction_pct == 0 for r in sensitivity_grid(TOY, [80, 100], [0]))

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            sensitivity_grid(TOY, [], [28])

    def test_table_layout(self):
        text = format_sensitivity_table(sensitivity_grid(TOY, [80, 100], [23, 28]))
        lines = text.splitlines()
        assert lines[0] == "AT"
        assert "(d=23)" in lines[1] and "(d=28)" in lines[1]
        assert lines[2].split()[0] == "80"


class TestRampComparison:
    def test_hour_inside_ramp(self):
        rows = compare_ramp_vs_threshold(panel([(90, 100, {WIND: 60})]), HT, LinearRamp(72, 100, 28))
        ht, lr = rows
        assert (ht.policy, lr.policy) == ("HT", "LR")
        assert ht.reduction_abs == 0
        assert lr.reduction_abs == pytest.approx(18 * 60)

    def test_degenerate_ramp_matches_threshold(self):
        eps = 1e-6
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DeductionSlopeWarning)
            ramp = LinearRamp(100 - eps, 100, 28)
        p = panel([(158, 100, {WIND: 60}), (90, 100, {WIND: 60}), (99.99, 100, {WIND: 60})])
        ht, lr = compare_ramp_vs_threshold(p, HT, ramp)
        assert lr.reduction_abs == pytest.approx(ht.reduction_abs)

    def test_all_below_ramp(self):
        rows = compare_ramp_vs_threshold(panel([(50, 100, {WIND: 60})]), HT, LinearRamp(72, 100, 28))
        assert all(r.reduction_abs == 0 for r in rows)


# --- properties ---------------------------------------------------------------

hours = st.lists(
    st.tuples(
        st.floats(-50, 400),
        st.floats(0, 1000),
        st.floats(0, 500),
        st.floats(0, 500),
        st.floats(0, 500),
    ),
    min_size=1,
    max_size=60,
).filter(lambda rows: sum(r[1] for r in rows) > 0)


def build(rows):
    return panel([(p, q, {WIND: w, HYDRO: h, GAS: g}) for p, q, w, h, g in rows], tz="Europe/Vienna")


@settings(max_examples=150, deadline=None)
@given(hours, st.floats(0, 200), st.floats(0, 60))
def test_aggregation_consistency(rows, th, de):
    p = build(rows)
    pol = HardThreshold(th, de)
    rep = quantify(p, pol)
    assert rep.exp_new == pytest.approx(rep.exp_base - rep.transfer, abs=1e-6)
    assert sum(b.transfer for b in rep.blocks) == pytest.approx(rep.transfer, abs=1e-6)
    assert sum(b.exp_base for b in rep.blocks) == pytest.approx(rep.exp_base, abs=1e-6)
    assert sum(t.transfer for t in rep.technologies) == pytest.approx(rep.transfer, abs=1e-6)
    shares = [t.share_pct for t in rep.technologies if t.share_pct is not None]
    if shares:
        assert sum(shares) == pytest.approx(100, abs=0.1)
    identity = average_reduction_identity(p, pol)
    assert math.isclose(identity, rep.reduction_abs, rel_tol=1e-9, abs_tol=1e-9)


@settings(max_examples=100, deadline=None)
@given(hours, st.floats(0, 200), st.floats(0, 100), st.floats(0, 60), st.floats(0, 60))
def test_reduction_monotone(rows, th1, th2, d1, d2):
    # the percentage is only ordered when base expenditure is positive
    rows = [(abs(r[0]),) + r[1:] for r in rows]
    p = build(rows)
    lo_th, hi_th = sorted((th1, th2))
    lo_d, hi_d = sorted((d1, d2))
    assert quantify(p, HardThreshold(hi_th, lo_d)).reduction_pct <= quantify(p, HardThreshold(lo_th, lo_d)).reduction_pct
    assert quantify(p, HardThreshold(lo_th, lo_d)).reduction_pct <= quantify(p, HardThreshold(lo_th, hi_d)).reduction_pct


@settings(max_examples=100, deadline=None)
@given(hours, st.floats(0, 100), st.floats(1, 100), st.floats(0, 1))
def test_ramp_transfers_at_least_threshold(rows, lower, width, frac):
    p = build(rows)
    ramp = LinearRamp(lower, lower + width, frac * width)
    assert quantify(p, ramp).transfer >= quantify(p, HardThreshold(ramp.upper, ramp.deduction)).transfer


@settings(max_examples=30, deadline=None)
@given(hours, st.integers(2, 8))
def test_worker_count_is_irrelevant(rows, workers):
    p = build(rows)
    assert quantify(p, HT, workers=workers) == quantify(p, HT, workers=1)

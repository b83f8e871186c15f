"""Command-line entry point.

Exit codes: 0 success, 1 data or computation error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

from co2proxy import crisis as crisis_mod
from co2proxy import market, quant
from co2proxy.panel import IngestError, PanelSchema, ingest_panel
from co2proxy.settlement import (
    HardThreshold,
    LinearRamp,
    NoPolicy,
    PolicyError,
    ReferenceCost,
    parse_policy,
    settle_hour,
)
from co2proxy.technology import EligibilitySet, Technology

log = logging.getLogger("co2proxy")

REPORT_COLUMNS = [
    "zone",
    "policy_id",
    "exp_base_eur",
    "transfer_eur",
    "exp_new_eur",
    "avg_price_base",
    "avg_price_new",
    "reduction_pct",
]


class CliDataError(Exception):
    pass


def _policy_arg(text: str):
    try:
        return parse_policy(text)
    except PolicyError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _ramp_arg(text: str) -> LinearRamp:
    return _policy_arg("ramp:" + text)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _fmt(x: float | int | str | None) -> str:
    """Full-precision, platform-stable text for CSV cells."""
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass(frozen=True)
class Display:
    """Rounding for printed summaries; CSV output always keeps full precision."""

    price_decimals: int = 1
    pct_decimals: int = 2
    money_sig: int = 3

    @classmethod
    def from_config(cls, config: dict) -> "Display":
        raw = config.get("display", {})
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise CliDataError(f"unknown display settings: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in raw.items()})

    def price(self, x: float | None) -> str:
        return "n/a" if x is None else f"{x:.{self.price_decimals}f}"

    def pct(self, x: float | None) -> str:
        return "n/a" if x is None else f"{x:.{self.pct_decimals}f}%"

    def money(self, eur: float) -> str:
        return f"{eur / 1e6:.{self.money_sig}g} M EUR"


DISPLAY = Display()


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliDataError(f"cannot read config {path}: {exc}") from None


def _eligibility(config: dict, include_pumped_storage: bool = False) -> EligibilitySet:
    techs = config.get("eligibility")
    elig = EligibilitySet(frozenset(Technology.parse(t) for t in techs)) if techs else EligibilitySet()
    if include_pumped_storage:
        elig = elig.with_pumped_storage()
    return elig


def _timezone_for(config: dict, zone: str, override: str | None):
    if override:
        return override
    tz = config.get("timezone")
    if isinstance(tz, dict):
        return tz.get(zone)
    return tz


# --- settle -----------------------------------------------------------------


def cmd_settle(args: argparse.Namespace) -> int:
    res = settle_hour(args.price, args.load, args.eligible_gen, args.policy)
    print(f"policy                 {args.policy.policy_id}")
    print(f"price           EUR/MWh {args.price:.1f}")
    print(f"deduction       EUR/MWh {res.deduction:.1f}")
    print(f"eligible price  EUR/MWh {res.remuneration:.1f}")
    print(f"expenditure base    EUR {res.exp_base:.2f}")
    print(f"transfer            EUR {res.transfer:.2f}")
    print(f"expenditure new     EUR {res.exp_new:.2f}")
    if res.export_hour:
        print("note: eligible generation exceeds load (export hour)")
    print(
        "RESULT "
        + " ".join(
            f"{k}={_fmt(v)}"
            for k, v in (
                ("exp_base", res.exp_base),
                ("transfer", res.transfer),
                ("exp_new", res.exp_new),
                ("remuneration", res.remuneration),
                ("deduction", res.deduction),
            )
        )
    )
    return 0


# --- quantify ---------------------------------------------------------------


def _parse_sensitivity(tokens: Sequence[str]) -> tuple[list[float], list[float]]:
    grid: dict[str, list[float]] = {}
    for token in tokens:
        for part in token.split():
            key, sep, values = part.partition("=")
            if not sep or key not in ("thresholds", "deductions"):
                raise argparse.ArgumentTypeError(f"bad sensitivity token {part!r}")
            try:
                grid[key] = [float(v) for v in values.split(",") if v]
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad number in {part!r}") from None
    if not grid.get("thresholds") or not grid.get("deductions"):
        raise argparse.ArgumentTypeError("sensitivity needs thresholds=... and deductions=...")
    return grid["thresholds"], grid["deductions"]


def _print_report(rep: quant.QuantReport, disp: Display = DISPLAY) -> None:
    print(f"[{rep.zone}] policy {rep.policy_id}")
    print(f"  hours {rep.hours}  coverage {disp.pct(rep.coverage_pct)}  activated {rep.activated_hours}")
    print(f"  total load            {rep.total_load_twh:.3g} TWh")
    print(f"  expenditure base      {disp.money(rep.exp_base)}")
    print(f"  redistributed         {disp.money(rep.transfer)}")
    print(f"  expenditure new       {disp.money(rep.exp_new)}")
    print(f"  avg price base        {disp.price(rep.avg_price_base)} EUR/MWh")
    print(f"  avg price new         {disp.price(rep.avg_price_new)} EUR/MWh")
    print(f"  reduction             {disp.price(rep.reduction_abs)} EUR/MWh ({disp.pct(rep.reduction_pct)})")
    shares = [t for t in rep.technologies if t.share_pct]
    if shares:
        print("  transfer by technology:")
        for t in shares:
            print(
                f"    {t.technology.value:<16} {disp.money(t.transfer):>14}"
                f"  share {disp.pct(t.share_pct):>8}  loss {disp.pct(t.loss_pct)}"
            )
    print("  blocks (local time):")
    for b in rep.blocks:
        print(
            f"    {b.label}  {disp.money(b.exp_base):>14} base  {disp.money(b.transfer):>14} moved"
            f"  {disp.pct(b.reduction_pct)}"
        )


def cmd_quantify(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    if len(args.zone) != len(args.panel):
        raise argparse.ArgumentTypeError("give one --zone per --panel")
    schema = PanelSchema.from_config(config)
    elig = _eligibility(config, args.include_pumped_storage)
    disp = Display.from_config(config)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    report_rows, tech_rows, block_rows, sens_rows, cmp_rows = [], [], [], [], []
    for path, zone in zip(args.panel, args.zone):
        try:
            panel = ingest_panel(path, zone, schema, tz=_timezone_for(config, zone, args.tz))
        except FileNotFoundError:
            raise CliDataError(f"panel file not found: {path}") from None
        policies = [args.policy] + ([args.ramp] if args.ramp else [])
        for policy in policies:
            rep = quant.quantify(panel, policy, elig, workers=args.workers)
            _print_report(rep, disp)
            report_rows.append(
                [rep.zone, rep.policy_id, rep.exp_base, rep.transfer, rep.exp_new,
                 rep.avg_price_base, rep.avg_price_new, rep.reduction_pct]
            )
            for t in rep.technologies:
                tech_rows.append(
                    [rep.zone, rep.policy_id, t.technology.value, t.generation, t.baseline_revenue,
                     t.transfer, t.share_pct, t.loss_pct]
                )
            for b in rep.blocks:
                block_rows.append(
                    [rep.zone, rep.policy_id, b.label, b.hours, b.load, b.exp_base, b.transfer,
                     b.exp_new, b.reduction_pct]
                )
        if args.ramp:
            hard = args.policy if isinstance(args.policy, HardThreshold) else HardThreshold(args.ramp.upper, args.ramp.deduction)
            for row in quant.compare_ramp_vs_threshold(panel, hard, args.ramp, elig):
                cmp_rows.append(
                    [row.zone, row.policy, row.exp_base, row.reduction_abs, row.exp_new,
                     row.reduction_pct, row.avg_price_base, row.avg_price_new]
                )
        if args.sensitivity:
            thresholds, deductions = _parse_sensitivity(args.sensitivity)
            rows = quant.sensitivity_grid(panel, thresholds, deductions, elig)
            sens_rows.extend(rows)

    if sens_rows:
        print(quant.format_sensitivity_table(sens_rows))
    if out:
        _write_csv(out / "report.csv", REPORT_COLUMNS, report_rows)
        _write_csv(
            out / "technology.csv",
            ["zone", "policy_id", "technology", "generation_mwh", "baseline_revenue_eur",
             "transfer_eur", "share_pct", "loss_pct"],
            tech_rows,
        )
        _write_csv(
            out / "blocks.csv",
            ["zone", "policy_id", "block", "hours", "load_mwh", "exp_base_eur", "transfer_eur",
             "exp_new_eur", "reduction_pct"],
            block_rows,
        )
        if sens_rows:
            _write_csv(
                out / "sensitivity.csv",
                ["zone", "threshold", "deduction", "base_price", "new_price", "reduction_pct"],
                [[r.zone, r.threshold, r.deduction, r.base_price, r.new_price, r.reduction_pct] for r in sens_rows],
            )
        if cmp_rows:
            _write_csv(
                out / "comparison.csv",
                ["zone", "policy", "total_exp_base", "reduction_abs", "total_exp_new", "reduction_pct",
                 "avg_price_base", "avg_price_new"],
                cmp_rows,
            )
    return 0


# --- simulate ---------------------------------------------------------------


def load_scenario(path: str | Path) -> dict:
    """Read a JSON scenario: offers, demand, policy, owner, grid_step, seed, family."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliDataError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliDataError(f"scenario {path} is not valid JSON: {exc}") from None
    scen: dict[str, Any] = {
        "policy": parse_policy(raw.get("policy", "none")),
        "owner": raw.get("owner"),
        "grid_step": float(raw.get("grid_step", 0.5)),
        "seed": int(raw.get("seed", 0)),
        "reference_price": raw.get("reference_price"),
        "bunching_threshold": float(raw.get("bunching_threshold", 0.02)),
    }
    if "offers" in raw:
        scen["supply"] = market.SupplyCurve(
            tuple(
                market.Offer(
                    owner=str(o["owner"]),
                    technology=Technology.parse(o["technology"]),
                    quantity=float(o["quantity"]),
                    price=float(o["price"]),
                    cost=None if o.get("cost") is None else float(o["cost"]),
                    name=str(o.get("name", "")),
                )
                for o in raw["offers"]
            )
        )
    if "demand" in raw:
        d = raw["demand"]
        if d.get("type", "inelastic") == "inelastic":
            scen["demand"] = market.Inelastic(float(d["quantity"]))
        else:
            scen["demand"] = market.LinearDemand(float(d["intercept"]), float(d["slope"]))
    known = {f.name for f in fields(market.ScenarioFamily)}
    family = raw.get("family", {})
    unknown = set(family) - known
    if unknown:
        raise CliDataError(f"unknown family parameters: {sorted(unknown)}")
    scen["family"] = market.ScenarioFamily(**family)
    return scen


def cmd_simulate(args: argparse.Namespace) -> int:
    scen = load_scenario(args.scenario)
    config = _load_config(args.config)
    elig = _eligibility(config)
    grid_step = float(config.get("grid_step", scen["grid_step"]))
    policy = args.policy or scen["policy"]
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    if "supply" in scen and "demand" in scen:
        try:
            outcome = market.clear(scen["supply"], scen["demand"])
        except market.InfeasibleClearingError as exc:
            raise CliDataError(f"scenario is infeasible: {exc}") from None
        m = outcome.marginal_offer
        setter = "demand" if m is None else f"{m.owner}/{m.technology.value}"
        print(f"clearing price    {_fmt(outcome.price)} EUR/MWh")
        print(f"cleared quantity  {_fmt(outcome.quantity)} MWh")
        print(f"price set by      {setter}")
        owner = args.best_response or None
        if owner:
            rep = market.best_response_threshold_push(
                scen["supply"], scen["demand"], policy, owner, grid_step, elig
            )
            print(f"best response of {owner!r} under {policy.policy_id}:")
            print(f"  baseline price {_fmt(rep.baseline_price)}  profit {_fmt(rep.baseline_profit)}")
            print(f"  best price     {_fmt(rep.best_price)}  profit {_fmt(rep.best_profit)}")
            print(f"  gain {_fmt(rep.gain)}  profitable {rep.profitable}  threshold push {rep.threshold_push}")
            for idx, price in rep.best_offers:
                off = scen["supply"].offers[idx]
                label = off.name or f"offer {idx}"
                print(f"  {label}: {_fmt(off.price)} -> {_fmt(price)}")
    elif args.best_response:
        raise CliDataError("scenario has no offers/demand for a best-response run")

    if args.bunching_scan:
        family = scen["family"]
        seed = args.seed if args.seed is not None else scen["seed"]
        scenarios = family.generate(args.bunching_scan, seed)
        ref = scen["reference_price"]
        if ref is None and isinstance(policy, NoPolicy):
            ref = 100.0
        res = market.bunching_scan(scenarios, policy, family.owner, grid_step, elig, reference_price=ref)
        verdict = "below" if res.statistic < scen["bunching_threshold"] else "at or above"
        print(
            f"bunching scan: {args.bunching_scan} scenarios, seed {seed}, policy {policy.policy_id}, "
            f"reference {_fmt(res.reference_price)}"
        )
        print(f"  threshold pushes   {res.pushes}")
        print(f"  bunching statistic {res.statistic:.4f} ({verdict} threshold {scen['bunching_threshold']:g})")
        hist = res.histogram()
        if out:
            _write_csv(out / "bunching_histogram.csv", ["bin_left", "bin_right", "count"], hist)
        else:
            print("bin_left,bin_right,count")
            for row in hist:
                print(",".join(_fmt(v) for v in row))
    return 0


# --- crisis -----------------------------------------------------------------


def hour_policy_id(params: crisis_mod.CrisisPolicyParams) -> str:
    return crisis_mod.hour_policy(params, 0.0).policy_id


def cmd_crisis(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    schema = PanelSchema.from_config(config)
    try:
        panel = ingest_panel(args.panel, args.zone, schema, tz=_timezone_for(config, args.zone, args.tz))
        fuel = crisis_mod.load_fuel_series(args.fuel)
    except FileNotFoundError as exc:
        raise CliDataError(f"file not found: {exc.filename}") from None
    elig = _eligibility(config)
    if args.include_coal:
        elig = elig.with_coal()
    params = crisis_mod.CrisisPolicyParams(
        reference=ReferenceCost(args.eta, args.ref_gas, args.e_fuel, args.ref_co2),
        lower=args.p_low,
        phi=args.phi,
        eligibility=elig,
        fixed_carbon=args.fixed_carbon,
    )
    rep = crisis_mod.crisis_quantify(panel, fuel, params)
    weekly = crisis_mod.weekly_series(panel, fuel, params)
    disp = Display.from_config(config)
    policy_id = hour_policy_id(params)
    remun = rep.avg_eligible_remuneration
    print(f"[{rep.zone}] crisis ramp, reference marginal cost {disp.price(params.reference.marginal_cost)} EUR/MWh")
    print(f"  hours {rep.hours}  activated {rep.activated_hours}")
    print(f"  avg wholesale price           {disp.price(rep.avg_wholesale)} EUR/MWh")
    print(f"  avg net consumer expenditure  {disp.price(rep.avg_consumer_expenditure)} EUR/MWh")
    print(f"  reduction                     {disp.pct(rep.reduction_pct)}")
    print(f"  avg eligible remuneration     {disp.price(remun)} EUR/MWh")
    print(f"  redistributed                 {disp.money(rep.transfer)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(
            out / "crisis_report.csv",
            REPORT_COLUMNS + ["avg_eligible_remuneration"],
            [[rep.zone, policy_id, rep.exp_base, rep.transfer, rep.exp_new, rep.avg_wholesale,
              rep.avg_consumer_expenditure, rep.reduction_pct, remun]],
        )
        _write_csv(
            out / "weekly.csv",
            ["iso_week", "avg_wholesale", "avg_eligible_remuneration", "avg_consumer_expenditure"],
            [[w.iso_week, w.avg_wholesale, w.avg_eligible_remuneration, w.avg_consumer_expenditure] for w in weekly],
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="co2proxy", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("settle", help="settle one hour")
    p.add_argument("--price", type=float, required=True)
    p.add_argument("--load", type=float, required=True)
    p.add_argument("--eligible-gen", type=float, required=True)
    p.add_argument("--policy", type=_policy_arg, default=NoPolicy(), help="none | hard:P:D | ramp:L:U:D")
    p.set_defaults(func=cmd_settle)

    p = sub.add_parser("quantify", help="static accounting over hourly panels")
    p.add_argument("--panel", action="append", required=True)
    p.add_argument("--zone", action="append", required=True)
    p.add_argument("--policy", type=_policy_arg, default=HardThreshold(100.0, 28.0))
    p.add_argument("--ramp", type=_ramp_arg, help="L:U:D linear ramp to compare against the hard threshold")
    ps = p.add_mutually_exclusive_group()
    ps.add_argument("--no-pumped-storage", dest="include_pumped_storage", action="store_false")
    ps.add_argument("--include-pumped-storage", dest="include_pumped_storage", action="store_true")
    p.set_defaults(include_pumped_storage=False)
    p.add_argument("--sensitivity", nargs="+", metavar="KEY=V1,V2")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--tz", help="zone-local clock (IANA name)")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.set_defaults(func=cmd_quantify)

    p = sub.add_parser("simulate", help="auction simulator")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", type=_policy_arg, help="override the scenario policy")
    p.add_argument("--best-response", metavar="OWNER")
    p.add_argument("--bunching-scan", type=_positive_int, metavar="N")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("crisis", help="gas-crisis excess-cost variant")
    p.add_argument("--panel", required=True)
    p.add_argument("--fuel", required=True)
    p.add_argument("--zone", default="AT")
    p.add_argument("--ref-gas", type=float, required=True)
    p.add_argument("--ref-co2", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--e-fuel", type=float, required=True)
    p.add_argument("--p-low", type=float, required=True)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--fixed-carbon", action="store_true", help="hold allowance price at the reference level")
    p.add_argument("--include-coal", action="store_true", help="add hard coal and lignite to the eligible set")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--tz")
    p.set_defaults(func=cmd_crisis)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (CliDataError, IngestError, PolicyError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

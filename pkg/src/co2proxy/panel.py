"""Hourly market panels: records, coverage bookkeeping and CSV ingestion."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone, tzinfo
from pathlib import Path
from typing import Iterable, Mapping
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd

from co2proxy.technology import EligibilitySet, Technology, default_technology_map

logger = logging.getLogger(__name__)

ZONE_TIMEZONES = {
    "AT": "Europe/Vienna",
    "DE": "Europe/Berlin",
    "DE_LU": "Europe/Berlin",
    "DE-LU": "Europe/Berlin",
    "ES": "Europe/Madrid",
    "FR": "Europe/Paris",
}


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class HourlyRecord:
    timestamp: datetime
    price: float
    load: float
    generation: Mapping[Technology, float] = field(default_factory=dict)
    zone: str = ""

    def __post_init__(self) -> None:
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamp must be timezone-aware (UTC)")
        if self.load < 0:
            raise ValueError(f"load must be >= 0 at {self.timestamp}")
        for tech, mwh in self.generation.items():
            if mwh < 0:
                raise ValueError(f"negative generation for {tech} at {self.timestamp}")


def eligible_generation(record: HourlyRecord, eligibility: EligibilitySet) -> float:
    total = 0.0
    for tech in eligibility:
        total += record.generation.get(tech, 0.0)
    return total


@dataclass(frozen=True)
class Coverage:
    rows_read: int = 0
    hours_present: int = 0
    hours_expected: int = 0
    rows_dropped: int = 0
    drop_reasons: Mapping[str, int] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    @property
    def coverage_pct(self) -> float:
        if self.hours_expected == 0:
            return 100.0
        return 100.0 * self.hours_present / self.hours_expected


@dataclass(frozen=True)
class Panel:
    zone: str
    records: tuple[HourlyRecord, ...]
    coverage: Coverage = field(default_factory=Coverage)
    tz: tzinfo = timezone.utc

    def __post_init__(self) -> None:
        stamps = [r.timestamp for r in self.records]
        for a, b in zip(stamps, stamps[1:]):
            if not a < b:
                raise ValueError(f"panel timestamps must be strictly increasing ({a} !< {b})")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def local_time(self, record: HourlyRecord) -> datetime:
        return record.timestamp.astimezone(self.tz)

    @classmethod
    def from_records(
        cls, zone: str, records: Iterable[HourlyRecord], tz: tzinfo | str | None = None
    ) -> Panel:
        recs = tuple(sorted(records, key=lambda r: r.timestamp))
        return cls(
            zone=zone,
            records=recs,
            coverage=Coverage(rows_read=len(recs), hours_present=len(recs), hours_expected=len(recs)),
            tz=resolve_timezone(zone, tz),
        )


def resolve_timezone(zone: str, tz: tzinfo | str | float | None = None) -> tzinfo:
    """Zone-local clock used for block and daily grouping.

    ``tz`` may be an IANA name, a fixed offset in hours, or a tzinfo. Without
    one, known bidding zones map to their capital's clock and others to UTC.
    """
    if isinstance(tz, tzinfo):
        return tz
    if isinstance(tz, (int, float)):
        return timezone(timedelta(hours=tz))
    if isinstance(tz, str):
        return ZoneInfo(tz)
    name = ZONE_TIMEZONES.get(zone.upper())
    return ZoneInfo(name) if name else timezone.utc


@dataclass
class PanelSchema:
    """Column names in the input file; ``technology_map`` maps generation columns to tags."""

    timestamp: str = "timestamp"
    price: str = "price"
    load: str = "load"
    technology_map: dict[str, Technology] = field(default_factory=default_technology_map)
    delimiter: str = ","
    max_bad_fraction: float = 0.01

    @classmethod
    def from_config(cls, config: Mapping | None) -> PanelSchema:
        if not config:
            return cls()
        columns = dict(config.get("columns", {}))
        tech_map = default_technology_map()
        for column, tag in config.get("technology_map", {}).items():
            tech_map[column] = Technology.parse(tag)
        return cls(
            timestamp=columns.get("timestamp", "timestamp"),
            price=columns.get("price", "price"),
            load=columns.get("load", "load"),
            technology_map=tech_map,
            delimiter=config.get("delimiter", ","),
            max_bad_fraction=float(config.get("max_bad_fraction", 0.01)),
        )


def ingest_panel(
    source: str | Path,
    zone: str,
    schema: PanelSchema | None = None,
    tz: tzinfo | str | float | None = None,
) -> Panel:
    """Read an hourly or sub-hourly CSV into a :class:`Panel`.

    Sub-hourly rows are aggregated to UTC hours: price by arithmetic mean,
    load and generation by sum. Rows lacking price or load are dropped and
    counted. Unparsable rows above ``schema.max_bad_fraction`` raise
    :class:`IngestError` listing (1-based, header excluded) row numbers.
    """
    schema = schema or PanelSchema()
    try:
        raw = pd.read_csv(source, sep=schema.delimiter, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise IngestError(f"{source}: no records") from None
    if raw.empty:
        raise IngestError(f"{source}: no records")
    for col in (schema.timestamp, schema.price, schema.load):
        if col not in raw.columns:
            raise IngestError(f"{source}: missing required column {col!r}")

    n_rows = len(raw)
    stamps = pd.to_datetime(raw[schema.timestamp].str.strip(), utc=True, errors="coerce", format="ISO8601")
    price = _numeric(raw[schema.price])
    load = _numeric(raw[schema.load])

    gen_cols = {
        col: schema.technology_map[col]
        for col in raw.columns
        if col in schema.technology_map and col not in (schema.timestamp, schema.price, schema.load)
    }
    gen = {col: _numeric(raw[col]) for col in gen_cols}

    bad = stamps.isna().to_numpy() | _garbled(raw[schema.price], price) | _garbled(raw[schema.load], load)
    for col, values in gen.items():
        bad |= _garbled(raw[col], values)
    n_bad = int(bad.sum())
    if n_bad > schema.max_bad_fraction * n_rows:
        rows = np.flatnonzero(bad)[:20] + 1
        raise IngestError(
            f"{source}: {n_bad} of {n_rows} rows unparsable (limit {schema.max_bad_fraction:.2%}); rows "
            + ", ".join(str(r) for r in rows)
        )

    reasons: Counter[str] = Counter()
    if n_bad:
        reasons["unparsable"] += n_bad
    missing_price = ~bad & price.isna().to_numpy()
    missing_load = ~bad & ~missing_price & load.isna().to_numpy()
    negative_load = ~bad & ~missing_price & ~missing_load & (load.fillna(0).to_numpy() < 0)
    reasons["missing price"] += int(missing_price.sum())
    reasons["missing load"] += int(missing_load.sum())
    reasons["negative load"] += int(negative_load.sum())
    keep = ~(bad | missing_price | missing_load | negative_load)

    valid_stamps = stamps[~bad]
    dup = valid_stamps[valid_stamps.duplicated()]
    if len(dup):
        raise IngestError(f"{source}: duplicate timestamps: " + ", ".join(str(t) for t in dup[:10]))

    warn: list[str] = []
    if not gen_cols:
        warn.append("no generation columns recognised; eligible generation is zero")
    techs_found = {t for t in gen_cols.values()}
    missing_techs = sorted(t.value for t in EligibilitySet().technologies - techs_found)
    if gen_cols and missing_techs:
        warn.append("technology columns absent, treated as zero: " + ", ".join(missing_techs))

    frame = pd.DataFrame({"ts": stamps, "price": price, "load": load})
    for col, tech in gen_cols.items():
        values = gen[col]
        n_missing = int((keep & values.isna().to_numpy()).sum())
        if n_missing:
            warn.append(f"{n_missing} missing values in column {col!r} treated as zero")
        negative = keep & (values.fillna(0).to_numpy() < 0)
        if negative.any():
            warn.append(f"{int(negative.sum())} negative values in column {col!r} clipped to zero")
        frame[tech.value] = frame.get(tech.value, 0.0) + values.fillna(0.0).clip(lower=0.0)
    frame = frame[keep]
    if frame.empty:
        raise IngestError(f"{source}: no records left after dropping incomplete rows")

    frame["hour"] = frame["ts"].dt.floor("h")
    agg = {"price": "mean", "load": "sum"}
    tech_columns = sorted({t.value for t in gen_cols.values()})
    agg.update({c: "sum" for c in tech_columns})
    hourly = frame.sort_values("ts", kind="mergesort").groupby("hour", sort=True).agg(agg)

    records = []
    techs = [Technology(c) for c in tech_columns]
    for hour, row in zip(hourly.index, hourly.itertuples(index=False)):
        values = tuple(row)
        generation = {tech: float(v) for tech, v in zip(techs, values[2:])}
        records.append(
            HourlyRecord(
                timestamp=hour.to_pydatetime(),
                price=float(values[0]),
                load=float(values[1]),
                generation=generation,
                zone=zone,
            )
        )

    span = hourly.index[-1] - hourly.index[0]
    expected = int(span / pd.Timedelta(hours=1)) + 1
    for w in warn:
        logger.warning("%s: %s", source, w)
    coverage = Coverage(
        rows_read=n_rows,
        hours_present=len(records),
        hours_expected=expected,
        rows_dropped=int((~keep).sum()),
        drop_reasons={k: v for k, v in reasons.items() if v},
        warnings=tuple(warn),
    )
    return Panel(zone=zone, records=tuple(records), coverage=coverage, tz=resolve_timezone(zone, tz))


def _numeric(column: pd.Series) -> pd.Series:
    stripped = column.str.strip()
    return pd.to_numeric(stripped.where(stripped != "", None), errors="coerce")


def _garbled(text: pd.Series, parsed: pd.Series) -> np.ndarray:
    """Non-empty cells that failed numeric parsing."""
    stripped = text.str.strip()
    nonempty = ~stripped.isin(["", "n/e", "N/A", "NA", "nan", "NaN", "-"])
    return (nonempty & parsed.isna()).to_numpy()

"""Ingestion of Shiller-style monthly market data.

Parses the classic long-run S&P CSV layout (price, dividend, earnings,
CPI, long rate), deflates nominal series to real terms, and derives the
free-cash-flow and cost-of-capital series the valuation layer consumes.

Derivations use the constant-ratio approximations
    fcf  = E * (1 - g / ROIC)
    wacc = wd * (1 - tax) * long_rate + we * E / S
with wd = (D/E)/(1 + D/E) and we = 1/(1 + D/E): the long rate proxies
the after-tax cost of debt and the earnings yield the cost of equity.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator, Optional, Sequence

import numpy as np

from .dates import DEFAULT_EPOCH, format_month, parse_month

if TYPE_CHECKING:  # pragma: no cover
    from .intrinsic import IntrinsicConfig


class IngestError(ValueError):
    """Raised for malformed input data or violated data invariants."""


#: Default header names for the public Shiller ie_data CSV export.
DEFAULT_COLUMNS = {
    "date": "Date",
    "price": "P",
    "dividend": "D",
    "earnings": "E",
    "cpi": "CPI",
    "long_rate": "GS10",
}


@dataclass(frozen=True)
class MarketRecord:
    """One month of market fundamentals.

    `earnings`/`dividend` may be None for months where the source has
    not yet published them; they are flagged, never zero-filled.
    `long_rate` is a fraction per year (0.045 for 4.5%).
    """

    month: int
    nominal_price: float
    cpi: float
    long_rate: float
    earnings: Optional[float] = None
    dividend: Optional[float] = None

    def __post_init__(self) -> None:
        if self.nominal_price <= 0:
            raise IngestError(f"nominal_price must be > 0, got {self.nominal_price}")
        if self.cpi <= 0:
            raise IngestError(f"cpi must be > 0, got {self.cpi}")


class ParsedMarket(Sequence):
    """Date-sorted records plus the indices of rejected raw rows.

    Behaves as a sequence of :class:`MarketRecord`; `rejected_rows`
    holds (row_index, reason) pairs for rows dropped because price or
    CPI could not be parsed.
    """

    def __init__(self, records: list[MarketRecord], rejected_rows: list[tuple[int, str]]):
        self.records = records
        self.rejected_rows = rejected_rows

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __iter__(self) -> Iterator[MarketRecord]:
        return iter(self.records)


def _parse_float(text: str) -> Optional[float]:
    text = text.strip()
    if not text or text.upper() in {"NA", "N/A", "NAN", "NULL"}:
        return None
    try:
        value = float(text)
    except ValueError:
        return None
    if math.isnan(value):
        return None
    return value


def parse_shiller_csv(
    data: bytes | str,
    columns: Optional[dict[str, str]] = None,
    rates_in_percent: bool = True,
    epoch: tuple[int, int] = DEFAULT_EPOCH,
) -> ParsedMarket:
    """Parse a Shiller-layout CSV into monthly records.

    The header row must contain the mapped column names (matched
    case-insensitively); `columns` overrides entries of
    :data:`DEFAULT_COLUMNS`.  Rows whose price or CPI fail to parse are
    rejected and reported by row index; rows violating invariants
    (negative CPI, non-monotone dates) raise :class:`IngestError`.
    With `rates_in_percent`, the long-rate column is divided by 100 on
    ingest (the public data quotes 4.5 for 4.5%/year).
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig")
    colmap = dict(DEFAULT_COLUMNS)
    if columns:
        unknown = set(columns) - set(DEFAULT_COLUMNS)
        if unknown:
            raise IngestError(f"unknown column-map keys: {sorted(unknown)}")
        colmap.update(columns)

    reader = csv.reader(io.StringIO(data))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty input: missing header row") from None
    lookup = {name.strip().lower(): i for i, name in enumerate(header)}
    positions: dict[str, Optional[int]] = {}
    for key, name in colmap.items():
        idx = lookup.get(name.strip().lower())
        if idx is None and key in ("date", "price", "cpi", "long_rate"):
            raise IngestError(f"malformed header: missing column {name!r}")
        positions[key] = idx

    def cell(row: list[str], key: str) -> str:
        idx = positions[key]
        if idx is None or idx >= len(row):
            return ""
        return row[idx]

    records: list[MarketRecord] = []
    rejected: list[tuple[int, str]] = []
    for row_index, row in enumerate(reader, start=1):
        if not any(field.strip() for field in row):
            continue
        date_text = cell(row, "date")
        try:
            month = parse_month(date_text, epoch)
        except ValueError:
            rejected.append((row_index, f"unparseable date {date_text!r}"))
            continue
        price = _parse_float(cell(row, "price"))
        cpi = _parse_float(cell(row, "cpi"))
        if price is None:
            rejected.append((row_index, "unparseable price"))
            continue
        if cpi is None:
            rejected.append((row_index, "unparseable CPI"))
            continue
        if cpi <= 0:
            raise IngestError(f"row {row_index}: CPI must be positive, got {cpi}")
        if price <= 0:
            raise IngestError(f"row {row_index}: price must be positive, got {price}")
        rate = _parse_float(cell(row, "long_rate"))
        if rate is None:
            rejected.append((row_index, "unparseable long rate"))
            continue
        if rates_in_percent:
            rate /= 100.0
        records.append(
            MarketRecord(
                month=month,
                nominal_price=price,
                cpi=cpi,
                long_rate=rate,
                earnings=_parse_float(cell(row, "earnings")),
                dividend=_parse_float(cell(row, "dividend")),
            )
        )

    records.sort(key=lambda r: r.month)
    for prev, cur in zip(records, records[1:]):
        if cur.month == prev.month:
            raise IngestError(f"duplicate month {format_month(cur.month, epoch)}")
    return ParsedMarket(records, rejected)


def deflate(nominal: np.ndarray, cpi: np.ndarray, base_index: int) -> np.ndarray:
    """Convert a nominal series to real terms at the CPI of one position.

    `base_index` addresses a position on the shared axis; the result is
    nominal * cpi[base] / cpi, elementwise.
    """
    nominal = np.asarray(nominal, dtype=float)
    cpi = np.asarray(cpi, dtype=float)
    if nominal.shape != cpi.shape:
        raise ValueError("nominal and cpi series must share the date axis")
    if not -len(cpi) <= base_index < len(cpi):
        raise ValueError(f"base index {base_index} not on the axis")
    base = cpi[base_index]
    if base <= 0:
        raise ValueError("CPI at the base date must be positive")
    return nominal * (base / cpi)


@dataclass
class FundamentalsSeries:
    """Monthly real price, real earnings, free cash flow, and WACC.

    All arrays share the month axis.  `growth` and `roic` record the
    constants under which `fcf` was derived, so the pointwise relation
    fcf = real_earnings * (1 - growth/roic) can be re-checked.
    """

    months: np.ndarray
    real_price: np.ndarray
    real_earnings: np.ndarray
    fcf: np.ndarray
    wacc: np.ndarray
    growth: float
    roic: float
    epoch: tuple[int, int] = DEFAULT_EPOCH

    def __post_init__(self) -> None:
        self.months = np.asarray(self.months, dtype=int)
        for name in ("real_price", "real_earnings", "fcf", "wacc"):
            arr = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, arr)
            if arr.shape != self.months.shape:
                raise ValueError(f"{name} does not share the date axis")
        if len(self.months) > 1 and not np.all(np.diff(self.months) == 1):
            raise ValueError("months must be consecutive and increasing")
        expected = self.real_earnings * (1.0 - self.growth / self.roic)
        if not np.allclose(self.fcf, expected, rtol=1e-12, atol=0.0):
            raise ValueError("fcf is inconsistent with earnings * (1 - g/ROIC)")

    def __len__(self) -> int:
        return len(self.months)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["month", "real_price", "real_earnings", "fcf", "wacc"])
        for i in range(len(self)):
            writer.writerow(
                [
                    format_month(int(self.months[i]), self.epoch),
                    repr(float(self.real_price[i])),
                    repr(float(self.real_earnings[i])),
                    repr(float(self.fcf[i])),
                    repr(float(self.wacc[i])),
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "epoch": list(self.epoch),
            "growth": self.growth,
            "roic": self.roic,
            "months": [format_month(int(m), self.epoch) for m in self.months],
            "real_price": self.real_price.tolist(),
            "real_earnings": self.real_earnings.tolist(),
            "fcf": self.fcf.tolist(),
            "wacc": self.wacc.tolist(),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FundamentalsSeries":
        payload = json.loads(text)
        epoch = tuple(payload["epoch"])
        months = [parse_month(m, epoch) for m in payload["months"]]
        return cls(
            months=np.array(months, dtype=int),
            real_price=np.array(payload["real_price"], dtype=float),
            real_earnings=np.array(payload["real_earnings"], dtype=float),
            fcf=np.array(payload["fcf"], dtype=float),
            wacc=np.array(payload["wacc"], dtype=float),
            growth=payload["growth"],
            roic=payload["roic"],
            epoch=epoch,
        )


def derive_fundamentals(
    records: Sequence[MarketRecord],
    cfg: "IntrinsicConfig",
    base_month: Optional[int] = None,
) -> FundamentalsSeries:
    """Build the valuation inputs from parsed monthly records.

    Leading and trailing months with missing earnings are truncated
    (never extrapolated); interior gaps are an error.  Real series are
    deflated to the CPI at `base_month` (default: the last retained
    month).  WACC weights come from cfg.debt_to_equity; the after-tax
    debt-cost factor is (1 - cfg.tax_rate), default 1 since the long
    rate already proxies the after-tax cost.
    """
    records = sorted(records, key=lambda r: r.month)
    if not records:
        raise IngestError("no records to derive fundamentals from")
    for prev, cur in zip(records, records[1:]):
        if cur.month != prev.month + 1:
            raise IngestError(
                f"records must be consecutive months; gap before {format_month(cur.month)}"
            )

    have_e = [r.earnings is not None for r in records]
    if not any(have_e):
        raise IngestError("no months with earnings data")
    first = have_e.index(True)
    last = len(records) - 1 - have_e[::-1].index(True)
    kept = records[first : last + 1]
    for r in kept:
        if r.earnings is None:
            raise IngestError(f"missing earnings at interior month {format_month(r.month)}")

    months = np.array([r.month for r in kept], dtype=int)
    nominal_price = np.array([r.nominal_price for r in kept], dtype=float)
    earnings = np.array([r.earnings for r in kept], dtype=float)
    cpi = np.array([r.cpi for r in kept], dtype=float)
    long_rate = np.array([r.long_rate for r in kept], dtype=float)

    if base_month is None:
        base_pos = len(kept) - 1
    else:
        hits = np.nonzero(months == base_month)[0]
        if len(hits) == 0:
            raise IngestError(f"base month {format_month(base_month)} not in the retained span")
        base_pos = int(hits[0])

    real_price = deflate(nominal_price, cpi, base_pos)
    real_earnings = deflate(earnings, cpi, base_pos)
    if np.any(real_price <= 0):
        raise IngestError("real price must be positive everywhere")

    d_over_e = cfg.debt_to_equity
    wd = d_over_e / (1.0 + d_over_e)
    we = 1.0 / (1.0 + d_over_e)
    earnings_yield = real_earnings / real_price
    wacc = wd * (1.0 - cfg.tax_rate) * long_rate + we * earnings_yield
    fcf = real_earnings * (1.0 - cfg.growth / cfg.roic)

    return FundamentalsSeries(
        months=months,
        real_price=real_price,
        real_earnings=real_earnings,
        fcf=fcf,
        wacc=wacc,
        growth=cfg.growth,
        roic=cfg.roic,
    )

"""Month-indexed date handling.

All time series in this package live on a monthly axis represented as
integer month indices counted from a configurable epoch (default
January 1871, the start of the classic long-run S&P dataset).  Integer
indices make window arithmetic exact and avoid datetime edge cases.
"""

from __future__ import annotations

import re

DEFAULT_EPOCH = (1871, 1)

_ISO_RE = re.compile(r"^(\d{4})-(\d{1,2})$")
_FRAC_RE = re.compile(r"^(\d{4})\.(\d{1,2})$")


def month_index(year: int, month: int, epoch: tuple[int, int] = DEFAULT_EPOCH) -> int:
    """Index of (year, month) on the monthly axis anchored at `epoch`."""
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range: {month}")
    ey, em = epoch
    return (year - ey) * 12 + (month - em)


def index_to_year_month(idx: int, epoch: tuple[int, int] = DEFAULT_EPOCH) -> tuple[int, int]:
    """Inverse of :func:`month_index`."""
    ey, em = epoch
    total = idx + (em - 1)
    return ey + total // 12, total % 12 + 1


def format_month(idx: int, epoch: tuple[int, int] = DEFAULT_EPOCH) -> str:
    year, month = index_to_year_month(idx, epoch)
    return f"{year:04d}-{month:02d}"


def parse_month(text: str, epoch: tuple[int, int] = DEFAULT_EPOCH) -> int:
    """Parse a month label into a month index.

    Accepts ISO "YYYY-MM" and the fractional-year encoding used by the
    public Shiller spreadsheet, where the fraction is the month number:
    "1871.01" is January and "1871.1" (a float-trimmed "1871.10") is
    October.
    """
    text = text.strip()
    m = _ISO_RE.match(text)
    if m:
        return month_index(int(m.group(1)), int(m.group(2)), epoch)
    m = _FRAC_RE.match(text)
    if m:
        frac = m.group(2)
        # A single trailing "1" is a trimmed ".10": October.
        month = 10 if frac == "1" else int(frac)
        return month_index(int(m.group(1)), month, epoch)
    raise ValueError(f"unrecognized month format: {text!r}")

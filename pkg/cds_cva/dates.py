"""Calendar helpers for dated market snapshots."""

from __future__ import annotations

from datetime import date, datetime
from pathlib import Path
from typing import Any, Optional

DAYS_PER_YEAR = 365.0
DATE_FORMATS = ("%Y-%m-%d", "%d.%m.%Y")


def parse_market_date(raw: Any) -> Optional[date]:
    """Date from a YAML scalar (already a ``date``) or ISO / dd.mm.yyyy text."""
    if isinstance(raw, datetime):
        return raw.date()
    if isinstance(raw, date):
        return raw
    if not isinstance(raw, str) or not raw.strip():
        return None
    text = raw.strip().partition("T")[0]
    for fmt in DATE_FORMATS:
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    return None


def snapshot_date(path: Any) -> Optional[date]:
    """Quote files sit in ``<root>/<yyyy-mm-dd>/<name>.csv``; the folder dates them."""
    return parse_market_date(Path(path).parent.name)


def year_fraction(start: date, end: date) -> float:
    """ACT/365."""
    return (end - start).days / DAYS_PER_YEAR

"""Integer-microsecond time base.

All delays and timestamps are stored as ``int`` microseconds so that sums are
exact and identical on every platform. Config files speak milliseconds with at
most three decimals; anything finer is rejected rather than rounded.
"""

from __future__ import annotations

from decimal import Decimal, InvalidOperation

US_PER_MS = 1000


def ms_to_us(value: float | int | str) -> int:
    """Convert a millisecond quantity to integer microseconds, exactly."""
    if isinstance(value, bool):
        raise ValueError("boolean is not a time value")
    try:
        dec = Decimal(str(value))
    except InvalidOperation as exc:
        raise ValueError(f"not a number: {value!r}") from exc
    if not dec.is_finite():
        raise ValueError(f"not a finite time: {value!r}")
    scaled = dec * US_PER_MS
    if scaled != scaled.to_integral_value():
        raise ValueError(f"{value!r} ms has sub-microsecond precision")
    return int(scaled)


def us_to_ms(us: int) -> float:
    return us / US_PER_MS


def fmt_ms(us: int) -> str:
    """Render microseconds as ms with exactly three decimals."""
    sign = "-" if us < 0 else ""
    us = abs(us)
    return f"{sign}{us // US_PER_MS}.{us % US_PER_MS:03d}"

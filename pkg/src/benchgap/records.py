"""Line-delimited record files (one JSON object per line, UTF-8, LF) and digests.

Every artifact this toolkit reads or writes uses this format, so the helpers
here are deliberately strict: deterministic serialization (sorted keys, no
padding) and errors that carry line numbers.
"""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable

from .errors import BenchgapError


def dumps_record(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_records(path: str | Path, records: Iterable[dict]) -> str:
    """Write records to `path`, one per line. Returns the sha256 of the file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "".join(dumps_record(r) + "\n" for r in records)
    data = text.encode("utf-8")
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_records(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise BenchgapError(f"record file not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BenchgapError(f"{path}:{lineno}: invalid record: {exc}") from exc
            if not isinstance(obj, dict):
                raise BenchgapError(f"{path}:{lineno}: expected an object, got {type(obj).__name__}")
            records.append(obj)
    return records


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def as_fraction(value: Any) -> Fraction:
    """Exact rational from an int, str, Fraction, or float literal.

    Floats are converted through their shortest decimal repr, so a value that
    was written as 64.40 in a table or JSON file becomes exactly 322/5.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise BenchgapError(f"not a numeric value: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise BenchgapError(f"not a numeric value: {value!r}") from exc
    raise BenchgapError(f"not a numeric value: {value!r}")


def round_half_away(value: Fraction | int | float | str, decimals: int = 2) -> str:
    """Render an exact rational as a fixed-point decimal string.

    Ties round away from zero, matching how two-decimal percentages are
    conventionally printed (76.625 -> "76.63", -5.065 -> "-5.07").
    """
    if decimals < 0:
        raise BenchgapError("decimals must be >= 0")
    frac = as_fraction(value)
    scaled = frac * Fraction(10) ** decimals
    n, d = scaled.numerator, scaled.denominator
    negative = n < 0
    whole, rem = divmod(abs(n), d)
    if 2 * rem >= d:
        whole += 1
    digits = str(whole).rjust(decimals + 1, "0")
    out = digits[:-decimals] + "." + digits[-decimals:] if decimals else digits
    return "-" + out if negative and whole != 0 else out

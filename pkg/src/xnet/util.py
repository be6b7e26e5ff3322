"""Small shared helpers: seed derivation, atomic file writes, float text."""

from __future__ import annotations

import os
import zlib
from pathlib import Path

_SEED_MASK = 0x7FFFFFFF


def derive_seed(base: int, *parts: object) -> int:
    """Derive a child seed from a base seed and a label path.

    Deterministic across platforms: crc32 of the repr of each part is
    folded into the base with xor. All stage/worker randomness flows from
    one global seed through this function.
    """
    out = base & _SEED_MASK
    for part in parts:
        out ^= zlib.crc32(repr(part).encode("utf-8"))
    return out & _SEED_MASK


def write_text_atomic(path: str | Path, text: str) -> None:
    """Write text to path via a temp file + rename so readers never see a torn file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def fmt(x: float) -> str:
    """Shortest round-trip decimal text for a float (ints stay readable)."""
    if isinstance(x, float) and x.is_integer() and abs(x) < 1e15:
        return str(int(x)) + ".0"
    return repr(float(x))


def worker_count() -> int:
    """Parallelism cap from XNET_THREADS (default 1 = sequential)."""
    raw = os.environ.get("XNET_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)

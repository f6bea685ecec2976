"""Small shared helpers: low-discrepancy sampling and canonical file output."""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def safe_exp(x: float) -> float:
    """exp(x), saturating to inf instead of raising on overflow.

    The scheme's bounds carry factors like exp(delta^-2) that overflow double
    precision while remaining mathematically valid (they are just enormous).
    """
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def golden_samples(n: int, length: float, offset: float = 0.0) -> np.ndarray:
    """n quasi-uniform points k*phi*length mod length.

    Almost periodic defects need long-range sampling; uniform grids can alias
    against the frequencies, the golden-ratio sequence cannot.
    """
    k = np.arange(1, n + 1, dtype=float)
    return offset + np.mod(k * GOLDEN * length, length)


def dump_json(obj, path) -> None:
    """Canonical JSON: sorted keys, trailing newline (bit-stable on replay)."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()

"""Shared helpers: seeded RNG derivation, stable CSV I/O, weighted quantiles."""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np


def derive_seed(root_seed: int, *parts) -> int:
    """Stable 63-bit seed for a named sub-task of a seeded run."""
    key = f"{root_seed}|" + "|".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(root_seed: int, *parts) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(root_seed, *parts)))


def fmt_cell(value) -> str:
    """Format one CSV cell so that identical values give identical bytes."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with byte-stable float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt_cell(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    return header, rows


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def weighted_quantile(values, weights, q):
    """Step-function quantile of a weighted sample.

    Returns the smallest sorted value whose cumulative normalized weight
    reaches ``q``. ``q`` may be a scalar or array.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample")
    if np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive sum")
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    cw /= cw[-1]
    idx = np.searchsorted(cw, np.asarray(q), side="left")
    idx = np.minimum(idx, v.size - 1)
    return v[idx]


def weighted_mean(values, weights) -> float:
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    w = weights.sum()
    if w <= 0:
        raise ValueError("weights must sum to a positive value")
    return float(values @ weights / w)

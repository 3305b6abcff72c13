"""Run configuration shared by the command-line entry points."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np


def parse_region(text: str):
    """'a,b,c,d,...' -> (lo, hi) with one (lo_i, hi_i) pair per axis."""
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ValueError(f"region must be comma-separated numbers, got {text!r}") from None
    if len(vals) % 2 or not vals:
        raise ValueError("region needs an even number of values (lo,hi per axis)")
    lo, hi = np.array(vals[0::2]), np.array(vals[1::2])
    if np.any(hi <= lo):
        raise ValueError("region bounds must satisfy lo < hi on every axis")
    return lo, hi


def parse_vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ValueError(f"expected comma-separated numbers, got {text!r}") from None


def default_workers() -> int:
    raw = os.environ.get("STARVERIFY_WORKERS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class RunConfig:
    spec_path: str
    region: Optional[list] = None  # flat [lo_1, hi_1, lo_2, hi_2, ...]
    depth: int = 7
    tau: float = 1.0
    horizon: float = 5.0
    samples: int = 10_000
    seed: int = 0
    swap_sides: bool = False
    workers: int = field(default_factory=default_workers)
    out: str = "starverify-out"
    plot_data: bool = False
    point: Optional[list] = None  # periodic: shooting seed
    section: Optional[list] = None  # periodic: section normal (through ``point``)
    windows: int = 50  # birkhoff: number of windows of length 1
    max_boxes: int = 2_000_000

    def bounds(self):
        if self.region is None:
            raise ValueError("--region is required for this command")
        r = np.asarray(self.region, float)
        return r[0::2].copy(), r[1::2].copy()

    def to_json(self) -> dict:
        return asdict(self)

"""Reproducible per-trial random streams.

Every stream is a Philox counter-based generator keyed by
``(master_seed, trial, role)``, so trials are independent, can run in any
order on any thread, and replay identically across runs.
"""

from __future__ import annotations

import zlib

import numpy as np

ROLES = ("data", "init", "noise", "calibration", "dataset")


def _role_id(role: str) -> int:
    # stable across interpreter runs, unlike hash()
    return zlib.crc32(role.encode("utf-8"))


def stream(master_seed: int, trial: int = 0, role: str = "data") -> np.random.Generator:
    """A fresh generator for one (seed, trial, role) triple."""
    if master_seed < 0 or trial < 0:
        raise ValueError("seed and trial index must be nonnegative")
    seq = np.random.SeedSequence([int(master_seed), int(trial), _role_id(role)])
    return np.random.Generator(np.random.Philox(seq))

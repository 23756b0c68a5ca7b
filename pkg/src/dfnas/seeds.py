"""Named seed streams derived from one master seed.

Every random decision in an experiment draws from a stream keyed by component
name (and index where needed), so any one component can be re-seeded without
disturbing the others and every run is reproducible from the master seed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *parts) -> int:
    """Stable 64-bit seed from the master seed and a key path."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for part in parts:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "little")


def stream(master: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *parts))

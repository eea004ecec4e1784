"""Keyed random streams.

Every draw in the simulator comes from a generator keyed by
``(seed, sequence, frame, purpose)``, so results never depend on execution
order or on how work is split across processes.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np


def _key(value) -> int:
    if isinstance(value, (int, np.integer)):
        return int(value) & 0xFFFFFFFF
    return zlib.crc32(str(value).encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    seed: int
    sequence: str | int = 0
    frame: int = -1
    purpose: str = ""

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            int(self.seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(_key(self.sequence), int(self.frame) + 1, _key(self.purpose)),
        )
        return np.random.default_rng(ss)

    def at(self, frame: int | None = None, purpose: str | None = None) -> "RngStream":
        """Derive a sibling stream for another frame and/or purpose."""
        kw = {}
        if frame is not None:
            kw["frame"] = frame
        if purpose is not None:
            kw["purpose"] = purpose
        return replace(self, **kw)

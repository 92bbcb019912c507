"""Stochastic runway service: one draw of the take-off rate per minute with a fractional carry."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .calibration import TakeoffParams

_BATCH = 4096


class RunwayProcess:
    """Runway queue server.

    Each minute with a non-empty queue draws a rate c in {c1, c2, c3},
    adds it to the carried clearance and releases the integer part (capped
    by the queue length). With an empty queue nothing is drawn and the
    carry stays frozen.
    """

    def __init__(self, params: TakeoffParams, rng: Optional[np.random.Generator] = None,
                 carry: float = 0.0):
        if carry < 0:
            raise ValueError("carry must be non-negative")
        self.params = params
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.carry = float(carry)
        self._rates = params.rates
        self._probs = params.probs / params.probs.sum()
        self._buf = np.empty(0)
        self._pos = 0

    def draw(self) -> float:
        if self._pos >= self._buf.size:
            idx = self.rng.choice(3, size=_BATCH, p=self._probs)
            self._buf = self._rates[idx]
            self._pos = 0
        c = self._buf[self._pos]
        self._pos += 1
        return float(c)

    def step(self, queue_len: int, rate: Optional[float] = None) -> int:
        """Advance one minute; returns the number of take-offs cleared.

        ``rate`` forces the drawn rate (used to replay a known sequence).
        """
        if queue_len < 0:
            raise ValueError("queue_len must be non-negative")
        if queue_len == 0:
            return 0
        c = self.draw() if rate is None else float(rate)
        self.carry += c
        # guard against 0.999999... from float accumulation of exact decimal rates
        avail = math.floor(self.carry + 1e-9)
        cleared = min(avail, queue_len)
        self.carry -= cleared
        if self.carry < 0:
            self.carry = 0.0
        return cleared


def saturated_run(params: TakeoffParams, minutes: int, seed: int = 0) -> np.ndarray:
    """Clearances per minute with a queue that never empties."""
    proc = RunwayProcess(params, np.random.default_rng(seed))
    out = np.empty(minutes, dtype=np.int64)
    for i in range(minutes):
        out[i] = proc.step(1 << 30)
    return out

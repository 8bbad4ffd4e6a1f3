"""Classical time-domain repetitive controller with a fixed-length memory loop."""

from __future__ import annotations

import math

import numpy as np

from .design import NonCausalFilter
from .lti import DiscreteStateSpace, SimulationDivergence


class RcBuffer:
    """Delay-line repetitive controller of n_conv samples.

    The learning filter sits at the buffer input: each sample accumulates
    w(k) = w(k - n_conv) + L[e](k) and outputs f(k) = Q[w(k - n_conv + n_l)],
    where n_l is the learning filter's preview, realized by reading that many
    slots ahead so the total loop delay stays n_conv. Output is suppressed for
    the first n_conv samples (one full period of filling).
    """

    def __init__(self, n_conv: int, learn: NonCausalFilter,
                 q: DiscreteStateSpace | None = None):
        if n_conv < 1:
            raise ValueError("n_conv must be >= 1")
        if learn.preview >= n_conv:
            raise ValueError("learning-filter preview must be < n_conv")
        self.n_conv = n_conv
        self.preview = learn.preview
        self.learn = learn.causal.copy()
        self.q = q
        self.buf = np.zeros(n_conv)
        self.k = 0

    def step(self, e: float) -> float:
        if not math.isfinite(e):
            raise SimulationDivergence("non-finite error sample")
        ell = self.learn.step(e)
        idx = self.k % self.n_conv
        w_old = self.buf[idx]
        raw = w_old if self.preview == 0 else self.buf[(idx + self.preview) % self.n_conv]
        self.buf[idx] = w_old + ell
        if self.k < self.n_conv:
            f = 0.0
        elif self.q is not None:
            f = self.q.step(raw)
        else:
            f = float(raw)
        self.k += 1
        return f

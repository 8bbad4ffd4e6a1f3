"""Position-domain repetitive-control memory loop.

Per sample, the controller records the (preview-shifted, wrapped) position of
the incoming learning-signal sample into the active period buffer; at every
spatial-period boundary the buffer is fitted into a GP that then serves as the
feedforward model for the following period. Accumulating the previous model's
mean into each stored target is what keeps the learned disturbance estimate
intact while the residual learning signal converges to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gp
from .gp import GpModel, KernelHyper
from .lti import SimulationDivergence


def wrap_position(p: float, p_per: float) -> float:
    """Map a position into [0, p_per); negatives wrap from the top."""
    return float(np.mod(p, p_per))


@dataclass
class SpatialRcConfig:
    """Static configuration of the spatial memory loop.

    The kernel period must equal the spatial period: the memory loop is only
    consistent when the covariance repeats exactly once per disturbance
    period.
    """

    p_per: float
    nbar: int
    preview: int
    ts: float
    hyper: KernelHyper

    def __post_init__(self):
        if self.p_per <= 0:
            raise ValueError("p_per must be positive")
        if self.nbar < 1:
            raise ValueError("nbar must be >= 1")
        if self.preview < 0:
            raise ValueError("preview must be nonnegative")
        if self.ts <= 0:
            raise ValueError("ts must be positive")
        if not math.isclose(self.hyper.period, self.p_per, rel_tol=1e-12):
            raise ValueError("kernel period must equal p_per")


def preview_position(p: float, velocity: float, cfg: SpatialRcConfig) -> float:
    """Wrapped position shifted back by the preview horizon of the learning filter.

    A causally-filtered learning sample observed now corresponds to the plant
    state `preview` samples ago, i.e. roughly preview*velocity*ts earlier in
    position.
    """
    return wrap_position(p - cfg.preview * velocity * cfg.ts, cfg.p_per)


class SpatialRcState:
    """Mutable state of the spatial memory loop (single-owner, sample-ordered).

    Period boundaries are declared when the cumulative (unwrapped) position
    crosses the next integer multiple of p_per, which stays well defined under
    velocity changes and brief reversals.
    """

    def __init__(self, cfg: SpatialRcConfig):
        self.cfg = cfg
        self.buf_positions: list[float] = []
        self.buf_targets: list[float] = []
        self.prev_model: GpModel = gp.fit([], [], cfg.hyper)
        self.samples = 0          # total record_observation calls
        self.period_calls = 0     # calls since the last boundary (downsampling phase)
        self.writes = 0           # buffered observations, current period
        self.periods = 0          # completed periods
        self.fit_count = 0
        self.last_position = 0.0
        self.next_boundary = cfg.p_per

    def record_observation(self, ell: float, p: float, velocity: float) -> None:
        """Consume one learning-signal sample at unwrapped position p.

        Advances the period when p has crossed the next boundary, then stores
        every nbar-th sample of the period as (preview-shifted position,
        ell + previous model's mean there). During the first period the
        previous model is empty, so the stored target is just ell.
        """
        if not math.isfinite(ell):
            raise SimulationDivergence("non-finite learning-signal sample")
        while p >= self.next_boundary:
            self.advance_period()
        self.period_calls += 1
        if self.period_calls % self.cfg.nbar == 0:
            shifted = preview_position(p, velocity, self.cfg)
            target = ell + self.prev_model.posterior_mean(shifted)
            self.buf_positions.append(shifted)
            self.buf_targets.append(target)
            self.writes += 1
        self.samples += 1
        self.last_position = p

    def advance_period(self) -> None:
        """Fit the completed period's buffer and make it the feedforward model."""
        self.prev_model = gp.fit(self.buf_positions, self.buf_targets,
                                 self.cfg.hyper)
        self.fit_count += 1
        self.buf_positions = []
        self.buf_targets = []
        self.writes = 0
        self.period_calls = 0
        self.periods += 1
        self.next_boundary += self.cfg.p_per

    def feedforward(self, p: float) -> float:
        """Previous-period posterior mean at the wrapped position (0 if untrained)."""
        return self.prev_model.posterior_mean(
            wrap_position(p, self.cfg.p_per))

"""Scenario construction and closed-loop execution.

A scenario is a mass-spring-damper plant under feedback, disturbed at the
plant input by a position-driven map d_p(p(t)), with the position itself
generated from a velocity profile in a separate loop so the disturbance can
be studied independently of reference tracking. Each run simulates the
requested repetitive-control variants against identical disturbance and
position streams and reports per-period normalized error norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .baseline import RcBuffer
from .design import (
    LoopShapeSpec,
    NonCausalFilter,
    design_feedback,
    learning_filter_spatial,
    learning_filter_traditional,
    loop_margins,
)
from .gp import KernelHyper
from .lti import ContinuousTf, DiscreteStateSpace, SimulationDivergence, zoh_discretize
from .spatial import SpatialRcConfig, SpatialRcState

VARIANTS = ("none", "traditional", "spatial", "both")
POSITION_MODES = ("ideal-integration", "closed-loop-tracking")
VELOCITY_SOURCES = ("profile", "estimate")


@dataclass
class DisturbanceMap:
    """Sum of spatial harmonics a_i * sin(f_i * p + phi_i).

    With integer spatial frequencies the map is exactly 2*pi-periodic, which
    is the working assumption of the memory loop.
    """

    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray = None

    def __post_init__(self):
        self.amplitudes = np.atleast_1d(np.asarray(self.amplitudes, float))
        self.frequencies = np.atleast_1d(np.asarray(self.frequencies, float))
        if self.phases is None:
            self.phases = np.zeros_like(self.amplitudes)
        self.phases = np.atleast_1d(np.asarray(self.phases, float))
        if not (self.amplitudes.size == self.frequencies.size == self.phases.size):
            raise ValueError("disturbance term lists must have equal length")
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("disturbance amplitudes must be finite")

    def evaluate(self, p):
        p = np.asarray(p, dtype=float)
        args = np.multiply.outer(p, self.frequencies) + self.phases
        return np.sin(args) @ self.amplitudes


def d_p_eval(dmap: DisturbanceMap, p):
    """Evaluate the spatial disturbance map at position(s) p."""
    return dmap.evaluate(p)


def default_disturbance() -> DisturbanceMap:
    """Five-harmonic cogging-style map used by the default scenario."""
    return DisturbanceMap([1.5, 0.8, 0.6, 0.4, 0.2],
                          [1.0, 3.0, 9.0, 18.0, 27.0])


@dataclass
class VelocityProfile:
    """Piecewise-linear velocity schedule: (duration, start, end) segments.

    Beyond the last segment the final velocity is held, so profiles do not
    need to cover the whole scenario duration explicitly.
    """

    segments: list

    def __post_init__(self):
        if not self.segments:
            raise ValueError("profile needs at least one segment")
        segs = []
        for seg in self.segments:
            dur, v0, v1 = (float(x) for x in seg)
            if dur <= 0 or not all(map(math.isfinite, (dur, v0, v1))):
                raise ValueError("segment durations must be positive and finite")
            segs.append((dur, v0, v1))
        self.segments = segs
        self._starts = np.concatenate(
            [[0.0], np.cumsum([s[0] for s in segs])])

    @property
    def total_duration(self) -> float:
        return float(self._starts[-1])

    def velocity_at(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self._starts, t, side="right") - 1,
                      0, len(self.segments) - 1)
        out = np.empty(t.shape)
        for i, (dur, v0, v1) in enumerate(self.segments):
            mask = idx == i
            if not np.any(mask):
                continue
            local = np.clip(t[mask] - self._starts[i], 0.0, dur)
            out[mask] = v0 + (v1 - v0) * local / dur
        return out if out.ndim else float(out)

    def position_at(self, t) -> float:
        """Exact integral of the profile from 0 to t (hold-last beyond the end)."""
        t = float(t)
        pos = 0.0
        remaining = t
        for dur, v0, v1 in self.segments:
            step = min(remaining, dur)
            if step <= 0:
                break
            pos += v0 * step + 0.5 * (v1 - v0) * step * step / dur
            remaining -= step
        if remaining > 0:
            pos += self.segments[-1][2] * remaining
        return pos


def default_profile(p_per: float = 2.0 * math.pi) -> VelocityProfile:
    """Three spatial periods at 3.6593 rad/s, then a 0.5 s ramp to 5.2 rad/s.

    The initial velocity makes one spatial period last 1717 samples at
    1 kHz, which is what the default time-domain buffer length is matched to.
    """
    v1, v2 = 3.6593, 5.2
    return VelocityProfile([(3.0 * p_per / v1, v1, v1), (0.5, v1, v2)])


def generate_position(profile: VelocityProfile, ts: float, n_samples: int,
                      mode: str = "ideal-integration",
                      plant: DiscreteStateSpace | None = None,
                      ctrl: DiscreteStateSpace | None = None):
    """Position and velocity series driving the disturbance.

    ideal-integration trapezoidally integrates the profile. In
    closed-loop-tracking mode the integrated profile is instead fed as the
    reference of a second copy of the designed loop and the loop's output is
    taken as the position, mimicking a servo that physically tracks the
    motion profile.
    """
    if mode not in POSITION_MODES:
        raise ValueError(f"unknown position mode {mode!r}")
    t = np.arange(n_samples) * ts
    v = profile.velocity_at(t)
    p_ref = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * ts)])
    if mode == "ideal-integration":
        return p_ref, v
    if plant is None or ctrl is None:
        raise ValueError("closed-loop-tracking mode needs plant and controller")
    plant = plant.copy()
    ctrl = ctrl.copy()
    p = np.empty(n_samples)
    for k in range(n_samples):
        y = plant.output()
        u = ctrl.step(p_ref[k] - y)
        plant.step(u)
        p[k] = y
    return p, v


@dataclass
class ScenarioConfig:
    """Complete description of one simulation run."""

    inertia: float = 1.0
    damping: float = 1.0
    stiffness: float = 1.0e4
    sample_rate_hz: float = 1000.0
    loop: LoopShapeSpec = field(default_factory=lambda: LoopShapeSpec(50.0))
    variant: str = "both"
    p_per: float = 2.0 * math.pi
    nbar: int = 5
    sigma_f: float = 1.0
    sigma_n: float = 1.0e-6
    length_scale: float = 0.1
    n_conv: int = 1717
    disturbance: DisturbanceMap = field(default_factory=default_disturbance)
    profile: VelocityProfile = field(default_factory=default_profile)
    duration: float = 14.0
    position_mode: str = "ideal-integration"
    velocity_source: str = "profile"

    def validate(self) -> None:
        for name in ("inertia", "damping", "stiffness", "sample_rate_hz",
                     "p_per", "sigma_f", "duration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be nonnegative")
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")
        if self.nbar < 1:
            raise ValueError("nbar must be >= 1")
        if self.n_conv < 1:
            raise ValueError("n_conv must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.position_mode not in POSITION_MODES:
            raise ValueError(f"position_mode must be one of {POSITION_MODES}")
        if self.velocity_source not in VELOCITY_SOURCES:
            raise ValueError(f"velocity_source must be one of {VELOCITY_SOURCES}")
        if self.profile.position_at(self.duration) < 2.0 * self.p_per:
            raise ValueError("duration must cover at least 2 spatial periods")

    def hyper(self) -> KernelHyper:
        return KernelHyper(sigma_f=self.sigma_f, sigma_n=self.sigma_n,
                           period=self.p_per, length_scale=self.length_scale)

    def plant_tf(self) -> ContinuousTf:
        return ContinuousTf([1.0],
                            [self.inertia, self.damping, self.stiffness])


@dataclass
class VariantSeries:
    """Per-sample logs of one simulated controller variant."""

    e: np.ndarray
    f: np.ndarray
    u_fb: np.ndarray


@dataclass
class PeriodMetric:
    period: int
    start: int
    end: int
    norm: float


@dataclass
class DesignSummary:
    crossover_hz: float
    phase_margin_deg: float
    spectral_radius: float
    ctrl_num: list
    ctrl_den: list
    preview_spatial: int
    preview_traditional: int
    n_conv: int


@dataclass
class ScenarioResult:
    cfg: ScenarioConfig
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    d: np.ndarray
    series: dict
    boundaries: list
    design: DesignSummary
    metrics: dict = None


def _period_starts(p: np.ndarray, p_per: float) -> list:
    """First sample index of each period; period j spans [starts[j-1], starts[j])."""
    starts = [0]
    next_b = p_per
    for k in range(p.size):
        while p[k] >= next_b:
            if k > starts[-1]:
                starts.append(k)
            next_b += p_per
    return starts


def period_metrics(result: ScenarioResult) -> dict:
    """Per-period 2-norm of the error divided by the period sample count."""
    starts = result.boundaries
    if len(starts) < 2:
        raise ValueError("fewer than one complete period in the run")
    out = {}
    for name, series in result.series.items():
        rows = []
        for j in range(len(starts) - 1):
            lo, hi = starts[j], starts[j + 1]
            nj = hi - lo
            rows.append(PeriodMetric(j + 1, lo, hi,
                                     float(np.linalg.norm(series.e[lo:hi]) / nj)))
        out[name] = rows
    return out


def _simulate_variant(variant: str, plant_proto: DiscreteStateSpace,
                      ctrl_proto: DiscreteStateSpace, p: np.ndarray,
                      v: np.ndarray, d: np.ndarray, cfg: ScenarioConfig,
                      learn: NonCausalFilter | None) -> VariantSeries:
    n = p.size
    ts = plant_proto.ts
    plant = plant_proto.copy()
    ctrl = ctrl_proto.copy()
    e = np.empty(n)
    f = np.empty(n)
    u_fb = np.empty(n)

    rc = None
    state = None
    lc = None
    if variant == "traditional":
        rc = RcBuffer(cfg.n_conv, learn)
    elif variant == "spatial":
        lc = learn.causal.copy()
        state = SpatialRcState(SpatialRcConfig(
            p_per=cfg.p_per, nbar=cfg.nbar, preview=learn.preview,
            ts=ts, hyper=cfg.hyper()))

    k = 0
    try:
        for k in range(n):
            y = plant.output()
            ek = -y  # regulation: r = 0, reference effects separated out
            if rc is not None:
                # classical memory loop corrects the error the controller sees;
                # that is the injection point its T^-1 learning filter assumes
                fk = rc.step(ek)
                uk = ctrl.step(ek + fk)
                plant.step(uk + d[k])
            elif state is not None:
                uk = ctrl.step(ek)
                ell = lc.step(ek)
                state.record_observation(ell, p[k], v[k])
                fk = state.feedforward(p[k])
                plant.step(uk + fk + d[k])
            else:
                uk = ctrl.step(ek)
                fk = 0.0
                plant.step(uk + d[k])
            e[k] = ek
            f[k] = fk
            u_fb[k] = uk
    except SimulationDivergence as err:
        raise SimulationDivergence(
            f"variant {variant!r} diverged at sample {k} "
            f"(t = {k * ts:.6g} s, last valid sample {k - 1}): {err}"
        ) from None
    return VariantSeries(e, f, u_fb)


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Design the loop, simulate the requested variants, compute metrics.

    A no-RC baseline is always simulated alongside; it shares the position and
    disturbance streams with the RC variants.
    """
    cfg.validate()
    ts = 1.0 / cfg.sample_rate_hz
    plant_ct = cfg.plant_tf()
    ctrl = design_feedback(plant_ct, cfg.loop, ts)
    plant_d = zoh_discretize(plant_ct, ts)
    if plant_d.d != 0.0:
        raise ValueError("simulation loop requires a strictly proper plant")

    learn_spatial = learning_filter_spatial(plant_ct, ctrl, ts)
    learn_trad = learning_filter_traditional(plant_ct, ctrl, ts)

    n = int(round(cfg.duration * cfg.sample_rate_hz))
    t = np.arange(n) * ts
    p, v = generate_position(cfg.profile, ts, n, cfg.position_mode,
                             plant_d, ctrl)
    if cfg.velocity_source == "estimate":
        v = np.concatenate([[p[1] - p[0]], np.diff(p)]) / ts
    d = cfg.disturbance.evaluate(p)

    wanted = {"both": ("traditional", "spatial"),
              "traditional": ("traditional",),
              "spatial": ("spatial",),
              "none": ()}[cfg.variant]
    series = {"none": _simulate_variant("none", plant_d, ctrl, p, v, d,
                                        cfg, None)}
    for name in wanted:
        learn = learn_trad if name == "traditional" else learn_spatial
        series[name] = _simulate_variant(name, plant_d, ctrl, p, v, d,
                                         cfg, learn)

    margins = loop_margins(plant_d, ctrl)
    num_c, den_c = ctrl.to_tf()
    design = DesignSummary(
        crossover_hz=margins.crossover_hz,
        phase_margin_deg=margins.phase_margin_deg,
        spectral_radius=margins.spectral_radius,
        ctrl_num=[float(x) for x in num_c],
        ctrl_den=[float(x) for x in den_c],
        preview_spatial=learn_spatial.preview,
        preview_traditional=learn_trad.preview,
        n_conv=cfg.n_conv,
    )
    result = ScenarioResult(cfg=cfg, t=t, p=p, v=v, d=d, series=series,
                            boundaries=_period_starts(p, cfg.p_per),
                            design=design)
    result.metrics = period_metrics(result)
    return result

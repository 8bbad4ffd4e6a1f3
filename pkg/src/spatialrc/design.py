"""Feedback-controller loop shaping and stable inversion of closed-loop dynamics.

The feedback design is gain + lead + second-order low-pass, discretized by a
bilinear transform prewarped at the target crossover so the designed phase
margin survives sampling. Learning filters invert the process sensitivity
(position-domain memory loop) or the complementary sensitivity (time-domain
memory loop); zeros on or near the unit circle are handled by a zero-phase
reflection with DC gain normalization, which makes the inverse stable at the
cost of a finite preview.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lti import (
    ContinuousTf,
    DiscreteStateSpace,
    connect_feedback,
    freq_response,
    spectral_radius,
    zoh_discretize,
)


class DesignError(RuntimeError):
    """A requested design target is unachievable or an inversion failed."""


@dataclass
class LoopShapeSpec:
    """Target shape of the feedback loop.

    lead_ratio r places the lead zero at crossover/r and the lead pole at
    r*crossover; r = 1 disables the lead. lp_ratio places the second-order
    roll-off corner at lp_ratio*crossover; 0 disables it.
    """

    crossover_hz: float
    lead_ratio: float = 4.0
    lp_ratio: float = 5.0
    lp_damping: float = 0.7

    def __post_init__(self):
        if self.crossover_hz <= 0:
            raise ValueError("crossover_hz must be positive")
        if self.lead_ratio < 1.0:
            raise ValueError("lead_ratio must be >= 1 (1 disables the lead)")
        if self.lp_ratio != 0.0 and self.lp_ratio <= 1.0:
            raise ValueError("lp_ratio must be > 1 or 0 to disable the low-pass")
        if self.lp_ratio != 0.0 and self.lp_damping <= 0.0:
            raise ValueError("lp_damping must be positive")


@dataclass
class NonCausalFilter:
    """A stable causal filter plus a fixed amount of preview.

    The represented operator is z^preview * causal: applying the causal part
    to a signal and re-indexing the output `preview` samples earlier.
    """

    causal: DiscreteStateSpace
    preview: int

    def __post_init__(self):
        if self.preview < 0:
            raise ValueError("preview must be nonnegative")
        if spectral_radius(self.causal) >= 1.0:
            raise ValueError("causal part of a preview filter must be stable")

    def filter_offline(self, u) -> np.ndarray:
        """Apply the non-causal filter to a whole recorded signal.

        Output sample k is the causal output at k + preview; the tail is
        computed by zero-padding the input.
        """
        u = np.asarray(u, dtype=float)
        padded = np.concatenate([u, np.zeros(self.preview)])
        y = self.causal.copy().run(padded)
        return y[self.preview:]


@dataclass
class LoopMargins:
    """Measured open-loop crossover and stability margins."""

    crossover_hz: float
    phase_margin_deg: float
    spectral_radius: float


def _bilinear_prewarp(num, den, ts: float, warp_w: float):
    """Discretize num/den (descending s powers) by s = k (z-1)/(z+1).

    k = warp_w / tan(warp_w ts / 2) makes the response exact at warp_w.
    """
    k = warp_w / math.tan(warp_w * ts / 2.0) if warp_w > 0 else 2.0 / ts
    n = len(den) - 1

    def substitute(coeffs):
        deg = len(coeffs) - 1
        out = np.zeros(1)
        for i, c in enumerate(coeffs):
            p = deg - i  # power of s this coefficient multiplies
            term = np.array([c * k ** p])
            for _ in range(p):
                term = np.polymul(term, [1.0, -1.0])
            for _ in range(n - p):
                term = np.polymul(term, [1.0, 1.0])
            out = np.polyadd(out, term)
        return out

    numd = substitute(num)
    dend = substitute(den)
    return numd / dend[0], dend / dend[0]


def _open_loop_response(plant: DiscreteStateSpace, ctrl: DiscreteStateSpace,
                        freqs_hz):
    return (freq_response(ctrl, freqs_hz).values
            * freq_response(plant, freqs_hz).values)


def loop_margins(plant: DiscreteStateSpace, ctrl: DiscreteStateSpace,
                 n_grid: int = 4000) -> LoopMargins:
    """Crossover (last downward 0 dB crossing), phase margin, closed-loop radius."""
    nyquist = 0.5 / plant.ts
    grid = np.linspace(nyquist * 1e-3, nyquist * 0.999, n_grid)
    resp = _open_loop_response(plant, ctrl, grid)
    mag = np.abs(resp)
    down = np.where((mag[:-1] >= 1.0) & (mag[1:] < 1.0))[0]
    if down.size == 0:
        # flat or never-crossing loop; report the grid point closest to 0 dB
        i = int(np.argmin(np.abs(np.log(np.maximum(mag, 1e-300)))))
        f_cross = float(grid[i])
    else:
        i = int(down[-1])
        f_cross = float(np.interp(0.0,
                                  [math.log10(mag[i + 1]), math.log10(mag[i])],
                                  [grid[i + 1], grid[i]]))
    l_cross = _open_loop_response(plant, ctrl, [f_cross])[0]
    pm = 180.0 + math.degrees(math.atan2(l_cross.imag, l_cross.real))
    s_cl, _, _ = connect_feedback(plant, ctrl)
    return LoopMargins(f_cross, pm, spectral_radius(s_cl))


def design_feedback(plant: ContinuousTf, spec: LoopShapeSpec,
                    ts: float) -> DiscreteStateSpace:
    """Design the discrete stabilizing feedback controller for a plant model.

    The controller is gain * lead * low-pass with the shape given by `spec`;
    the gain is solved so the discrete open loop crosses 0 dB at the target.
    Raises DesignError when the target is out of reach or the achieved loop
    misses the crossover/margin/stability requirements.
    """
    nyquist = 0.5 / ts
    if spec.crossover_hz > nyquist / 3.0:
        raise DesignError(
            f"crossover {spec.crossover_hz} Hz exceeds Nyquist/3 = "
            f"{nyquist / 3.0:.1f} Hz at ts = {ts}"
        )
    if spec.lp_ratio != 0.0 and spec.lp_ratio * spec.crossover_hz >= nyquist:
        raise DesignError("low-pass corner at or above Nyquist")

    wc = 2.0 * math.pi * spec.crossover_hz
    num = np.array([1.0])
    den = np.array([1.0])
    if spec.lead_ratio > 1.0:
        num = np.polymul(num, [spec.lead_ratio / wc, 1.0])
        den = np.polymul(den, [1.0 / (spec.lead_ratio * wc), 1.0])
    if spec.lp_ratio != 0.0:
        wlp = spec.lp_ratio * wc
        den = np.polymul(den, [1.0 / wlp ** 2, 2.0 * spec.lp_damping / wlp, 1.0])

    if len(den) == 1:  # pure gain controller
        numd, dend = num / den[0], np.array([1.0])
    else:
        numd, dend = _bilinear_prewarp(num, den, ts, wc)

    plant_d = zoh_discretize(plant, ts)
    unit = DiscreteStateSpace.from_tf(numd, dend, ts)
    l_at_target = _open_loop_response(plant_d, unit, [spec.crossover_hz])[0]
    if abs(l_at_target) == 0.0:
        raise DesignError("plant has no gain at the target crossover")
    gain = 1.0 / abs(l_at_target)
    ctrl = DiscreteStateSpace.from_tf(numd * gain, dend, ts)

    margins = loop_margins(plant_d, ctrl)
    report = (f"achieved crossover {margins.crossover_hz:.2f} Hz, "
              f"phase margin {margins.phase_margin_deg:.1f} deg, "
              f"closed-loop spectral radius {margins.spectral_radius:.4f}")
    if abs(margins.crossover_hz - spec.crossover_hz) > 2.0:
        raise DesignError(f"crossover target missed: {report}")
    if margins.phase_margin_deg < 30.0:
        raise DesignError(f"insufficient phase margin: {report}")
    if margins.spectral_radius >= 1.0:
        raise DesignError(f"closed loop unstable: {report}")
    return ctrl


def _real_poly(roots) -> np.ndarray:
    """Monic polynomial from a conjugate-closed root set."""
    poly = np.poly(roots) if len(roots) else np.array([1.0])
    if np.max(np.abs(poly.imag)) > 1e-9 * max(1.0, np.max(np.abs(poly.real))):
        raise DesignError("zero set is not closed under conjugation")
    return poly.real


def stable_inverse(num, den, ts: float,
                   reflect_radius: float = 0.95) -> NonCausalFilter:
    """Stable (possibly non-causal) inverse of a discrete transfer function.

    Zeros with magnitude <= reflect_radius are inverted directly; the rest
    are reflected (replaced by their reciprocal conjugates) so that the
    product inverse*system has exactly zero phase on the unit circle and unit
    gain at DC. The preview count equals the relative degree plus the number
    of reflected zeros.
    """
    num = np.atleast_1d(np.asarray(num, dtype=float))
    den = np.atleast_1d(np.asarray(den, dtype=float))
    nz = np.flatnonzero(num)
    if nz.size == 0:
        raise DesignError("cannot invert an identically zero system")
    num = num[nz[0]:]
    den = den[np.flatnonzero(den)[0]:]
    m, n = num.size - 1, den.size - 1
    if m > n:
        raise DesignError("cannot invert an improper system")
    rel_deg = n - m

    zeros = np.roots(num) if m > 0 else np.array([])
    keep = np.abs(zeros) <= reflect_radius
    b_plus = _real_poly(zeros[keep]) * num[0]
    b_minus = _real_poly(zeros[~keep])
    n_reflect = int(np.sum(~keep))

    dc = np.polyval(b_minus, 1.0)
    if abs(dc) < 1e-8:
        raise DesignError(
            "no stable factorization: reflected zeros place a zero at z = 1"
        )

    inv_num = np.polymul(den, b_minus[::-1])
    inv_den = np.polymul(b_plus * dc ** 2,
                         np.concatenate([[1.0], np.zeros(rel_deg + 2 * n_reflect)]))
    causal = DiscreteStateSpace.from_tf(inv_num, inv_den, ts)
    return NonCausalFilter(causal, rel_deg + n_reflect)


def _closed_loop_tfs(plant: ContinuousTf, ctrl: DiscreteStateSpace, ts: float):
    plant_d = zoh_discretize(plant, ts)
    num_p, den_p = plant_d.to_tf()
    num_c, den_c = ctrl.to_tf()
    den_cl = np.polyadd(np.polymul(den_p, den_c), np.polymul(num_p, num_c))
    ps_num = np.polymul(num_p, den_c)
    t_num = np.polymul(num_c, num_p)
    scale = den_cl[0]
    return (ps_num / scale, t_num / scale, den_cl / scale), plant_d


def _check_inverse_quality(filt: NonCausalFilter, target_num, target_den,
                           ts: float, upto_hz: float, label: str) -> None:
    grid = np.linspace(0.05, upto_hz, 120)
    target = DiscreteStateSpace.from_tf(target_num, target_den, ts)
    resp_t = freq_response(target, grid).values
    resp_l = freq_response(filt.causal, grid).values
    advance = np.exp(2j * np.pi * grid * ts * filt.preview)
    err = np.max(np.abs(resp_l * advance * resp_t - 1.0))
    if err >= 0.05:
        raise DesignError(
            f"{label} inverse too inaccurate: max |L*H - 1| = {err:.3g} "
            f"below {upto_hz} Hz"
        )


def learning_filter_spatial(plant_model: ContinuousTf, ctrl: DiscreteStateSpace,
                            ts: float,
                            reflect_radius: float = 0.95) -> NonCausalFilter:
    """Learning filter approximating the inverse process sensitivity."""
    (ps_num, _, den_cl), plant_d = _closed_loop_tfs(plant_model, ctrl, ts)
    filt = stable_inverse(ps_num, den_cl, ts, reflect_radius)
    margins = loop_margins(plant_d, ctrl)
    _check_inverse_quality(filt, ps_num, den_cl, ts,
                           margins.crossover_hz / 2.0, "process-sensitivity")
    return filt


def learning_filter_traditional(plant_model: ContinuousTf,
                                ctrl: DiscreteStateSpace, ts: float,
                                reflect_radius: float = 0.95) -> NonCausalFilter:
    """Learning filter approximating the inverse complementary sensitivity."""
    (_, t_num, den_cl), plant_d = _closed_loop_tfs(plant_model, ctrl, ts)
    filt = stable_inverse(t_num, den_cl, ts, reflect_radius)
    margins = loop_margins(plant_d, ctrl)
    _check_inverse_quality(filt, t_num, den_cl, ts,
                           margins.crossover_hz / 2.0, "complementary-sensitivity")
    return filt

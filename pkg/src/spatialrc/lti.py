"""Continuous transfer functions, ZOH discretization, and discrete state-space stepping.

Everything here is SISO. Discrete systems carry their own state vector and are
stepped one sample at a time, which is what the closed-loop simulation needs;
immutable descriptions (transfer functions, frequency responses) are separate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm


class SimulationDivergence(RuntimeError):
    """A stepped signal or internal state stopped being finite."""


def _poly1d(coeffs) -> np.ndarray:
    """Coefficient array in descending powers, leading zeros stripped."""
    arr = np.atleast_1d(np.asarray(coeffs, dtype=float)).ravel()
    if arr.size == 0:
        raise ValueError("empty coefficient list")
    nz = np.flatnonzero(arr)
    if nz.size == 0:
        return arr[-1:]  # identically zero polynomial
    return arr[nz[0]:]


@dataclass
class ContinuousTf:
    """Proper SISO transfer function in s, coefficients in descending powers."""

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num = _poly1d(self.num)
        den = _poly1d(self.den)
        if not np.any(den):
            raise ValueError("denominator is identically zero")
        if num.size > den.size:
            raise ValueError(
                "improper transfer function: numerator degree "
                f"{num.size - 1} exceeds denominator degree {den.size - 1}"
            )
        self.num = num
        self.den = den

    @property
    def order(self) -> int:
        return self.den.size - 1

    def response_at(self, s: complex) -> complex:
        return complex(np.polyval(self.num, s) / np.polyval(self.den, s))

    def static_gain(self) -> float:
        if self.den[-1] == 0.0:
            raise ValueError("pole at the origin, static gain undefined")
        return float(self.num[-1] / self.den[-1])


def _tf_to_canonical(num: np.ndarray, den: np.ndarray):
    """Controllable canonical (A, B, C, D) for num/den in descending powers."""
    den = np.asarray(den, dtype=float)
    num = np.asarray(num, dtype=float)
    a = den / den[0]
    b = np.concatenate([np.zeros(den.size - num.size), num / den[0]])
    n = a.size - 1
    d = b[0]
    if n == 0:
        return np.zeros((0, 0)), np.zeros(0), np.zeros(0), float(d)
    A = np.zeros((n, n))
    A[0, :] = -a[1:]
    if n > 1:
        A[1:, :-1] = np.eye(n - 1)
    B = np.zeros(n)
    B[0] = 1.0
    C = b[1:] - d * a[1:]
    return A, B, C, float(d)


class DiscreteStateSpace:
    """Discrete-time SISO state-space system with a mutable internal state.

    Stepping mutates the state, so an instance is single-owner while it is
    being simulated; copy() gives a fresh zero-state clone.
    """

    def __init__(self, a, b, c, d, ts: float):
        a = np.asarray(a, dtype=float).reshape(-1)
        n = int(round(math.sqrt(a.size)))
        self.a = a.reshape(n, n)
        self.b = np.asarray(b, dtype=float).reshape(-1)
        self.c = np.asarray(c, dtype=float).reshape(-1)
        self.d = float(d)
        if self.b.size != n or self.c.size != n:
            raise ValueError("inconsistent state-space dimensions")
        if not ts > 0.0:
            raise ValueError("sample time must be positive")
        self.ts = float(ts)
        self.x = np.zeros(n)

    @classmethod
    def from_tf(cls, num, den, ts: float) -> "DiscreteStateSpace":
        """Controllable-canonical realization of a discrete transfer function."""
        num = _poly1d(num)
        den = _poly1d(den)
        if num.size > den.size:
            raise ValueError("improper discrete transfer function")
        return cls(*_tf_to_canonical(num, den), ts)

    @property
    def order(self) -> int:
        return self.a.shape[0]

    def reset(self) -> None:
        self.x[:] = 0.0

    def copy(self) -> "DiscreteStateSpace":
        return DiscreteStateSpace(self.a.copy(), self.b.copy(), self.c.copy(),
                                  self.d, self.ts)

    def output(self, u: float = 0.0) -> float:
        """Current output C x + D u without advancing the state."""
        return float(self.c @ self.x) + self.d * u

    def step(self, u: float) -> float:
        """Advance one sample and return y(k) = C x(k) + D u(k)."""
        if not math.isfinite(u):
            raise SimulationDivergence(f"non-finite input sample {u!r}")
        y = float(self.c @ self.x) + self.d * u
        self.x = self.a @ self.x + self.b * u
        if not np.all(np.isfinite(self.x)):
            raise SimulationDivergence("state vector diverged (NaN/Inf)")
        return y

    def run(self, u_seq) -> np.ndarray:
        """Step through an input sequence, returning the output sequence."""
        u_seq = np.asarray(u_seq, dtype=float)
        y = np.empty(u_seq.size)
        for k, u in enumerate(u_seq):
            y[k] = self.step(float(u))
        return y

    def to_tf(self):
        """(num, den) in descending powers of z, den monic.

        Uses the determinant identity
        C adj(zI - A) B = det(zI - A + B C) - det(zI - A).
        """
        if self.order == 0:
            return np.array([self.d]), np.array([1.0])
        den = np.poly(self.a)
        num = np.poly(self.a - np.outer(self.b, self.c)) - den + self.d * den
        return num, den

    def poles(self) -> np.ndarray:
        return np.linalg.eigvals(self.a)


def spectral_radius(sys: DiscreteStateSpace) -> float:
    """Largest eigenvalue magnitude of the state matrix."""
    if sys.order == 0:
        return 0.0
    return float(np.max(np.abs(sys.poles())))


def zoh_discretize(sys: ContinuousTf, ts: float) -> DiscreteStateSpace:
    """Exact zero-order-hold equivalent of a proper continuous-time system.

    Computed through the augmented matrix exponential
    expm([[A, B], [0, 0]] * ts), so continuous poles map to exp(s*ts) and the
    static gain is preserved.
    """
    if not ts > 0.0:
        raise ValueError("sample time must be positive")
    A, B, C, D = _tf_to_canonical(sys.num, sys.den)
    n = A.shape[0]
    if n == 0:
        return DiscreteStateSpace(A, B, C, D, ts)
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = B
    m = expm(aug * ts)
    return DiscreteStateSpace(m[:n, :n], m[:n, n], C, D, ts)


@dataclass
class FrequencyResponse:
    """Complex response samples over a strictly increasing frequency grid (Hz)."""

    freqs_hz: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.freqs_hz = np.atleast_1d(np.asarray(self.freqs_hz, dtype=float))
        self.values = np.atleast_1d(np.asarray(self.values, dtype=complex))
        if self.freqs_hz.size != self.values.size:
            raise ValueError("frequency grid and values must have equal length")
        if np.any(np.diff(self.freqs_hz) <= 0):
            raise ValueError("frequency grid must be strictly increasing")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def phase_deg(self) -> np.ndarray:
        return np.degrees(np.unwrap(np.angle(self.values)))


def freq_response(sys, freqs_hz) -> FrequencyResponse:
    """Evaluate at z = exp(j 2 pi f ts) (discrete) or s = j 2 pi f (continuous)."""
    freqs_hz = np.atleast_1d(np.asarray(freqs_hz, dtype=float))
    if isinstance(sys, ContinuousTf):
        vals = np.array([sys.response_at(2j * np.pi * f) for f in freqs_hz])
        return FrequencyResponse(freqs_hz, vals)
    nyquist = 0.5 / sys.ts
    if np.any(freqs_hz >= nyquist):
        raise ValueError(f"frequency at or above Nyquist ({nyquist} Hz)")
    n = sys.order
    eye = np.eye(n)
    vals = np.empty(freqs_hz.size, dtype=complex)
    for i, f in enumerate(freqs_hz):
        z = np.exp(2j * np.pi * f * sys.ts)
        if n == 0:
            vals[i] = sys.d
        else:
            vals[i] = sys.c @ np.linalg.solve(z * eye - sys.a, sys.b) + sys.d
    return FrequencyResponse(freqs_hz, vals)


def connect_feedback(plant: DiscreteStateSpace, ctrl: DiscreteStateSpace):
    """Close the unity-feedback loop and return (S, PS, T) realizations.

    S = 1/(1+CP) maps the reference to the error, PS = P/(1+CP) maps a
    plant-input disturbance to the output, T = CP/(1+CP) maps the reference to
    the output. All three share the same closed-loop state matrix, so any of
    them can be used for a spectral-radius stability check.
    """
    if abs(plant.ts - ctrl.ts) > 1e-15:
        raise ValueError("plant and controller sample times differ")
    ts = plant.ts
    ap, bp, cp, dp = plant.a, plant.b, plant.c, plant.d
    ac, bc, cc, dc = ctrl.a, ctrl.b, ctrl.c, ctrl.d
    delta = 1.0 + dp * dc
    if abs(delta) < 1e-12:
        raise ValueError("algebraic loop: 1 + D_c * D_p is singular")
    npl, nct = plant.order, ctrl.order

    a_cl = np.zeros((npl + nct, npl + nct))
    a_cl[:npl, :npl] = ap - np.outer(bp, cp) * (dc / delta)
    a_cl[:npl, npl:] = np.outer(bp, cc) / delta
    a_cl[npl:, :npl] = -np.outer(bc, cp) / delta
    a_cl[npl:, npl:] = ac - np.outer(bc, cc) * (dp / delta)

    b_ref = np.concatenate([bp * (dc / delta), bc / delta])
    b_dist = np.concatenate([bp / delta, -bc * (dp / delta)])
    c_out = np.concatenate([cp / delta, cc * (dp / delta)])

    s = DiscreteStateSpace(a_cl, b_ref, -c_out, 1.0 / delta, ts)
    ps = DiscreteStateSpace(a_cl, b_dist, c_out, dp / delta, ts)
    t = DiscreteStateSpace(a_cl, b_ref, c_out, dp * dc / delta, ts)
    return s, ps, t

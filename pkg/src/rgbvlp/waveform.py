"""Transmitted optical waveforms and their cross-energy matrices.

The bounds only ever see a waveform set through three matrices::

    E[i, l]   = int s_i(t)  s_l(t)  dt
    Ep[i, l]  = int s_i(t)  s_l'(t) dt
    Epp[i, l] = int s_i'(t) s_l'(t) dt

:func:`cross_energies` integrates these numerically for any waveform type;
:func:`closed_form_cross_energies` is the exact result for the raised-cosine
family and serves as its test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True)
class RaisedCosineWaveform:
    """``P_o (1 - cos(2 pi t / T_s)) (1 + cos(2 pi f t))`` on ``[0, T_s]``.

    ``power`` is the average optical power when ``f * T_s`` is an integer.
    """

    power: float
    duration: float
    frequency: float

    def __post_init__(self):
        if self.power <= 0 or self.duration <= 0:
            raise ValueError("power and duration must be positive")
        if self.frequency < 0:
            raise ValueError("frequency must be non-negative")

    def __call__(self, t):
        return self.value_and_derivative(t)[0]

    def derivative(self, t):
        return self.value_and_derivative(t)[1]

    def value_and_derivative(self, t):
        t = np.asarray(t, dtype=float)
        wa = 2 * np.pi / self.duration
        wb = 2 * np.pi * self.frequency
        ca, sa = np.cos(wa * t), np.sin(wa * t)
        cb, sb = np.cos(wb * t), np.sin(wb * t)
        env, car = 1 - ca, 1 + cb
        val = self.power * env * car
        der = self.power * (wa * sa * car - env * wb * sb)
        inside = (t >= 0) & (t <= self.duration)
        return np.where(inside, val, 0.0), np.where(inside, der, 0.0)

    def value_and_derivative_split(self, base, offsets):
        """Same as :meth:`value_and_derivative` at ``t = base[:, None] + offsets``.

        Uses angle addition so only ``len(base) + len(offsets)`` sines and
        cosines are evaluated.
        """
        wa = 2 * np.pi / self.duration
        wb = 2 * np.pi * self.frequency
        t = base[:, None] + offsets
        ca0, sa0 = np.cos(wa * base)[:, None], np.sin(wa * base)[:, None]
        cb0, sb0 = np.cos(wb * base)[:, None], np.sin(wb * base)[:, None]
        ca1, sa1 = np.cos(wa * offsets), np.sin(wa * offsets)
        cb1, sb1 = np.cos(wb * offsets), np.sin(wb * offsets)
        ca = ca0 * ca1 - sa0 * sa1
        sa = sa0 * ca1 + ca0 * sa1
        cb = cb0 * cb1 - sb0 * sb1
        sb = sb0 * cb1 + cb0 * sb1
        env, car = 1 - ca, 1 + cb
        inside = (t >= 0) & (t <= self.duration)
        val = np.where(inside, self.power * env * car, 0.0)
        der = np.where(inside, self.power * (wa * sa * car - env * wb * sb), 0.0)
        return val, der

    @property
    def breakpoints(self):
        return np.array([0.0, self.duration])

    @property
    def max_frequency(self):
        return self.frequency + 1 / self.duration

    def cosine_terms(self):
        """``(amplitude, angular frequency)`` pairs with ``s(t) = sum a cos(w t)``."""
        p, wa, wb = self.power, 2 * np.pi / self.duration, 2 * np.pi * self.frequency
        return [(p, 0.0), (p, wb), (-p, wa), (-p / 2, wb + wa), (-p / 2, wb - wa)]


class TabulatedWaveform:
    """Waveform interpolated from samples by a clamped cubic spline.

    The spline has zero slope at both ends; values outside ``[0, t[-1]]`` are
    zero.  This is an approximation of whatever the samples came from.
    """

    def __init__(self, t, values):
        t = np.asarray(t, dtype=float)
        values = np.asarray(values, dtype=float)
        if t.ndim != 1 or t.shape != values.shape or t.size < 4:
            raise ValueError("need at least 4 matching (t, value) samples")
        if t[0] != 0.0:
            raise ValueError("tabulated waveform must start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if np.any(values < 0):
            raise ValueError("optical intensity cannot be negative")
        self.t = t
        self.values = values
        self.duration = float(t[-1])
        self._spline = CubicSpline(t, values, bc_type="clamped")
        self._dspline = self._spline.derivative()

    @classmethod
    def from_file(cls, path):
        data = np.loadtxt(path, ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns (t_seconds, value_W)")
        return cls(data[:, 0], data[:, 1])

    @property
    def power(self):
        return float(np.trapezoid(self.values, self.t) / self.duration)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.duration)
        return np.where(inside, self._spline(np.clip(t, 0, self.duration)), 0.0)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.duration)
        return np.where(inside, self._dspline(np.clip(t, 0, self.duration)), 0.0)

    def value_and_derivative(self, t):
        return self(t), self.derivative(t)

    @property
    def breakpoints(self):
        return self.t

    max_frequency = 0.0


def sample(w, dt, t0, n):
    """``w(t0 + k dt)`` for ``k = 0 .. n-1``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return w(t0 + dt * np.arange(n))


@dataclass(frozen=True)
class CrossEnergies:
    """The three cross-energy matrices of a waveform set (W^2 s, W^2, W^2/s)."""

    E: np.ndarray
    Ep: np.ndarray
    Epp: np.ndarray

    @property
    def n_colors(self):
        return self.E.shape[0]

    def scaled(self, factor):
        return CrossEnergies(self.E * factor, self.Ep * factor, self.Epp * factor)

    def subset(self, colors):
        idx = np.ix_(colors, colors)
        return CrossEnergies(self.E[idx], self.Ep[idx], self.Epp[idx])


_GL_LOW = np.polynomial.legendre.leggauss(30)
_GL_HIGH = np.polynomial.legendre.leggauss(40)
# fastest-carrier periods per initial panel; sized so the 30-point rule converges
_PERIODS_PER_PANEL = 4


def _panel_integrals(waveforms, lo, hi, rule):
    """E, E', E'' contributions of each panel ``[lo, hi]``; shape (3, panels, n, n)."""
    x, wts = rule
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    # equal widths up to rounding of t itself -> shared node offsets
    uniform = lo.size > 0 and np.ptp(half) <= 1e-9 * half.max()
    n = len(waveforms)
    vals = np.empty((lo.size, 2 * n, x.size))
    for i, w in enumerate(waveforms):
        if uniform and hasattr(w, "value_and_derivative_split"):
            vals[:, i], vals[:, n + i] = w.value_and_derivative_split(mid, half.mean() * x)
        else:
            vals[:, i], vals[:, n + i] = w.value_and_derivative(mid[:, None] + half[:, None] * x)
    gram = (vals * (half[:, None] * wts)[:, None, :]) @ vals.transpose(0, 2, 1)
    return np.stack([gram[:, :n, :n], gram[:, :n, n:], gram[:, n:, n:]])


def _initial_panels(waveforms):
    """Equal-width panels of a few carrier periods between waveform breakpoints."""
    edges = np.unique(np.concatenate([np.asarray(w.breakpoints, dtype=float) for w in waveforms]))
    fmax = max(w.max_frequency for w in waveforms)
    lo, hi = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        k = max(1, int(np.ceil((b - a) * fmax / _PERIODS_PER_PANEL)))
        h = (b - a) / k
        lo.append(a + h * np.arange(k))
        hi.append(lo[-1] + h)
    return np.concatenate(lo), np.concatenate(hi)


def cross_energies(waveforms, rtol=1e-10, max_rounds=30, chunk=50_000):
    """Adaptive Gauss-Legendre integration of E, E' and E''.

    Panels start at a few periods of the fastest carrier and are bisected
    wherever the 30- and 40-point rules disagree.  The error target
    for each matrix is ``rtol`` times its largest-magnitude entry (for E' the
    geometric mean of the E and E'' scales, since E' may vanish).
    """
    waveforms = list(waveforms)
    n = len(waveforms)
    lo, hi = _initial_panels(waveforms)
    done = np.zeros((3, n, n))
    for _ in range(max_rounds):
        fine = np.empty((3, lo.size, n, n))
        err = np.empty((3, lo.size))
        for a in range(0, lo.size, chunk):
            sl = slice(a, a + chunk)
            f = _panel_integrals(waveforms, lo[sl], hi[sl], _GL_HIGH)
            c = _panel_integrals(waveforms, lo[sl], hi[sl], _GL_LOW)
            fine[:, sl] = f
            err[:, sl] = np.abs(f - c).max(axis=(2, 3))
        total = done + fine.sum(axis=1)
        s_e, s_epp = np.abs(total[0]).max(), np.abs(total[2]).max()
        scales = np.array([s_e, np.sqrt(s_e * s_epp), s_epp])
        scales = np.where(scales > 0, scales, 1.0)
        rel = err / scales[:, None]
        if np.all(rel.sum(axis=1) <= rtol):
            E, Ep, Epp = total
            return CrossEnergies(0.5 * (E + E.T), Ep, 0.5 * (Epp + Epp.T))
        bad = rel.max(axis=0) > rtol / lo.size
        done = done + fine[:, ~bad].sum(axis=1)
        mid = 0.5 * (lo[bad] + hi[bad])
        lo, hi = np.concatenate([lo[bad], mid]), np.concatenate([mid, hi[bad]])
    k = int(np.argmax(rel.sum(axis=1)))
    raise QuadratureError(
        f"cross-energy quadrature did not converge; worst matrix {['E', 'Ep', 'Epp'][k]} "
        f"with relative error estimate {rel[k].sum():.3e}"
    )


def _int_cos(w, T):
    """int_0^T cos(w t) dt."""
    w = np.asarray(w, dtype=float)
    small = np.abs(w * T) < 1e-8
    safe = np.where(small, 1.0, w)
    return np.where(small, T, np.sin(safe * T) / safe)


def _int_sin(w, T):
    """int_0^T sin(w t) dt."""
    w = np.asarray(w, dtype=float)
    small = np.abs(w * T) < 1e-8
    safe = np.where(small, 1.0, w)
    return np.where(small, 0.5 * w * T * T, 2 * np.sin(safe * T / 2) ** 2 / safe)


def _pair_integrals(ti, tl, T):
    """Exact E, E', E'' entries for two cosine expansions on ``[0, T]``."""
    a, u = (np.array(x)[:, None] for x in zip(*ti))
    b, v = (np.array(x)[None, :] for x in zip(*tl))
    ab = a * b
    c_minus, c_plus = _int_cos(u - v, T), _int_cos(u + v, T)
    # cos(u t) sin(v t) = (sin((u+v)t) + sin((v-u)t)) / 2
    cs = 0.5 * (_int_sin(u + v, T) + _int_sin(v - u, T))
    e = np.sum(ab * 0.5 * (c_minus + c_plus))
    ep = np.sum(-ab * v * cs)
    epp = np.sum(ab * u * v * 0.5 * (c_minus - c_plus))
    return float(e), float(ep), float(epp)


def closed_form_cross_energies(waveforms):
    """Exact cross energies for raised-cosine waveforms sharing one ``T_s``."""
    waveforms = list(waveforms)
    if not all(isinstance(w, RaisedCosineWaveform) for w in waveforms):
        raise TypeError("closed-form cross energies need RaisedCosineWaveform inputs")
    T = waveforms[0].duration
    if any(w.duration != T for w in waveforms):
        raise ValueError("closed-form cross energies need a common duration")
    n = len(waveforms)
    E, Ep, Epp = np.zeros((n, n)), np.zeros((n, n)), np.zeros((n, n))
    terms = [w.cosine_terms() for w in waveforms]
    for i in range(n):
        for l in range(n):
            E[i, l], Ep[i, l], Epp[i, l] = _pair_integrals(terms[i], terms[l], T)
    return CrossEnergies(E, Ep, Epp)


def color_frequencies(fc, led_index=1, ratios=(0.9, 1.0, 1.1)):
    """Carrier per color for LED ``led_index`` (1-based): ``k * ratio * fc``."""
    return tuple(led_index * r * fc for r in ratios)


def raised_cosine_set(power, duration, fc, led_index=1, ratios=(0.9, 1.0, 1.1)):
    return tuple(
        RaisedCosineWaveform(power, duration, f) for f in color_frequencies(fc, led_index, ratios)
    )

"""Correlator statistics and maximum-likelihood distance/position estimators.

All estimators work on sampled frames.  A frame's sample ``n`` sits at time
``(start_index + n) * dt``, and a template is ``s(m * dt)`` for
``m = 0 .. M-1``, so shifting a template by ``q`` samples is pure indexing.
Candidate delays are rounded to the nearest sample.

Correlations over every lag an estimator can ask for are computed once per
frame (:class:`CorrelationTable`); objectives then reduce to table lookups.
The reported ``evaluations`` count the logical correlator evaluations the
exhaustive formulation needs, which is what the complexity notes refer to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.signal import correlate as _xcorr

from .bounds import SINGULAR_CONDITION, kappas
from .geometry import SPEED_OF_LIGHT, gain_matrix, toa

_C = SPEED_OF_LIGHT


class WindowError(ValueError):
    """A shifted template does not fit inside the observation window."""


class NonPositiveStatisticError(ValueError):
    """The RSS statistic used for power-law inversion is not positive."""


class SingularEnergyError(np.linalg.LinAlgError):
    """A cross-energy matrix E that must be inverted is singular."""


# ------------------------------------------------------------------ frames


@dataclass(frozen=True)
class ReceivedFrame:
    """Samples ``y[j, n]`` of every PD for one LED, on a common time grid."""

    samples: np.ndarray
    dt: float
    start_index: int = 0

    def __post_init__(self):
        y = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "samples", y)
        object.__setattr__(self, "start_index", int(self.start_index))

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def window(self):
        """``(T1, T2)``: times of the first and last sample."""
        return self.start_index * self.dt, (self.start_index + self.n_samples - 1) * self.dt

    def scaled(self, factor):
        return ReceivedFrame(self.samples * factor, self.dt, self.start_index)


def template_length(w, dt):
    """Number of grid samples covering the support ``[0, T_s]``."""
    return int(np.floor(w.duration / dt + 1e-9)) + 1


def sample_templates(waveforms, dt):
    """Templates ``s_i(m dt)`` stacked to shape ``(C, M)``."""
    M = max(template_length(w, dt) for w in waveforms)
    grid = dt * np.arange(M)
    return np.stack([w(grid) for w in waveforms])


def lag_of(tau, dt):
    """Nearest-sample lag for a delay (array-friendly)."""
    return np.rint(np.asarray(tau) / dt).astype(np.int64)


def correlate(samples, start_index, dt, w, tau):
    """``dt * sum_n y(t_n) s(t_n - tau)`` with ``tau`` rounded to the sample grid."""
    y = np.asarray(samples, dtype=float)
    tmpl = sample_templates([w], dt)[0]
    off = int(lag_of(tau, dt)) - start_index
    if off < 0 or off + tmpl.size > y.size:
        raise WindowError(f"template at tau={tau:.6e} s leaves the window")
    return dt * float(y[off : off + tmpl.size] @ tmpl)


class CorrelationTable:
    """``R[q - q_lo, j, i]`` for every lag ``q`` in ``[q_lo, q_hi]``.

    Uses direct or FFT correlation, whichever scipy estimates to be faster.
    """

    def __init__(self, frame, templates, q_lo, q_hi):
        templates = np.atleast_2d(templates)
        M = templates.shape[1]
        lo, hi = q_lo - frame.start_index, q_hi - frame.start_index
        if lo < 0 or hi + M > frame.n_samples:
            raise WindowError(f"lags [{q_lo}, {q_hi}] do not fit the frame window")
        self.q_lo, self.q_hi = int(q_lo), int(q_hi)
        y = frame.samples[:, lo : hi + M]
        out = np.empty((hi - lo + 1, y.shape[0], templates.shape[0]))
        for j in range(y.shape[0]):
            for i, s in enumerate(templates):
                out[:, j, i] = _xcorr(y[j], s, mode="valid")
        self.values = out * frame.dt

    def __call__(self, q):
        q = np.asarray(q)
        if q.size and (q.min() < self.q_lo or q.max() > self.q_hi):
            raise WindowError("requested delay outside the correlation table")
        return self.values[q - self.q_lo]


# ------------------------------------------------------------------ grids


@dataclass(frozen=True)
class SearchGrid:
    """Box-bounded multilevel grid.

    Level 0 covers the box with spacing ``step``.  Each later level shrinks
    the spacing by ``shrink`` (never below ``floor``) and searches
    ``+-window`` previous-level steps around the incumbent.
    """

    lower: np.ndarray
    upper: np.ndarray
    step: np.ndarray
    levels: int = 3
    shrink: float = 0.2
    window: int = 2
    floor: np.ndarray = 0.0

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        step = np.broadcast_to(np.asarray(self.step, dtype=float), lo.shape).copy()
        floor = np.broadcast_to(np.asarray(self.floor, dtype=float), lo.shape).copy()
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ValueError("grid bounds must be ordered")
        if np.any(step <= 0):
            raise ValueError("grid step must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if self.levels < 0 or self.window < 1:
            raise ValueError("levels must be >= 0 and window >= 1")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "step", np.maximum(step, floor))
        object.__setattr__(self, "floor", floor)

    @property
    def ndim(self):
        return self.lower.size

    def with_floor(self, floor):
        return SearchGrid(self.lower, self.upper, self.step, self.levels, self.shrink, self.window, floor)

    def coarse_axes(self):
        axes = []
        for lo, hi, h in zip(self.lower, self.upper, self.step):
            n = int(np.floor((hi - lo) / h + 1e-9)) + 1
            ax = lo + h * np.arange(n)
            if hi - ax[-1] > 1e-12 * max(1.0, abs(hi)):
                ax = np.append(ax, hi)
            axes.append(np.minimum(ax, hi))
        return axes

    def local_axes(self, center, prev_step, new_step):
        axes = []
        for c, ps, ns, lo, hi in zip(center, prev_step, new_step, self.lower, self.upper):
            k = int(np.floor(self.window * ps / ns + 1e-9))
            ax = np.clip(c + ns * np.arange(-k, k + 1), lo, hi)
            axes.append(np.unique(np.append(ax, c)))
        return axes

    def on_boundary(self, point):
        tol = 1e-12 * np.maximum(1.0, np.abs(self.upper - self.lower))
        p = np.atleast_1d(point)
        return (np.abs(p - self.lower) <= tol) | (np.abs(p - self.upper) <= tol)


def _cartesian(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class _SearchResult:
    point: np.ndarray
    value: float
    history: list
    n_candidates: int


def grid_search(objective, grid, chunk=8192):
    """Maximize a vectorized ``objective(points (n, d)) -> (n,)`` over ``grid``.

    Candidates are ordered lexicographically and the first maximum wins, so
    ties go to the smallest coordinates.  The incumbent is re-evaluated at
    every level, so the objective never decreases across levels.
    """

    def best_of(axes):
        pts = _cartesian(axes)
        vals = np.concatenate([objective(pts[a : a + chunk]) for a in range(0, len(pts), chunk)])
        i = int(np.argmax(vals))
        return pts[i], float(vals[i]), len(pts)

    point, value, n = best_of(grid.coarse_axes())
    history = [value]
    step = grid.step
    for level in range(grid.levels):
        new_step = np.maximum(step * grid.shrink, grid.floor)
        cand, cval, k = best_of(grid.local_axes(point, step, new_step))
        n += k
        if cval >= value:
            point, value = cand, cval
        history.append(value)
        step = new_step
    return _SearchResult(point, value, history, n)


@dataclass(frozen=True)
class DelayGrid:
    """Delay search range in seconds; steps are counted in samples."""

    lower: float
    upper: float
    step_samples: int = 4
    levels: int = 3
    shrink: float = 0.2
    window: int = 2

    def __post_init__(self):
        if self.upper < self.lower:
            raise ValueError("delay bounds must be ordered")
        if self.step_samples < 1:
            raise ValueError("delay step must be at least one sample")

    def lags(self, dt):
        return int(np.floor(self.lower / dt + 1e-9)), int(np.ceil(self.upper / dt - 1e-9))

    def shifted(self, offset):
        return DelayGrid(self.lower + offset, self.upper + offset, self.step_samples, self.levels, self.shrink, self.window)


def _lag_search(stat, q_lo, q_hi, grid, n_rows):
    """Vectorized multilevel argmax over integer lags for ``n_rows`` independent rows.

    ``stat(rows, lags)`` returns the statistic at ``lags``, shape (r, L).  On
    the coarse level ``lags`` is one shared 1-D array, later levels pass a
    per-row (r, L) array.
    Returns best lags, best values and the number of distinct lags probed per row.
    """
    step = grid.step_samples
    coarse = np.arange(q_lo, q_hi + 1, step)
    if coarse[-1] != q_hi:
        coarse = np.append(coarse, q_hi)
    rows = np.arange(n_rows)
    vals = stat(rows, coarse)
    i = np.argmax(vals, axis=1)
    best, bval = coarse[i], vals[rows, i]
    probed = coarse.size
    for _ in range(grid.levels):
        new = max(1, int(round(step * grid.shrink)))
        k = (grid.window * step) // new
        offs = new * np.arange(-k, k + 1)
        cand = np.clip(best[:, None] + offs, q_lo, q_hi)
        v = stat(rows, cand)
        # clipped duplicates sort after the first copy, so argmax keeps the smallest lag
        order = np.argsort(cand, axis=1, kind="stable")
        cand = np.take_along_axis(cand, order, 1)
        v = np.take_along_axis(v, order, 1)
        j = np.argmax(v, axis=1)
        better = v[rows, j] > bval
        tie = (v[rows, j] == bval) & (cand[rows, j] < best)
        upd = better | tie
        best = np.where(upd, cand[rows, j], best)
        bval = np.where(upd, v[rows, j], bval)
        probed += offs.size - 1
        step = new
    return best, bval, probed


# ------------------------------------------------------------------ models


@dataclass(frozen=True)
class DistanceModel:
    """Receiver-side knowledge for one LED in the axial geometry."""

    gammas: np.ndarray
    sigma2: np.ndarray
    lambertian_order: float
    energies: object
    waveforms: tuple

    def __post_init__(self):
        object.__setattr__(self, "gammas", np.atleast_2d(np.asarray(self.gammas, dtype=float)))
        object.__setattr__(self, "sigma2", np.atleast_1d(np.asarray(self.sigma2, dtype=float)))
        object.__setattr__(self, "waveforms", tuple(self.waveforms))

    @cached_property
    def kappas(self):
        return kappas(self.gammas, self.sigma2, self.energies)


@dataclass(frozen=True)
class PositionModel:
    leds: tuple
    rx: object
    energies: tuple

    def __post_init__(self):
        object.__setattr__(self, "leds", tuple(self.leds))
        object.__setattr__(self, "energies", tuple(self.energies))
        if len(self.leds) != len(self.energies):
            raise ValueError("need one CrossEnergies per LED")


@dataclass(frozen=True)
class DistanceEstimate:
    value: float
    objective: float
    boundary_flag: bool
    tau_hat: float = None
    gains_hat: np.ndarray = None
    identifiable: bool = True
    evaluations: int = 0
    history: tuple = ()


@dataclass(frozen=True)
class PositionEstimate:
    value: np.ndarray
    objective: float
    boundary_flags: np.ndarray
    tau_hat: np.ndarray = None
    gains_hat: np.ndarray = None
    identifiable: bool = True
    evaluations: int = 0
    history: tuple = field(default=())

    @property
    def boundary_flag(self):
        return bool(np.any(self.boundary_flags))


def _inverse_energy(E, name):
    cond = np.linalg.cond(E)
    if not np.isfinite(cond) or cond > SINGULAR_CONDITION:
        raise SingularEnergyError(f"E {name} is singular or ill-conditioned (cond={cond:.3e})")
    return np.linalg.inv(E)


# ------------------------------------------------------------------ distance


def _distance_table(frame, model, x_lo, x_hi):
    dt = frame.dt
    templates = sample_templates(model.waveforms, dt)
    return CorrelationTable(frame, templates, int(lag_of(x_lo / _C, dt)), int(lag_of(x_hi / _C, dt)))


def distance_s1_objective(x, table, model, dt):
    """``x^-(m+3) sum_j sum_i gamma R / sigma^2 - 0.5 x^-(2m+6) kappa``."""
    m = model.lambertian_order
    R = table(lag_of(x / _C, dt))
    lin = np.einsum("nji,ji->n", R, model.gammas / model.sigma2[:, None])
    return x ** (-m - 3) * lin - 0.5 * x ** (-2 * m - 6) * model.kappas.kappa


def ml_distance_s1(frame, model, grid):
    """Synchronous, known channel.  The distance step never drops below ``c*dt``."""
    grid = grid.with_floor(_C * frame.dt)
    table = _distance_table(frame, model, grid.lower[0], grid.upper[0])
    res = grid_search(lambda p: distance_s1_objective(p[:, 0], table, model, frame.dt), grid)
    x = float(res.point[0])
    return DistanceEstimate(
        x,
        res.value,
        bool(grid.on_boundary(x).any()),
        tau_hat=x / _C,
        evaluations=res.n_candidates * model.gammas.size,
        history=tuple(res.history),
    )


def _rss_statistic(R, model):
    return float(np.sum(model.gammas * R / model.sigma2[:, None]))


def _invert_power_law(stat, model):
    k = model.kappas.kappa
    if not stat > 0:
        raise NonPositiveStatisticError(f"non-positive RSS statistic {stat:.3e}")
    return (stat / k) ** (-1.0 / (model.lambertian_order + 3))


def ml_distance_s2(frame, model, tau_grid):
    """Asynchronous, known channel: delay search, then power-law inversion of the RSS statistic."""
    dt = frame.dt
    q_lo, q_hi = tau_grid.lags(dt)
    table = CorrelationTable(frame, sample_templates(model.waveforms, dt), q_lo, q_hi)
    w = (model.gammas / model.sigma2[:, None]).ravel()

    def stat(rows, lags):
        return np.broadcast_to(table(lags).reshape(lags.shape + (-1,)) @ w, (len(rows), lags.shape[-1]))

    q, val, probed = _lag_search(stat, q_lo, q_hi, tau_grid, 1)
    q, val = int(q[0]), float(val[0])
    x = _invert_power_law(val, model)
    return DistanceEstimate(
        x,
        val,
        q in (q_lo, q_hi),
        tau_hat=q * dt,
        evaluations=probed * model.gammas.size,
    )


def ml_distance_s3(frame, model, grid):
    """Synchronous, unknown gains: maximize ``sum_j R_j^T E^-1 R_j / sigma_j^2``."""
    Einv = _inverse_energy(model.energies.E, "of the LED")
    grid = grid.with_floor(_C * frame.dt)
    table = _distance_table(frame, model, grid.lower[0], grid.upper[0])
    w = 1 / model.sigma2

    def objective(p):
        R = table(lag_of(p[:, 0] / _C, frame.dt))
        return np.einsum("nji,il,njl,j->n", R, Einv, R, w)

    res = grid_search(objective, grid)
    x = float(res.point[0])
    R = table(lag_of(np.array([x / _C]), frame.dt))[0]
    return DistanceEstimate(
        x,
        res.value,
        bool(grid.on_boundary(x).any()),
        tau_hat=x / _C,
        gains_hat=R @ Einv.T,
        identifiable=res.value > 0,
        evaluations=res.n_candidates * model.gammas.size,
        history=tuple(res.history),
    )


def ml_distance_s1_modified(frame, model, grid):
    """Power-law inversion of the RSS statistic at the delay of the plain synchronous estimate."""
    first = ml_distance_s1(frame, model, grid)
    table = _distance_table(frame, model, first.value, first.value)
    stat = _rss_statistic(table(lag_of(np.array([first.value / _C]), frame.dt))[0], model)
    return DistanceEstimate(
        _invert_power_law(stat, model),
        stat,
        first.boundary_flag,
        tau_hat=first.tau_hat,
        evaluations=first.evaluations + model.gammas.size,
        history=first.history,
    )


# ------------------------------------------------------------------ position


def box_delay_range(lt, lower, upper):
    """Smallest and largest propagation delay from ``lt`` to any point of a box."""
    lt = np.asarray(lt, dtype=float)
    near = np.clip(lt, lower, upper)
    corners = _cartesian([[lo, hi] for lo, hi in zip(lower, upper)])
    return float(np.linalg.norm(near - lt)) / _C, float(np.max(np.linalg.norm(corners - lt, axis=1))) / _C


def position_tables(frames, model, lower, upper, offsets=None):
    """One correlation table per LED covering every delay the box can produce."""
    tables = []
    for k, (frame, led) in enumerate(zip(frames, model.leds)):
        lo, hi = box_delay_range(led.location, lower, upper)
        if offsets is not None:
            lo, hi = lo + offsets[k][0], hi + offsets[k][1]
        dt = frame.dt
        q_lo, q_hi = int(np.floor(lo / dt)), int(np.ceil(hi / dt))
        tables.append(CorrelationTable(frame, sample_templates(led.waveforms, dt), q_lo, q_hi))
    return tables


def _check_frames(frames, model):
    if len(frames) != len(model.leds):
        raise ValueError("need one frame per LED")


def position_s1_objective(points, tables, model, dt):
    rx = model.rx
    w = 1 / rx.noise_psd
    total = np.zeros(len(points))
    for led, ce, table in zip(model.leds, model.energies, tables):
        H = gain_matrix(led, rx, points)
        R = table(lag_of(toa(points, led.location), dt))
        total += np.einsum("j,nji,nji->n", w, H, R) - 0.5 * np.einsum("j,nji,il,njl->n", w, H, ce.E, H)
    return total


def ml_position_s1(frames, model, grid):
    """Synchronous, known channel: 3-D search with gains and delays recomputed per candidate."""
    _check_frames(frames, model)
    dt = frames[0].dt
    tables = position_tables(frames, model, grid.lower, grid.upper)
    res = grid_search(lambda p: position_s1_objective(p, tables, model, dt), grid)
    per = model.rx.n_pd * model.rx.n_colors * len(model.leds)
    return PositionEstimate(
        res.point,
        res.value,
        grid.on_boundary(res.point),
        tau_hat=np.array([toa(res.point, led.location) for led in model.leds]),
        evaluations=res.n_candidates * per,
        history=tuple(res.history),
    )


class _S2Objective:
    """Per-candidate delay search; remembers the delays and lags probed."""

    def __init__(self, tables, model, tau_grids, dt):
        self.tables, self.model, self.tau_grids, self.dt = tables, model, tau_grids, dt
        self.lags_probed = 0

    def delays(self, points):
        rx = self.model.rx
        w = 1 / rx.noise_psd
        out_q = np.empty((len(points), len(self.model.leds)), dtype=np.int64)
        out_v = np.empty_like(out_q, dtype=float)
        probed = 0
        for k, (led, table, tg) in enumerate(zip(self.model.leds, self.tables, self.tau_grids)):
            Hw = (gain_matrix(led, rx, points) * w[:, None]).reshape(len(points), -1)

            def stat(rows, lags):
                R = table(lags).reshape(lags.shape + (-1,))
                if lags.ndim == 1:
                    return Hw[rows] @ R.T
                return np.einsum("rlp,rp->rl", R, Hw[rows])

            q_lo, q_hi = tg.lags(self.dt)
            out_q[:, k], out_v[:, k], p = _lag_search(stat, q_lo, q_hi, tg, len(points))
            probed += p
        return out_q, out_v, probed

    def __call__(self, points):
        rx = self.model.rx
        w = 1 / rx.noise_psd
        _, v, probed = self.delays(points)
        self.lags_probed += probed * len(points)
        total = v.sum(axis=1)
        for led, ce in zip(self.model.leds, self.model.energies):
            H = gain_matrix(led, rx, points)
            total -= 0.5 * np.einsum("j,nji,il,njl->n", w, H, ce.E, H)
        return total


def default_tau_grids(model, lower, upper, offset_range=(0.0, 0.0)):
    """Delay grids spanning the box-induced delays widened by a clock-offset range."""
    return [
        DelayGrid(lo + offset_range[0], hi + offset_range[1])
        for lo, hi in (box_delay_range(led.location, lower, upper) for led in model.leds)
    ]


def ml_position_s2(frames, model, grid, tau_grids):
    """Asynchronous, known channel: a 3-D search with one delay search per LED and candidate."""
    _check_frames(frames, model)
    dt = frames[0].dt
    offsets = []
    for led, tg in zip(model.leds, tau_grids):
        lo, hi = box_delay_range(led.location, grid.lower, grid.upper)
        offsets.append((min(0.0, tg.lower - lo), max(0.0, tg.upper - hi)))
    tables = position_tables(frames, model, grid.lower, grid.upper, offsets)
    # delay grids must sit inside the tables
    tau_grids = [
        DelayGrid(max(tg.lower, t.q_lo * dt), min(tg.upper, t.q_hi * dt), tg.step_samples, tg.levels, tg.shrink, tg.window)
        for tg, t in zip(tau_grids, tables)
    ]
    obj = _S2Objective(tables, model, tau_grids, dt)
    res = grid_search(obj, grid)
    q, _, _ = obj.delays(res.point[None, :])
    per = model.rx.n_pd * model.rx.n_colors
    return PositionEstimate(
        res.point,
        res.value,
        grid.on_boundary(res.point),
        tau_hat=q[0] * dt,
        evaluations=obj.lags_probed * per,
        history=tuple(res.history),
    )


def position_s3_objective(points, tables, model, dt, inverses):
    w = 0.5 / model.rx.noise_psd
    total = np.zeros(len(points))
    for led, table, Einv in zip(model.leds, tables, inverses):
        R = table(lag_of(toa(points, led.location), dt))
        total += np.einsum("nji,il,njl,j->n", R, Einv, R, w)
    return total


def ml_position_s3(frames, model, grid):
    """Synchronous, unknown gains: profiled-gain objective ``sum R^T E^-1 R / (2 sigma^2)``."""
    _check_frames(frames, model)
    dt = frames[0].dt
    inverses = [_inverse_energy(ce.E, f"of LED {k + 1}") for k, ce in enumerate(model.energies)]
    tables = position_tables(frames, model, grid.lower, grid.upper)
    res = grid_search(lambda p: position_s3_objective(p, tables, model, dt, inverses), grid)
    gains = np.stack(
        [
            table(lag_of(toa(res.point[None, :], led.location), dt))[0] @ Einv.T
            for led, table, Einv in zip(model.leds, tables, inverses)
        ]
    )
    per = model.rx.n_pd * model.rx.n_colors * len(model.leds)
    return PositionEstimate(
        res.point,
        res.value,
        grid.on_boundary(res.point),
        tau_hat=np.array([toa(res.point, led.location) for led in model.leds]),
        gains_hat=gains,
        identifiable=res.value > 0,
        evaluations=res.n_candidates * per,
        history=tuple(res.history),
    )

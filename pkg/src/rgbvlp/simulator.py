"""Frame synthesis, Monte Carlo trials and bound sweeps.

Noise model: white Gaussian noise with spectral level ``sigma_j^2`` sampled
at interval ``dt`` has per-sample variance ``sigma_j^2 / dt``.  With that
choice ``dt * sum y s`` has the variance of the continuous matched filter,
``sigma^2 * int s^2``.

Randomness: trial ``t`` of sweep value ``v`` draws from
``PCG64(SeedSequence(seed, spawn_key=(v, t)))``.  Streams depend only on
``(seed, v, t)``, so results do not depend on execution order and every
estimator run with the same seed sees the same noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import bounds
from .estimators import (
    DelayGrid,
    DistanceModel,
    NonPositiveStatisticError,
    PositionModel,
    ReceivedFrame,
    SearchGrid,
    SingularEnergyError,
    WindowError,
    box_delay_range,
    default_tau_grids,
    ml_distance_s1,
    ml_distance_s1_modified,
    ml_distance_s2,
    ml_distance_s3,
    ml_position_s1,
    ml_position_s2,
    ml_position_s3,
    template_length,
)
from .geometry import SPEED_OF_LIGHT, gain_matrix, toa

RNG_ALGORITHM = "PCG64 via SeedSequence(seed, spawn_key=(value_index, trial))"

_C = SPEED_OF_LIGHT

# errors an estimator may raise on an unlucky noise draw; counted, not fatal
TRIAL_ERRORS = (NonPositiveStatisticError, WindowError, SingularEnergyError)


def trial_rng(seed, value_index, trial):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(value_index, trial))))


# ------------------------------------------------------------------ scenes


@dataclass(frozen=True)
class DistanceScene:
    """One LED straight above a receiver plane; the true distance is ``distance``.

    ``offset_range`` bounds the unknown clock offset for the asynchronous
    estimator; the frame window covers it.
    """

    model: DistanceModel
    distance: float
    dt: float
    grid: SearchGrid
    clock_offset: float = 0.0
    offset_range: tuple = (0.0, 0.0)
    delay_step_samples: int = 4

    @property
    def tau_grid(self):
        lo, hi = self.offset_range
        return DelayGrid(
            self.grid.lower[0] / _C + lo,
            self.grid.upper[0] / _C + hi,
            self.delay_step_samples,
            self.grid.levels,
            self.grid.shrink,
            self.grid.window,
        )

    @property
    def true_delay(self):
        return self.distance / _C + self.clock_offset

    def window(self):
        """``(start_index, n_samples)`` covering ``[tau_min, tau_max + T_s]``."""
        tg = self.tau_grid
        lo = min(self.grid.lower[0] / _C, tg.lower)
        hi = max(self.grid.upper[0] / _C, tg.upper)
        q_lo, q_hi = int(np.floor(lo / self.dt)) - 1, int(np.ceil(hi / self.dt)) + 1
        M = max(template_length(w, self.dt) for w in self.model.waveforms)
        return q_lo, q_hi - q_lo + M

    def true_gains(self):
        return bounds.axial_gains(self.model.gammas, self.distance, self.model.lambertian_order)


@dataclass(frozen=True)
class PositionScene:
    """LEDs and receiver in a room; the receiver's true location is ``rx.location``."""

    model: PositionModel
    dt: float
    grid: SearchGrid
    offset_range: tuple = (0.0, 0.0)
    delay_step_samples: int = 4

    @property
    def location(self):
        return self.model.rx.location

    def tau_grids(self):
        grids = default_tau_grids(self.model, self.grid.lower, self.grid.upper, self.offset_range)
        return [
            DelayGrid(g.lower, g.upper, self.delay_step_samples, self.grid.levels, self.grid.shrink, self.grid.window)
            for g in grids
        ]

    def windows(self):
        out = []
        for led in self.model.leds:
            lo, hi = box_delay_range(led.location, self.grid.lower, self.grid.upper)
            lo, hi = lo + min(0.0, self.offset_range[0]), hi + max(0.0, self.offset_range[1])
            q_lo, q_hi = int(np.floor(lo / self.dt)) - 1, int(np.ceil(hi / self.dt)) + 1
            M = max(template_length(w, self.dt) for w in led.waveforms)
            out.append((q_lo, q_hi - q_lo + M))
        return out

    def true_delays(self, location=None):
        lr = self.location if location is None else location
        return np.array([toa(lr, led.location, led.clock_offset) for led in self.model.leds])


def _superpose(waveforms, gains, tau, start, n, dt):
    t = dt * (start + np.arange(n)) - tau
    S = np.stack([w(t) for w in waveforms])
    return gains @ S


def _check_window(tau, start, n, duration, dt):
    if tau < start * dt or tau + duration > (start + n - 1) * dt:
        raise WindowError(f"delayed support [{tau:.4e}, {tau + duration:.4e}] s leaves the window")


def noiseless_frames(scene, location=None):
    """Deterministic superposition ``sum_i h_ji s_i(t - tau)`` per LED."""
    if isinstance(scene, DistanceScene):
        start, n = scene.window()
        tau = scene.true_delay
        _check_window(tau, start, n, max(w.duration for w in scene.model.waveforms), scene.dt)
        y = _superpose(scene.model.waveforms, scene.true_gains(), tau, start, n, scene.dt)
        return [ReceivedFrame(y, scene.dt, start)]
    lr = scene.location if location is None else np.asarray(location, dtype=float)
    frames = []
    for led, (start, n), tau in zip(scene.model.leds, scene.windows(), scene.true_delays(lr)):
        _check_window(tau, start, n, max(w.duration for w in led.waveforms), scene.dt)
        y = _superpose(led.waveforms, gain_matrix(led, scene.model.rx, lr), tau, start, n, scene.dt)
        frames.append(ReceivedFrame(y, scene.dt, start))
    return frames


def synchronized(scene):
    """The same scene with every clock offset set to zero."""
    if isinstance(scene, DistanceScene):
        return replace(scene, clock_offset=0.0)
    leds = tuple(replace(led, clock_offset=0.0) for led in scene.model.leds)
    return replace(scene, model=replace(scene.model, leds=leds))


def _noise_psd(scene):
    return scene.model.sigma2 if isinstance(scene, DistanceScene) else scene.model.rx.noise_psd


def add_noise(frames, sigma2, rng):
    """Independent white noise per PD and LED, per-sample variance ``sigma^2 / dt``."""
    out = []
    for f in frames:
        std = np.sqrt(np.asarray(sigma2) / f.dt)[:, None]
        out.append(ReceivedFrame(f.samples + std * rng.standard_normal(f.samples.shape), f.dt, f.start_index))
    return out


def synthesize_frames(scene, rng=None):
    """Noisy received frames for the scene's true state; ``rng=None`` gives noise-free frames."""
    frames = noiseless_frames(scene)
    return frames if rng is None else add_noise(frames, _noise_psd(scene), rng)


# ------------------------------------------------------------------ sweeps


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ValueError("sweep values must be non-empty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass(frozen=True)
class SweepRow:
    variable: str
    value: object
    scenario: str
    crlb_rmse_m: float
    estimator: str = ""
    mc_rmse_m: float = float("nan")
    mc_stderr_m: float = float("nan")
    trials: int = 0
    boundary_hits: int = 0
    error_trials: int = 0
    seed: int = 0
    flags: tuple = field(default=())


DISTANCE_ESTIMATORS = {
    "s1": ml_distance_s1,
    "s1m": ml_distance_s1_modified,
    "s2": ml_distance_s2,
    "s3": ml_distance_s3,
}

POSITION_ESTIMATORS = {"s1": ml_position_s1, "s2": ml_position_s2, "s3": ml_position_s3}

# the modified estimator targets the synchronous bound
ESTIMATOR_SCENARIO = {"s1": "s1", "s1m": "s1", "s2": "s2", "s3": "s3"}


def estimate_distance(estimator, frames, scene):
    fn = DISTANCE_ESTIMATORS[estimator]
    if estimator == "s2":
        return fn(frames[0], scene.model, scene.tau_grid)
    return fn(frames[0], scene.model, scene.grid)


def estimate_position(estimator, frames, scene):
    fn = POSITION_ESTIMATORS[estimator]
    if estimator == "s2":
        return fn(frames, scene.model, scene.grid, scene.tau_grids())
    return fn(frames, scene.model, scene.grid)


def distance_crlb(scene, scenario):
    m = scene.model
    return bounds.crlb_distance(scenario, scene.distance, m.lambertian_order, m.gammas, m.sigma2, m.energies)


def position_crlb(scene, scenario):
    m = scene.model
    return bounds.crlb_position(scenario, m.leds, m.rx, m.energies)


def _summarize(errors_sq):
    n = errors_sq.size
    if n == 0:
        return float("nan"), float("nan")
    mse = errors_sq.mean()
    rmse = float(np.sqrt(mse))
    if n < 2 or rmse == 0:
        return rmse, 0.0
    # delta method on sqrt of the sample mean
    return rmse, float(errors_sq.std(ddof=1) / np.sqrt(n) / (2 * rmse))


def _run_mc(spec, scene_for, estimators, estimate, crlb, error_sq, value_indices=None):
    rows = []
    for vi, value in enumerate(spec.values):
        if value_indices is not None and vi not in value_indices:
            continue
        # only the asynchronous estimator faces clock offsets; windows are shared,
        # so all estimators see identical noise draws
        scenes = {"s2": scene_for(value)}
        scenes["sync"] = synchronized(scenes["s2"])
        clean = {k: noiseless_frames(sc) for k, sc in scenes.items()}
        psd = _noise_psd(scenes["s2"])
        results = {e: ([], 0, 0) for e in estimators}
        for trial in range(spec.trials):
            noisy = {}
            for e in estimators:
                key = "s2" if e == "s2" else "sync"
                if key not in noisy:
                    noisy[key] = add_noise(clean[key], psd, trial_rng(spec.seed, vi, trial))
                frames, scene = noisy[key], scenes[key]
                errs, hits, fails = results[e]
                try:
                    est = estimate(e, frames, scene)
                except TRIAL_ERRORS:
                    results[e] = (errs, hits, fails + 1)
                    continue
                errs.append(error_sq(est, scene))
                results[e] = (errs, hits + int(est.boundary_flag), fails)
        for e in estimators:
            errs, hits, fails = results[e]
            b = crlb(scenes["sync"], ESTIMATOR_SCENARIO[e])
            rmse, se = _summarize(np.asarray(errs, dtype=float))
            rows.append(
                SweepRow(
                    spec.variable,
                    value,
                    ESTIMATOR_SCENARIO[e],
                    b.rmse_bound,
                    e,
                    rmse,
                    se,
                    spec.trials,
                    hits,
                    fails,
                    spec.seed,
                    ("singular",) if b.singular_flag else (),
                )
            )
    return rows


def run_mc_distance(spec, scene_for: Callable, estimators=("s1", "s1m", "s2", "s3"), value_indices=None):
    """Monte Carlo RMSE of distance estimators, paired with the matching bound.

    ``value_indices`` restricts the run to some sweep values; noise streams are
    keyed by the index in the full sweep, so the rows match a full run.
    """
    return _run_mc(
        spec,
        scene_for,
        tuple(estimators),
        estimate_distance,
        distance_crlb,
        lambda est, scene: (est.value - scene.distance) ** 2,
        value_indices,
    )


def run_mc_position(spec, scene_for: Callable, estimators=("s1", "s2", "s3"), value_indices=None):
    """Monte Carlo RMSE (3-D error norm) of position estimators, paired with the matching bound."""
    return _run_mc(
        spec,
        scene_for,
        tuple(estimators),
        estimate_position,
        position_crlb,
        lambda est, scene: float(np.sum((est.value - scene.location) ** 2)),
        value_indices,
    )


def crlb_sweep(spec, scene_for: Callable, scenarios=("s1", "s2", "s3")):
    """Bounds only: one row per (value, scenario)."""
    rows = []
    for value in spec.values:
        scene = scene_for(value)
        crlb = distance_crlb if isinstance(scene, DistanceScene) else position_crlb
        for s in scenarios:
            b = crlb(scene, s)
            rows.append(SweepRow(spec.variable, value, s, b.rmse_bound, flags=("singular",) if b.singular_flag else ()))
    return rows


# ------------------------------------------------------------------ empirical Fisher information


def score_samples(scene, n_draws, seed, step=1e-6, batch=500):
    """Numerical score of the synchronous log-likelihood at the true location.

    Each row is the central difference ``(L(l + h e_n) - L(l - h e_n)) / 2h``
    for one noise draw, written in the algebraically equivalent form
    ``dt/sigma^2 * sum (y - (mu+ + mu-)/2) (mu+ - mu-) / 2h`` to avoid
    cancellation.  The sample covariance estimates the FIM.
    """
    psd = scene.model.rx.noise_psd
    clean = noiseless_frames(scene)
    lr = scene.location
    mids, slopes = [], []
    for n in range(3):
        e = np.zeros(3)
        e[n] = step
        plus, minus = noiseless_frames(scene, lr + e), noiseless_frames(scene, lr - e)
        mids.append([0.5 * (p.samples + q.samples) for p, q in zip(plus, minus)])
        slopes.append([(p.samples - q.samples) / (2 * step) for p, q in zip(plus, minus)])
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    out = np.zeros((n_draws, 3))
    for a in range(0, n_draws, batch):
        b = min(n_draws, a + batch)
        for k, f in enumerate(clean):
            w = (f.dt / psd)[:, None]
            std = np.sqrt(psd / f.dt)[:, None]
            noise = std * rng.standard_normal((b - a,) + f.samples.shape)
            for n in range(3):
                g = w * slopes[n][k]
                out[a:b, n] += np.einsum("dpt,pt->d", noise, g) + np.sum((f.samples - mids[n][k]) * g)
    return out

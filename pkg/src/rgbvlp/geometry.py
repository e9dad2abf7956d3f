"""Spatial configuration, time of arrival and Lambertian line-of-sight gains.

Every function that takes a receiver location also accepts a stack of
locations with shape ``(..., 3)``; the estimators rely on this to score whole
candidate grids in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Speed of light in vacuum, m/s.
SPEED_OF_LIGHT = 299_792_458.0

COLORS = ("r", "g", "b")

_UNIT_TOL = 1e-12


class GeometryError(ValueError):
    """Raised for degenerate geometry such as coincident receiver and LED."""


def _as_vec3(v, name):
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    return arr


def _as_unit(v, name):
    arr = _as_vec3(v, name)
    if abs(np.linalg.norm(arr) - 1.0) > _UNIT_TOL:
        raise ValueError(f"{name} must be a unit vector, norm={np.linalg.norm(arr)!r}")
    return arr


@dataclass(frozen=True)
class LedTransmitter:
    """One luminaire: location, pointing direction, Lambertian order, clock offset.

    ``waveforms`` holds one waveform per emitted color; three for an RGB LED.
    """

    location: np.ndarray
    orientation: np.ndarray
    lambertian_order: float = 1.0
    waveforms: tuple = ()
    clock_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "location", _as_vec3(self.location, "location"))
        object.__setattr__(self, "orientation", _as_unit(self.orientation, "orientation"))
        if self.lambertian_order < 1:
            raise ValueError(f"lambertian_order must be >= 1, got {self.lambertian_order}")
        object.__setattr__(self, "waveforms", tuple(self.waveforms))


@dataclass(frozen=True)
class VlcReceiver:
    """Receiver with one photodetector per row of ``responsivity``.

    ``responsivity[j, i]`` couples emitted color ``i`` into PD ``j``.
    ``noise_psd`` is the white-noise spectral density level per PD in W/Hz.
    """

    location: np.ndarray
    orientation: np.ndarray
    pd_areas: np.ndarray
    responsivity: np.ndarray
    noise_psd: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "location", _as_vec3(self.location, "location"))
        object.__setattr__(self, "orientation", _as_unit(self.orientation, "orientation"))
        resp = np.atleast_2d(np.asarray(self.responsivity, dtype=float))
        areas = np.atleast_1d(np.asarray(self.pd_areas, dtype=float))
        psd = np.atleast_1d(np.asarray(self.noise_psd, dtype=float))
        n_pd = resp.shape[0]
        if areas.shape != (n_pd,) or psd.shape != (n_pd,):
            raise ValueError("pd_areas and noise_psd need one entry per responsivity row")
        if np.any(areas <= 0):
            raise ValueError("pd_areas must be positive")
        if np.any(psd <= 0):
            raise ValueError("noise_psd must be positive")
        if np.any(resp < 0):
            raise ValueError("responsivity entries must be non-negative")
        if resp.shape[0] == resp.shape[1] and np.any(np.diag(resp) <= 0):
            raise ValueError("responsivity diagonal must be strictly positive")
        object.__setattr__(self, "responsivity", resp)
        object.__setattr__(self, "pd_areas", areas)
        object.__setattr__(self, "noise_psd", psd)

    @property
    def n_pd(self):
        return self.responsivity.shape[0]

    @property
    def n_colors(self):
        return self.responsivity.shape[1]

    def moved_to(self, location):
        return VlcReceiver(location, self.orientation, self.pd_areas, self.responsivity, self.noise_psd)


def orientation_from_angles(theta_deg, phi_deg):
    """Unit vector from polar angle ``theta`` and azimuth ``phi`` in degrees."""
    theta, phi = np.radians(theta_deg), np.radians(phi_deg)
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


def _offset(lr, lt):
    d = np.asarray(lr, dtype=float) - np.asarray(lt, dtype=float)
    dist = np.linalg.norm(d, axis=-1)
    if np.any(dist == 0.0):
        raise GeometryError("receiver and transmitter locations coincide")
    return d, dist


def toa(lr, lt, delta=0.0):
    """Propagation delay plus clock offset, in seconds."""
    _, dist = _offset(lr, lt)
    return dist / SPEED_OF_LIGHT + delta


def grad_toa(lr, lt):
    """Gradient of :func:`toa` with respect to the receiver location (s/m)."""
    d, dist = _offset(lr, lt)
    return d / (SPEED_OF_LIGHT * dist[..., None])


def line_of_sight(lr, nr, lt, nt):
    """True where the receiver is in the LED's forward half-space and faces it."""
    d = np.asarray(lr, dtype=float) - np.asarray(lt, dtype=float)
    return (d @ np.asarray(nt) > 0) & (d @ np.asarray(nr) < 0)


def lambertian_factor(lr, nr, lt, nt, m):
    """Geometric part of the gain: everything except ``A_j * R_ji``.

    Zero wherever :func:`line_of_sight` fails.
    """
    d, dist = _offset(lr, lt)
    cos_t = d @ np.asarray(nt, dtype=float)
    cos_r = d @ np.asarray(nr, dtype=float)
    los = (cos_t > 0) & (cos_r < 0)
    ct = np.where(los, cos_t, 0.0)
    g = -(m + 1) / (2 * np.pi) * ct**m * cos_r / dist ** (m + 3)
    return np.where(los, g, 0.0)


def grad_lambertian_factor(lr, nr, lt, nt, m):
    """Gradient of :func:`lambertian_factor` with respect to ``lr``; shape ``(..., 3)``."""
    nt = np.asarray(nt, dtype=float)
    nr = np.asarray(nr, dtype=float)
    d, dist = _offset(lr, lt)
    cos_t = d @ nt
    cos_r = d @ nr
    los = (cos_t > 0) & (cos_r < 0)
    ct = np.where(los, cos_t, 1.0)[..., None]
    cr = cos_r[..., None]
    r = dist[..., None]
    first = ct ** (m - 1) / r ** (m + 3) * (m * nt * cr + nr * ct)
    second = (m + 3) * d / r ** (m + 5) * ct**m * cr
    grad = -(m + 1) / (2 * np.pi) * (first - second)
    return np.where(los[..., None], grad, 0.0)


def channel_gain(lr, nr, lt, nt, m, area, resp):
    """Line-of-sight channel attenuation for one PD / color pair.

    Returns 0 when the half-space conditions fail; use :func:`line_of_sight`
    to tell a blocked link from a weak one.
    """
    return lambertian_factor(lr, nr, lt, nt, m) * area * resp


def grad_channel_gain(lr, nr, lt, nt, m, area, resp):
    """Analytic gradient of :func:`channel_gain` with respect to ``lr`` (1/m)."""
    return grad_lambertian_factor(lr, nr, lt, nt, m) * (area * resp)


def gamma_coeff(area, m, h_tilde, resp):
    """Coefficient of the axial power law ``h = gamma * x**-(m+3)``."""
    if np.any(np.asarray(area) <= 0) or h_tilde <= 0 or m < 1:
        raise ValueError("gamma_coeff needs area > 0, h_tilde > 0 and m >= 1")
    return np.asarray(area) * (m + 1) * h_tilde ** (m + 1) * np.asarray(resp) / (2 * np.pi)


def gamma_matrix(rx, m, h_tilde):
    """All ``gamma[j, i]`` for a receiver: PD areas broadcast along rows."""
    return gamma_coeff(rx.pd_areas[:, None], m, h_tilde, rx.responsivity)


def gain_matrix(led, rx, lr=None):
    """Channel gains ``h[..., j, i]`` from ``led`` to ``rx`` (at ``lr`` if given)."""
    lr = rx.location if lr is None else lr
    g = lambertian_factor(lr, rx.orientation, led.location, led.orientation, led.lambertian_order)
    return np.asarray(g)[..., None, None] * rx.pd_areas[:, None] * rx.responsivity


def gain_gradients(led, rx, lr=None):
    """Gradients ``dh[..., j, i, n]`` of :func:`gain_matrix` along coordinate ``n``."""
    lr = rx.location if lr is None else lr
    dg = grad_lambertian_factor(lr, rx.orientation, led.location, led.orientation, led.lambertian_order)
    scale = rx.pd_areas[:, None] * rx.responsivity
    return dg[..., None, None, :] * scale[..., None]

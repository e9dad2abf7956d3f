"""Fisher information and Cramer-Rao bounds for distance and 3-D position.

Distance bounds use the axial geometry (LED straight above, known height), in
which every gain is ``gamma[j, i] * x**-(m+3)``.  Position bounds take the
general Lambertian model and a list of LEDs.

Scenario labels used throughout:

* ``s1``: synchronous, channel formula known.  Unknown: distance/position.
* ``s2``: asynchronous, channel formula known.  Delays are nuisance parameters.
* ``s3``: synchronous, channel formula unknown.  Gains are nuisance parameters.

Nuisance parameters are always removed with explicit Schur complements of the
assembled block FIM; :func:`dense_crlb` inverts the full matrix instead and is
kept as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .geometry import COLORS, SPEED_OF_LIGHT, gain_gradients, gain_matrix, grad_toa

#: Scaled condition number above which a FIM is reported as singular.
SINGULAR_CONDITION = 1e12

_C = SPEED_OF_LIGHT


class SingularBlockError(np.linalg.LinAlgError):
    """A nuisance block that must be inverted is singular."""


@dataclass(frozen=True)
class Kappas:
    """Noise-weighted energy sums of the axial distance model."""

    kappa: float
    kappa_prime: float
    kappa_dprime: float


@dataclass(frozen=True)
class FisherMatrix:
    labels: tuple
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (len(self.labels), len(self.labels)):
            raise ValueError("FIM shape does not match its labels")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclass(frozen=True)
class CrlbResult:
    """Variance bound in m^2 (sum over coordinates for position)."""

    variance_bound: float
    condition_number: float = 1.0
    singular_flag: bool = False

    @property
    def rmse_bound(self):
        return float(np.sqrt(self.variance_bound))


def _singular(cond=np.inf):
    return CrlbResult(np.inf, cond, True)


def scaled_condition(J):
    """Condition number of ``J`` after symmetric diagonal (Jacobi) scaling.

    Parameters with different units (meters vs seconds vs gains) make the raw
    condition number meaningless; the scaled one measures identifiability.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    d = np.diag(J)
    if np.any(d <= 0):
        return np.inf
    s = 1 / np.sqrt(d)
    ev = np.linalg.eigvalsh(J * s[:, None] * s[None, :])
    if ev[0] <= 0:
        return np.inf
    return float(ev[-1] / ev[0])


def _check_symmetric(J, rtol=1e-10):
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError("FIM must be square")
    if np.abs(J - J.T).max() > rtol * max(np.abs(J).max(), np.finfo(float).tiny):
        raise ValueError("FIM is not symmetric")


def trace_inverse(J):
    """``trace(J^-1)`` via a Cholesky factorization of the equilibrated matrix."""
    J = np.asarray(J.matrix if isinstance(J, FisherMatrix) else J, dtype=float)
    _check_symmetric(J)
    J = 0.5 * (J + J.T)
    cond = scaled_condition(J)
    if cond > SINGULAR_CONDITION:
        return _singular(cond)
    s = 1 / np.sqrt(np.diag(J))
    factor = cho_factor(J * s[:, None] * s[None, :])
    inv = cho_solve(factor, np.eye(J.shape[0]))
    return CrlbResult(float(np.sum(np.diag(inv) * s**2)), cond, False)


def _scalar_bound(info, cond=1.0):
    if not np.isfinite(info) or info <= 0 or cond > SINGULAR_CONDITION:
        return _singular(cond)
    return CrlbResult(1.0 / info, cond, False)


def dense_crlb(fim, n_interest):
    """Bound from the leading ``n_interest`` block of the full inverse FIM."""
    J = np.asarray(fim.matrix if isinstance(fim, FisherMatrix) else fim, dtype=float)
    _check_symmetric(J)
    d = np.sqrt(np.diag(J))
    if np.any(d <= 0):
        return _singular()
    Js = J / np.outer(d, d)
    cond = scaled_condition(J)
    inv = np.linalg.inv(Js) / np.outer(d, d)
    return CrlbResult(float(np.trace(inv[:n_interest, :n_interest])), cond, cond > SINGULAR_CONDITION)


# ---------------------------------------------------------------- distance


def kappas(gammas, sigma2, ce):
    """Sum over PDs of ``gamma_j^T M gamma_j / sigma_j^2`` for M in (E, E', E'')."""
    gammas = np.atleast_2d(np.asarray(gammas, dtype=float))
    w = 1.0 / np.asarray(sigma2, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("noise PSDs must be positive")

    def q(M):
        return float(np.einsum("j,ji,il,jl->", w, gammas, M, gammas))

    return Kappas(q(ce.E), q(ce.Ep), q(ce.Epp))


def fim_distance_s1(x, m, k):
    """Scalar information on ``x`` with RSS and TOA both informative."""
    if x <= 0:
        raise ValueError("distance must be positive")
    return (
        (m + 3) ** 2 * x ** (-2 * m - 8) * k.kappa
        + 2 * (m + 3) / _C * x ** (-2 * m - 7) * k.kappa_prime
        + x ** (-2 * m - 6) / _C**2 * k.kappa_dprime
    )


def crlb_distance_s1(x, m, k):
    return _scalar_bound(fim_distance_s1(x, m, k))


def fim_distance_s2(x, m, k):
    """2x2 FIM over ``(x, tau)`` when the clock offset is unknown."""
    if x <= 0:
        raise ValueError("distance must be positive")
    jxx = (m + 3) ** 2 * x ** (-2 * m - 8) * k.kappa
    jxt = (m + 3) * x ** (-2 * m - 7) * k.kappa_prime
    jtt = x ** (-2 * m - 6) * k.kappa_dprime
    return FisherMatrix(("x", "tau"), [[jxx, jxt], [jxt, jtt]])


def crlb_distance_s2(x, m, k):
    J = fim_distance_s2(x, m, k).matrix
    if J[1, 1] <= 0:
        return _scalar_bound(J[0, 0])
    return _scalar_bound(J[0, 0] - J[0, 1] ** 2 / J[1, 1], scaled_condition(J))


def crlb_distance_s2_closed_form(x, m, k):
    """Closed-form variance bound; cross-check for :func:`crlb_distance_s2`."""
    det = k.kappa * k.kappa_dprime - k.kappa_prime**2
    return k.kappa_dprime * x ** (2 * m + 8) / ((m + 3) ** 2 * det)


def fim_distance_s3_blocks(gains, sigma2, ce):
    """Blocks ``(A, B, D)`` of the FIM over ``x`` and the gains ``h[j, i]``.

    ``B`` has one row per PD (shape ``(P, C)``) and ``D`` is the list of
    per-PD diagonal blocks ``E / sigma_j^2``.
    """
    H = np.atleast_2d(np.asarray(gains, dtype=float))
    sigma2 = np.asarray(sigma2, dtype=float)
    A = float(np.einsum("j,ji,il,jl->", 1 / sigma2, H, ce.Epp, H)) / _C**2
    B = -(H @ ce.Ep.T) / (_C * sigma2[:, None])
    D = [ce.E / s2 for s2 in sigma2]
    return A, B, D


def fim_distance_s3(gains, sigma2, ce):
    """Full (1 + P*C) square FIM, gains ordered PD-major."""
    A, B, D = fim_distance_s3_blocks(gains, sigma2, ce)
    P, C = B.shape
    n = 1 + P * C
    J = np.zeros((n, n))
    J[0, 0] = A
    J[0, 1:] = J[1:, 0] = B.ravel()
    for j, Dj in enumerate(D):
        sl = slice(1 + j * C, 1 + (j + 1) * C)
        J[sl, sl] = Dj
    labels = ("x",) + tuple(f"h_{COLORS[j] if P == 3 else j},{COLORS[i] if C == 3 else i}" for j in range(P) for i in range(C))
    return FisherMatrix(labels, J)


def _block_solve(D, rhs, name):
    cond = np.linalg.cond(D)
    if not np.isfinite(cond) or cond > SINGULAR_CONDITION:
        raise SingularBlockError(f"nuisance block {name} is singular (cond={cond:.3e})")
    return np.linalg.solve(D, rhs)


def crlb_distance_s3(gains, sigma2, ce):
    """Distance bound with unknown gains: ``1 / (A - sum_j B_j D_j^-1 B_j^T)``."""
    A, B, D = fim_distance_s3_blocks(gains, sigma2, ce)
    correction = 0.0
    for j, (bj, Dj) in enumerate(zip(B, D)):
        correction += float(bj @ _block_solve(Dj, bj, f"PD {COLORS[j] if len(D) == 3 else j}"))
    info = A - correction
    # cancellation guard: information below rounding of A is zero information
    if info <= 1e-13 * abs(A):
        return _singular()
    return CrlbResult(1.0 / info, 1.0, False)


def axial_gains(gammas, x, m):
    """Gains on the axis geometry: ``gamma * x**-(m+3)``."""
    return np.asarray(gammas, dtype=float) * x ** (-m - 3)


# ---------------------------------------------------------------- position


@dataclass(frozen=True)
class LinkTerms:
    """Per-LED quantities at one receiver location."""

    gains: np.ndarray  # (P, C)
    dgains: np.ndarray  # (P, C, 3)
    dtau: np.ndarray  # (3,)


def link_terms(led, rx, lr=None):
    lr = rx.location if lr is None else np.asarray(lr, dtype=float)
    return LinkTerms(gain_matrix(led, rx, lr), gain_gradients(led, rx, lr), grad_toa(lr, led.location))


def _links(leds, rx, energies, lr):
    if len(leds) != len(energies):
        raise ValueError("need one CrossEnergies per LED")
    return [link_terms(led, rx, lr) for led in leds]


def fim_position_s1(leds, rx, energies, lr=None):
    """3x3 FIM on the receiver location with RSS and TOA both informative."""
    J = np.zeros((3, 3))
    for lt, ce in zip(_links(leds, rx, energies, lr), energies):
        for j, s2 in enumerate(rx.noise_psd):
            a, h = lt.dgains[j], lt.gains[j]
            cross = np.outer(a.T @ ce.Ep @ h, lt.dtau)
            J += (a.T @ ce.E @ a - cross - cross.T + np.outer(lt.dtau, lt.dtau) * (h @ ce.Epp @ h)) / s2
    return FisherMatrix(("x", "y", "z"), 0.5 * (J + J.T))


def crlb_position_s1(leds, rx, energies, lr=None):
    return trace_inverse(fim_position_s1(leds, rx, energies, lr))


def fim_position_s2_blocks(leds, rx, energies, lr=None):
    """``J_A`` (3x3), ``J_B`` (3xN_L) and the diagonal of ``J_D`` (N_L,)."""
    links = _links(leds, rx, energies, lr)
    JA = np.zeros((3, 3))
    JB = np.zeros((3, len(leds)))
    JD = np.zeros(len(leds))
    for k, (lt, ce) in enumerate(zip(links, energies)):
        for j, s2 in enumerate(rx.noise_psd):
            a, h = lt.dgains[j], lt.gains[j]
            JA += a.T @ ce.E @ a / s2
            JB[:, k] -= a.T @ ce.Ep @ h / s2
            JD[k] += h @ ce.Epp @ h / s2
    return 0.5 * (JA + JA.T), JB, JD


def fim_position_s2(leds, rx, energies, lr=None):
    JA, JB, JD = fim_position_s2_blocks(leds, rx, energies, lr)
    n = 3 + len(JD)
    J = np.zeros((n, n))
    J[:3, :3] = JA
    J[:3, 3:] = JB
    J[3:, :3] = JB.T
    J[3:, 3:] = np.diag(JD)
    return FisherMatrix(("x", "y", "z") + tuple(f"tau_{k + 1}" for k in range(len(JD))), J)


def equivalent_fim_position_s2(leds, rx, energies, lr=None):
    """Schur complement of the delay block; LEDs with no timing information are skipped."""
    JA, JB, JD = fim_position_s2_blocks(leds, rx, energies, lr)
    J = JA.copy()
    for k in range(len(JD)):
        if JD[k] > 0:
            J -= np.outer(JB[:, k], JB[:, k]) / JD[k]
    return FisherMatrix(("x", "y", "z"), 0.5 * (J + J.T))


def crlb_position_s2(leds, rx, energies, lr=None):
    return trace_inverse(equivalent_fim_position_s2(leds, rx, energies, lr))


def fim_position_s3_blocks(leds, rx, energies, lr=None):
    """``J_A`` (3x3) plus per-(LED, PD) blocks ``B_kj`` (3xC) and ``D_kj`` (CxC)."""
    links = _links(leds, rx, energies, lr)
    JA = np.zeros((3, 3))
    B, D = {}, {}
    for k, (lt, ce) in enumerate(zip(links, energies)):
        for j, s2 in enumerate(rx.noise_psd):
            h = lt.gains[j]
            JA += np.outer(lt.dtau, lt.dtau) * (h @ ce.Epp @ h) / s2
            B[k, j] = -np.outer(lt.dtau, ce.Ep @ h) / s2
            D[k, j] = ce.E / s2
    return 0.5 * (JA + JA.T), B, D


def fim_position_s3(leds, rx, energies, lr=None):
    JA, B, D = fim_position_s3_blocks(leds, rx, energies, lr)
    P, C = rx.n_pd, rx.n_colors
    n = 3 + len(leds) * P * C
    J = np.zeros((n, n))
    J[:3, :3] = JA
    labels = ["x", "y", "z"]
    for (k, j), Bkj in B.items():
        off = 3 + (k * P + j) * C
        sl = slice(off, off + C)
        J[:3, sl] = Bkj
        J[sl, :3] = Bkj.T
        J[sl, sl] = D[k, j]
        labels += [f"h{k + 1}_{j},{i}" for i in range(C)]
    return FisherMatrix(tuple(labels), J)


def equivalent_fim_position_s3(leds, rx, energies, lr=None):
    """Schur complement of the gain block, one small solve per (LED, PD) block."""
    JA, B, D = fim_position_s3_blocks(leds, rx, energies, lr)
    J = JA.copy()
    for (k, j), Bkj in B.items():
        J -= Bkj @ _block_solve(D[k, j], Bkj.T, f"E of LED {k + 1}")
    return FisherMatrix(("x", "y", "z"), 0.5 * (J + J.T))


def crlb_position_s3(leds, rx, energies, lr=None):
    return trace_inverse(equivalent_fim_position_s3(leds, rx, energies, lr))


def fim_position_s3_single_color(leds, rx, energies, lr=None):
    """Reduced s3 FIM when only the first color and first PD are used."""
    s2 = rx.noise_psd[0]
    J = np.zeros((3, 3))
    for lt, ce in zip(_links(leds, rx, energies, lr), energies):
        eff = ce.Epp[0, 0] - ce.Ep[0, 0] ** 2 / ce.E[0, 0]
        J += eff * lt.gains[0, 0] ** 2 / s2 * np.outer(lt.dtau, lt.dtau)
    return FisherMatrix(("x", "y", "z"), J)


def crlb_position_s3_single_color(leds, rx, energies, lr=None):
    return trace_inverse(fim_position_s3_single_color(leds, rx, energies, lr))


def crlb_distance(scenario, x, m, gammas, sigma2, ce):
    """Dispatch helper used by sweeps."""
    if scenario == "s1":
        return crlb_distance_s1(x, m, kappas(gammas, sigma2, ce))
    if scenario == "s2":
        return crlb_distance_s2(x, m, kappas(gammas, sigma2, ce))
    if scenario == "s3":
        return crlb_distance_s3(axial_gains(gammas, x, m), sigma2, ce)
    raise ValueError(f"unknown scenario {scenario!r}")


def crlb_position(scenario, leds, rx, energies, lr=None):
    fn = {"s1": crlb_position_s1, "s2": crlb_position_s2, "s3": crlb_position_s3}.get(scenario)
    if fn is None:
        raise ValueError(f"unknown scenario {scenario!r}")
    return fn(leds, rx, energies, lr)

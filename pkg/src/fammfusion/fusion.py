"""Twelve-state pose Kalman filter with a motion-model parameterised transition.

The state is ``x = (P, V, R, Omega)``: position, linear velocity, Euler
angles and angular rates, three components each. The measurement observes
``P`` and ``R`` directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import as_vector, wrap_angle
from .vision import apply_transform

POS = slice(0, 3)
VEL = slice(3, 6)
ROT = slice(6, 9)
OMEGA = slice(9, 12)
OBSERVED = np.array([0, 1, 2, 6, 7, 8])

PSD_TOL = 1e-9


class StateCorrupt(RuntimeError):
    """Raised when a covariance entering the filter is not symmetric PSD."""


@dataclass
class FilterState:
    x: np.ndarray
    sigma: np.ndarray

    @property
    def P(self):
        return self.x[POS]

    @property
    def V(self):
        return self.x[VEL]

    @property
    def R(self):
        return self.x[ROT]

    @property
    def Omega(self):
        return self.x[OMEGA]

    @classmethod
    def initial(cls, position, rotation, sigma_diag=(2.5**2,) * 3 + (1.0,) * 3 + (0.035**2,) * 3 + (0.1,) * 3):
        x = np.zeros(12)
        x[POS] = as_vector(position, 3, "position")
        x[ROT] = wrap_angle(as_vector(rotation, 3, "rotation"))
        return cls(x, np.diag(np.asarray(sigma_diag, dtype=float)))

    def copy(self):
        return FilterState(self.x.copy(), self.sigma.copy())


@dataclass
class NoiseConfig:
    """Process noise ``Q`` (12x12) and measurement noise ``Rm`` (6x6)."""

    Q: np.ndarray
    Rm: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.Rm = np.asarray(self.Rm, dtype=float)
        for name, mat, n in (("Q", self.Q, 12), ("Rm", self.Rm, 6)):
            if mat.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {mat.shape}")
            if not is_symmetric_psd(mat):
                raise ValueError(f"{name} must be symmetric positive semidefinite")

    @classmethod
    def from_sigmas(
        cls,
        position=2.5,
        rotation=math.radians(2.0),
        q_position=0.08,
        q_velocity=0.005,
        q_rotation=1e-4,
        q_omega=2e-3,
    ):
        """Diagonal noise from standard deviations (per filter step for ``Q``)."""
        q = np.repeat([q_position, q_velocity, q_rotation, q_omega], 3) ** 2
        r = np.repeat([position, rotation], 3) ** 2
        return cls(np.diag(q), np.diag(r))


class Measurement(NamedTuple):
    m_P: np.ndarray
    m_R: np.ndarray
    t: float = 0.0
    source_mask: frozenset = frozenset()

    def vector(self):
        return np.concatenate([self.m_P, self.m_R])


class Innovation(NamedTuple):
    y: np.ndarray
    y_p_mag: float
    y_r_mag: float
    singular: bool = False


def is_symmetric_psd(mat, tol=PSD_TOL) -> bool:
    mat = np.asarray(mat, dtype=float)
    if not np.all(np.isfinite(mat)):
        return False
    if np.max(np.abs(mat - mat.T), initial=0.0) > tol * max(1.0, np.max(np.abs(mat), initial=0.0)):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0] >= -tol)


def _check_covariance(sigma):
    if not np.all(np.isfinite(sigma)) or np.max(np.abs(sigma - sigma.T)) > PSD_TOL * max(1.0, np.max(np.abs(sigma))):
        raise StateCorrupt("covariance is not finite and symmetric")
    try:
        np.linalg.cholesky(sigma + PSD_TOL * np.eye(len(sigma)))
    except np.linalg.LinAlgError:
        raise StateCorrupt("covariance is not positive semidefinite") from None


def transition_matrix(dt: float, ci: int = 1, cj: int = 1):
    """Identity plus ``ci*dt`` coupling P<-V and ``cj*dt`` coupling R<-Omega."""
    f = np.eye(12)
    idx = np.arange(3)
    f[idx, idx + 3] = ci * dt
    f[idx + 6, idx + 9] = cj * dt
    return f


def predict(state: FilterState, model, dt: float, noise: NoiseConfig) -> FilterState:
    """Propagate the state through the transition of ``model`` over ``dt``.

    ``model`` is anything with integer velocity coefficients ``i`` and ``j``.

    Raises
    ------
    StateCorrupt
        If the incoming covariance is not symmetric PSD.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    _check_covariance(state.sigma)
    a = model.i * dt
    b = model.j * dt
    x = state.x.copy()
    x[POS] += a * state.x[VEL]
    x[ROT] = wrap_angle(x[ROT] + b * state.x[OMEGA])

    # F S F^T with F = I + A, applied as row then column updates
    fs = state.sigma.copy()
    fs[POS, :] += a * state.sigma[VEL, :]
    fs[ROT, :] += b * state.sigma[OMEGA, :]
    sigma = fs.copy()
    sigma[:, POS] += a * fs[:, VEL]
    sigma[:, ROT] += b * fs[:, OMEGA]
    sigma += noise.Q
    return FilterState(x, 0.5 * (sigma + sigma.T))


def compose_position_measurement(tr, gps, imu_delta):
    """Positional measurement: transform the GPS position, then add the IMU offset."""
    delta = imu_delta.delta if hasattr(imu_delta, "delta") else imu_delta
    return apply_transform(tr, gps) + as_vector(delta, 3, "imu delta")


def innovation(state: FilterState, z) -> Innovation:
    zv = z.vector() if isinstance(z, Measurement) else as_vector(z, 6, "z")
    y = zv - state.x[OBSERVED]
    y[3:] = wrap_angle(y[3:])
    return Innovation(y, float(np.linalg.norm(y[:3])), float(np.linalg.norm(y[3:])))


def update(state: FilterState, z, noise: NoiseConfig, joseph: bool = False):
    """Kalman measurement update.

    Parameters
    ----------
    state : FilterState
        Predicted state.
    z : Measurement or array_like, shape (6,)
        Position followed by rotation measurement.
    noise : NoiseConfig
    joseph : bool
        Use the Joseph-form covariance update.

    Returns
    -------
    (FilterState, Innovation)
        Posterior state and the innovation taken before the correction. The
        innovation's ``singular`` flag is set when the innovation covariance
        could not be factorised and a pseudo-inverse was used instead.
    """
    innov = innovation(state, z)
    sigma = state.sigma
    pht = sigma[:, OBSERVED]
    s = pht[OBSERVED, :] + noise.Rm
    singular = False
    try:
        c = np.linalg.cholesky(s)
        gain = np.linalg.solve(c.T, np.linalg.solve(c, pht.T)).T
    except np.linalg.LinAlgError:
        singular = True
        gain = pht @ np.linalg.pinv(s)
    x = state.x + gain @ innov.y
    x[ROT] = wrap_angle(x[ROT])
    if joseph:
        ikh = np.eye(12)
        ikh[:, OBSERVED] -= gain
        new_sigma = ikh @ sigma @ ikh.T + gain @ noise.Rm @ gain.T
    else:
        new_sigma = sigma - gain @ pht.T
    new_sigma = 0.5 * (new_sigma + new_sigma.T)
    return FilterState(x, new_sigma), innov._replace(singular=singular)


def filter_error(innov: Innovation) -> float:
    """Per-step filter error: magnitude of the positional innovation."""
    return innov.y_p_mag

"""IMU bias calibration, batch averaging, double integration and attitude.

Sample streams are carried either as sequences of :class:`ImuSample` or as
``(n, 7)`` arrays with columns ``t, ax, ay, az, gx, gy, gz``. Accelerations
are m/s^2 internally; CSV logs store them in g and are converted on read.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Protocol

import numpy as np

from ._validation import as_vector, check_finite, wrap_angle

STANDARD_GRAVITY = 9.80665

# Stationary offsets of the reference rig: accelerometer in g, gyroscope in rad/s.
REFERENCE_ACCEL_OFFSET_G = (-0.000817, 0.158242, 0.987314)
REFERENCE_GYRO_OFFSET = (-0.216527, -0.052387, -0.183611)

IMU_COLUMNS = ("t", "ax", "ay", "az", "gx", "gy", "gz")


class InsufficientSamples(ValueError):
    pass


class TimestampError(ValueError):
    pass


class ImuSample(NamedTuple):
    t: float
    accel: np.ndarray
    gyro: np.ndarray

    @classmethod
    def make(cls, t, accel, gyro):
        return cls(check_finite(t, "t"), as_vector(accel, 3, "accel"), as_vector(gyro, 3, "gyro"))


@dataclass(frozen=True)
class BiasCalibration:
    accel_offset: np.ndarray
    gyro_offset: np.ndarray
    sample_count: int

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3), 1)

    @property
    def offsets(self):
        return np.concatenate([self.accel_offset, self.gyro_offset])


class ImuPositionDelta(NamedTuple):
    delta: np.ndarray  # displacement over the window, meters
    window: float  # seconds
    velocity: np.ndarray  # velocity at the end of the window


class AttitudeMeasurement(NamedTuple):
    yaw: float
    pitch: float
    roll: float
    t: float

    def as_state(self):
        """Angles ordered as rotations about x, y and z: (roll, pitch, yaw)."""
        return np.array([self.roll, self.pitch, self.yaw])


def as_sample_array(samples):
    """Stack samples into an ``(n, 7)`` float array, rejecting non-finite rows."""
    if isinstance(samples, np.ndarray):
        arr = np.asarray(samples, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 7:
            raise ValueError(f"sample array must have shape (n, 7), got {arr.shape}")
    else:
        rows = [np.concatenate([[s[0]], np.asarray(s[1], float), np.asarray(s[2], float)]) for s in samples]
        arr = np.array(rows, dtype=float).reshape(-1, 7)
    if not np.all(np.isfinite(arr)):
        raise ValueError("IMU samples must be finite")
    return arr


def _row_to_sample(row) -> ImuSample:
    return ImuSample(float(row[0]), row[1:4].copy(), row[4:7].copy())


def calibrate(samples, min_samples: int = 100) -> BiasCalibration:
    """Estimate per-axis offsets as the mean of a stationary capture.

    Parameters
    ----------
    samples : sequence of ImuSample or ndarray, shape (n, 7)
        Readings taken while the device is at rest.
    min_samples : int
        Captures shorter than this raise :class:`InsufficientSamples`.

    Returns
    -------
    BiasCalibration
    """
    arr = as_sample_array(samples)
    if len(arr) < min_samples:
        raise InsufficientSamples(f"calibration needs at least {min_samples} samples, got {len(arr)}")
    data = arr[:, 1:]
    # shifted mean: exact for constant streams and better conditioned otherwise
    offsets = data[0] + np.mean(data - data[0], axis=0)
    return BiasCalibration(offsets[:3].copy(), offsets[3:].copy(), len(arr))


def batch_average(window, cal: BiasCalibration) -> ImuSample:
    """Bias-subtracted mean of a window, stamped at its last timestamp."""
    arr = as_sample_array(window)
    if len(arr) == 0:
        raise ValueError("cannot average an empty window")
    mean = arr[:, 1:].mean(axis=0) - cal.offsets
    return ImuSample(float(arr[-1, 0]), mean[:3], mean[3:])


def batch_average_stream(samples, cal: BiasCalibration, batch: int = 4):
    """Vectorised :func:`batch_average` over consecutive windows of ``batch``.

    A trailing incomplete window is dropped.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    arr = as_sample_array(samples)
    n = (len(arr) // batch) * batch
    blocks = arr[:n].reshape(-1, batch, 7)
    out = np.empty((len(blocks), 7))
    out[:, 0] = blocks[:, -1, 0]
    out[:, 1:] = blocks[:, :, 1:].mean(axis=1) - cal.offsets
    return out


def integrate_position(batches, v0, t0: Optional[float] = None, rule: str = "rectangular") -> ImuPositionDelta:
    """Double-integrate accelerations into a displacement over a window.

    Each step uses ``dt_k = t_k - t_{k-1}``; with the rectangular rule
    ``v_k = v_{k-1} + a_k dt_k`` and ``p_k = p_{k-1} + v_k dt_k``.

    Parameters
    ----------
    batches : sequence of ImuSample or ndarray, shape (n, 7)
        Bias-corrected samples in time order.
    v0 : array_like, shape (3,)
        Velocity at the start of the window.
    t0 : float, optional
        Start of the window. When omitted the first batch only sets the
        start time and its acceleration is not integrated.
    rule : {"rectangular", "trapezoidal"}

    Raises
    ------
    TimestampError
        If timestamps do not strictly increase.
    """
    arr = as_sample_array(batches)
    v = as_vector(v0, 3, "v0").copy()
    if rule not in ("rectangular", "trapezoidal"):
        raise ValueError(f"unknown integration rule {rule!r}")
    if t0 is None:
        if len(arr) == 0:
            return ImuPositionDelta(np.zeros(3), 0.0, v)
        t0, arr = float(arr[0, 0]), arr[1:]
    times = np.concatenate([[t0], arr[:, 0]])
    dts = np.diff(times)
    if np.any(dts <= 0):
        raise TimestampError("IMU timestamps must strictly increase")
    acc = arr[:, 1:4]
    if len(acc) == 0:
        return ImuPositionDelta(np.zeros(3), 0.0, v)
    dt = dts[:, None]
    if rule == "rectangular":
        vel = v + np.cumsum(acc * dt, axis=0)
        p = np.sum(vel * dt, axis=0)
    else:
        a_prev = np.vstack([acc[:1], acc[:-1]])
        vel = v + np.cumsum(0.5 * (a_prev + acc) * dt, axis=0)
        v_prev = np.vstack([v[None, :], vel[:-1]])
        p = np.sum(0.5 * (v_prev + vel) * dt, axis=0)
    v = vel[-1]
    return ImuPositionDelta(p, float(times[-1] - t0), v)


def attitude_step(sample: ImuSample, prev: AttitudeMeasurement) -> AttitudeMeasurement:
    """Advance an attitude by integrating body rates over one sample interval."""
    dt = float(sample[0]) - prev.t
    if dt < 0:
        raise TimestampError("attitude samples must not go back in time")
    gx, gy, gz = as_vector(sample[2], 3, "gyro")
    return AttitudeMeasurement(
        wrap_angle(prev.yaw + gz * dt),
        wrap_angle(prev.pitch + gy * dt),
        wrap_angle(prev.roll + gx * dt),
        float(sample[0]),
    )


class AttitudeSource(Protocol):
    def update(self, sample: ImuSample) -> AttitudeMeasurement: ...


class GyroAttitude:
    """Default attitude source: plain integration of calibrated gyro rates.

    Any object with a compatible ``update`` method (a full AHRS, for example)
    can be used in its place.
    """

    def __init__(self, initial: Optional[AttitudeMeasurement] = None):
        self.state = initial or AttitudeMeasurement(0.0, 0.0, 0.0, 0.0)

    def update(self, sample: ImuSample) -> AttitudeMeasurement:
        self.state = attitude_step(sample, self.state)
        return self.state

    def run(self, batches):
        """Integrate a whole ``(n, 7)`` stream; returns ``(n, 3)`` roll/pitch/yaw."""
        arr = as_sample_array(batches)
        out = np.empty((len(arr), 3))
        for k, row in enumerate(arr):
            out[k] = self.update(_row_to_sample(row)).as_state()
        return out


def integrate_attitude(batches, initial: Optional[AttitudeMeasurement] = None, wrap: bool = True):
    """Vectorised gyro integration over a stream.

    Returns ``(n, 3)`` roll/pitch/yaw after each sample, matching repeated
    :func:`attitude_step` calls up to rounding. With ``wrap=False`` the
    angles are left unwrapped, so a stream integrated piecewise (carrying
    the last row as the next ``initial``) is bit-identical to one pass.
    """
    arr = as_sample_array(batches)
    initial = initial or AttitudeMeasurement(0.0, 0.0, 0.0, 0.0)
    if len(arr) == 0:
        return np.empty((0, 3))
    dts = np.diff(np.concatenate([[initial.t], arr[:, 0]]))
    if np.any(dts < 0):
        raise TimestampError("attitude samples must not go back in time")
    steps = np.vstack([initial.as_state(), arr[:, 4:7] * dts[:, None]])
    acc = np.cumsum(steps, axis=0)[1:]
    return wrap_angle(acc) if wrap else acc


def read_imu_csv(path):
    """Load a ``t,ax,ay,az,gx,gy,gz`` log (g and rad/s) as m/s^2 and rad/s."""
    arr = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if arr.size == 0:
        return np.empty((0, 7))
    arr = as_sample_array(arr)
    if np.any(np.diff(arr[:, 0]) <= 0):
        raise TimestampError(f"{path}: timestamps must strictly increase")
    arr[:, 1:4] *= STANDARD_GRAVITY
    return arr


def write_imu_csv(path, samples, header_lines=()):
    arr = as_sample_array(samples).copy()
    arr[:, 1:4] /= STANDARD_GRAVITY
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("# " + ",".join(IMU_COLUMNS) + "\n")
        np.savetxt(fh, arr, delimiter=",", fmt="%.10g")

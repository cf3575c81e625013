"""Synthetic ground truth and multi-rate sensor streams.

Trajectories are piecewise constant in forward speed and yaw rate and are
integrated in closed form, so truth can be evaluated at any timestamp. The
sensor synthesiser samples that truth at each sensor's own rate.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import geodesy, imu
from .kvfile import dump_kv, load_kv
from .events import GPS, IMU, VISION, GpsFix, SensorEvent
from .imu import ImuSample, STANDARD_GRAVITY
from .vision import VisionDelta, angles_from_rotation, rotation_matrix
from ._validation import wrap_angle

PROFILES = ("stationary", "straight", "turn", "loop")


@dataclass(frozen=True)
class Segment:
    duration: float
    linear_velocity: float = 0.0
    angular_velocity_z: float = 0.0
    profile: str = "straight"

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.profile == "stationary" and (self.linear_velocity or self.angular_velocity_z):
            raise ValueError("stationary segments cannot move")
        if self.profile == "straight" and self.angular_velocity_z:
            raise ValueError("straight segments cannot turn")


@dataclass(frozen=True)
class TrajectorySpec:
    segments: tuple
    seed: int = 0
    max_duration: float = 7200.0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("a trajectory needs at least one segment")
        if self.duration > self.max_duration:
            raise ValueError(f"trajectory lasts {self.duration} s, above the {self.max_duration} s limit")

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))


class Trajectory:
    """Closed-form evaluation of a planar trajectory starting at the origin, yaw 0."""

    def __init__(self, spec: TrajectorySpec):
        self.spec = spec
        segs = spec.segments
        self.starts = np.concatenate([[0.0], np.cumsum([s.duration for s in segs])[:-1]])
        self.speed = np.array([s.linear_velocity for s in segs], dtype=float)
        self.rate = np.array([s.angular_velocity_z for s in segs], dtype=float)
        self.duration = spec.duration
        pos = np.zeros((len(segs), 3))
        yaw = np.zeros(len(segs))
        p, psi = np.zeros(3), 0.0
        for k, s in enumerate(segs):
            pos[k], yaw[k] = p, psi
            p, psi = self._advance(p, psi, s.linear_velocity, s.angular_velocity_z, s.duration)
        self.seg_pos, self.seg_yaw = pos, yaw
        self.end_position, self.end_yaw = p, psi

    @staticmethod
    def _advance(p, psi, v, w, tau):
        tau = np.asarray(tau, dtype=float)
        psi_new = psi + w * tau
        if np.ndim(w) == 0 and abs(w) < 1e-12:
            dx = v * tau * np.cos(psi)
            dy = v * tau * np.sin(psi)
        else:
            w_safe = np.where(np.abs(w) < 1e-12, 1.0, w)
            arc_x = v / w_safe * (np.sin(psi_new) - np.sin(psi))
            arc_y = -v / w_safe * (np.cos(psi_new) - np.cos(psi))
            line_x = v * tau * np.cos(psi)
            line_y = v * tau * np.sin(psi)
            straight = np.abs(w) < 1e-12
            dx = np.where(straight, line_x, arc_x)
            dy = np.where(straight, line_y, arc_y)
        return p + np.stack([dx, dy, np.zeros_like(dx)], axis=-1), psi_new

    def segment_index(self, t):
        t = np.asarray(t, dtype=float)
        return np.clip(np.searchsorted(self.starts, t, side="right") - 1, 0, len(self.starts) - 1)

    def evaluate(self, t):
        """Return ``(position (n,3), yaw (n,) unwrapped, velocity (n,3), yaw_rate (n,))``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = self.segment_index(t)
        tau = np.clip(t - self.starts[k], 0.0, None)
        v, w = self.speed[k], self.rate[k]
        pos, yaw = self._advance(self.seg_pos[k], self.seg_yaw[k], v, w, tau)
        vel = np.stack([v * np.cos(yaw), v * np.sin(yaw), np.zeros_like(yaw)], axis=-1)
        return pos, yaw, vel, w


@dataclass
class GroundTruth:
    t: np.ndarray
    position: np.ndarray  # (n, 3) meters in the simulation's local ENU frame
    rotation: np.ndarray  # (n, 3) roll, pitch, yaw in radians
    trajectory: Optional[Trajectory] = None

    def __len__(self):
        return len(self.t)


def generate_truth(spec: TrajectorySpec, rate: float = 100.0) -> GroundTruth:
    traj = Trajectory(spec)
    n = int(math.floor(spec.duration * rate + 1e-9)) + 1
    t = np.arange(n) / rate
    pos, yaw, _, _ = traj.evaluate(t)
    rot = np.zeros((n, 3))
    rot[:, 2] = wrap_angle(yaw)
    return GroundTruth(t, pos, rot, traj)


@dataclass
class SensorNoiseSpec:
    gps_sigma: float = 2.5
    imu_accel_sigma: float = 0.05
    imu_gyro_sigma: float = 0.003
    accel_bias_g: tuple = imu.REFERENCE_ACCEL_OFFSET_G
    gyro_bias: tuple = imu.REFERENCE_GYRO_OFFSET
    vision_rot_sigma: float = 0.002
    vision_trans_sigma: float = 0.02
    gps_rate: float = 1.0
    imu_rate: float = 250.0
    vision_rate: float = 4.0
    vision_phase: float = 0.1
    calibration_samples: int = 5000
    origin_lat_deg: float = 45.0
    origin_lon_deg: float = 7.0
    origin_alt: float = 250.0
    utc_start: float = 43200.0

    def __post_init__(self):
        for name in ("gps_sigma", "imu_accel_sigma", "imu_gyro_sigma", "vision_rot_sigma", "vision_trans_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("gps_rate", "imu_rate", "vision_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        self.accel_bias_g = tuple(float(v) for v in self.accel_bias_g)
        self.gyro_bias = tuple(float(v) for v in self.gyro_bias)

    @classmethod
    def noiseless(cls, **kwargs):
        zero = dict(gps_sigma=0.0, imu_accel_sigma=0.0, imu_gyro_sigma=0.0, vision_rot_sigma=0.0, vision_trans_sigma=0.0)
        zero.update(kwargs)
        return cls(**zero)

    @property
    def origin(self):
        return geodesy.GeodeticPosition(
            math.radians(self.origin_lat_deg), math.radians(self.origin_lon_deg), self.origin_alt
        )


@dataclass
class Dataset:
    """Ground truth plus the raw sensor logs of one run."""

    truth: GroundTruth
    gps_lines: list
    imu: np.ndarray  # (n, 7) t, accel m/s^2, gyro rad/s
    imu_calibration: np.ndarray  # stationary capture taken before t = 0
    vision: np.ndarray  # (k, 7) t, Rx, Ry, Rz, tx, ty, tz
    meta: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return float(self.truth.t[-1]) if len(self.truth.t) else 0.0

    def utc_start(self) -> float:
        return float(self.meta.get("noise.utc_start", 43200.0))

    def gps_events(self):
        """Parse the NMEA log into GPS fix events; unusable sentences are skipped."""
        t0 = self.utc_start()
        out = []
        for line in self.gps_lines:
            try:
                sentence = geodesy.parse_nmea(line)
            except geodesy.NmeaError:
                continue
            if sentence.sentence_type != "GGA" or sentence.position is None or sentence.utc_seconds is None:
                continue
            t = (sentence.utc_seconds - t0) % 86400.0
            out.append(SensorEvent(t, GPS, GpsFix(sentence.position, sentence.satellites or 0)))
        return out

    def events(self):
        """All raw sensor events merged by (time, source priority)."""
        evs = self.gps_events()
        evs += [SensorEvent(float(r[0]), IMU, ImuSample(float(r[0]), r[1:4], r[4:7])) for r in self.imu]
        evs += [SensorEvent(float(r[0]), VISION, VisionDelta(r[1:4], r[4:7], float(r[0]))) for r in self.vision]
        evs.sort(key=SensorEvent.sort_key)
        return evs


def _rng_streams(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def synthesize_sensors(truth: GroundTruth, noise: SensorNoiseSpec, seed: int = 0) -> Dataset:
    """Sample GPS fixes, IMU readings and vision deltas from ground truth.

    GPS positions go through ECEF, geodetic coordinates and GGA text so
    that replay exercises the NMEA parser. IMU accelerations are finite
    differences of truth velocity rotated into the body frame, plus the
    configured offsets and white noise; a stationary calibration capture
    precedes the run.
    """
    traj = truth.trajectory
    if traj is None:
        raise ValueError("ground truth must carry its trajectory")
    rng_gps, rng_imu, rng_vis, rng_cal = _rng_streams(seed, 4)
    duration = traj.duration
    frame = geodesy.LocalFrame(noise.origin)

    # GPS
    n_gps = int(math.floor(duration * noise.gps_rate + 1e-9)) + 1
    t_gps = np.arange(n_gps) / noise.gps_rate
    p_gps, _, _, _ = traj.evaluate(t_gps)
    p_gps = p_gps + rng_gps.normal(0.0, noise.gps_sigma, size=p_gps.shape) if noise.gps_sigma else p_gps
    lat, lon, alt = frame.local_to_geodetic(p_gps)
    gps_lines = [
        geodesy.format_gga(noise.utc_start + t, geodesy.GeodeticPosition(la, lo, al))
        for t, la, lo, al in zip(t_gps, lat, lon, alt)
    ]

    # IMU
    bias = np.concatenate([np.asarray(noise.accel_bias_g) * STANDARD_GRAVITY, noise.gyro_bias])
    n_imu = int(math.floor(duration * noise.imu_rate + 1e-9)) + 1
    t_imu = np.arange(n_imu) / noise.imu_rate
    _, yaw, vel, rate = traj.evaluate(t_imu)
    acc_world = np.zeros_like(vel)
    acc_world[1:] = np.diff(vel, axis=0) * noise.imu_rate
    c, s = np.cos(yaw), np.sin(yaw)
    acc_body = np.stack(
        [c * acc_world[:, 0] + s * acc_world[:, 1], -s * acc_world[:, 0] + c * acc_world[:, 1], acc_world[:, 2]],
        axis=-1,
    )
    samples = np.empty((n_imu, 7))
    samples[:, 0] = t_imu
    samples[:, 1:4] = acc_body
    samples[:, 4:7] = 0.0
    samples[:, 6] = rate
    samples[:, 1:] += bias
    sig = np.repeat([noise.imu_accel_sigma, noise.imu_gyro_sigma], 3)
    if np.any(sig):
        samples[:, 1:] += rng_imu.normal(0.0, 1.0, size=(n_imu, 6)) * sig

    m = int(noise.calibration_samples)
    calib = np.empty((m, 7))
    calib[:, 0] = -(m - np.arange(m)) / noise.imu_rate
    calib[:, 1:] = bias
    if np.any(sig):
        calib[:, 1:] += rng_cal.normal(0.0, 1.0, size=(m, 6)) * sig

    # vision
    n_vis = int(math.floor((duration - noise.vision_phase) * noise.vision_rate + 1e-9)) + 1
    t_vis = noise.vision_phase + np.arange(max(n_vis, 0)) / noise.vision_rate
    p_vis, yaw_vis, _, _ = traj.evaluate(t_vis) if len(t_vis) else (np.zeros((0, 3)), np.zeros(0), None, None)
    vision = np.empty((max(len(t_vis) - 1, 0), 7))
    for k in range(1, len(t_vis)):
        c_prev = rotation_matrix(0.0, 0.0, yaw_vis[k - 1])
        c_cur = rotation_matrix(0.0, 0.0, yaw_vis[k])
        vision[k - 1, 0] = t_vis[k]
        vision[k - 1, 1:4] = angles_from_rotation(c_prev.T @ c_cur)
        vision[k - 1, 4:7] = c_prev.T @ (p_vis[k] - p_vis[k - 1])
    if len(vision) and (noise.vision_rot_sigma or noise.vision_trans_sigma):
        sig_v = np.repeat([noise.vision_rot_sigma, noise.vision_trans_sigma], 3)
        vision[:, 1:] += rng_vis.normal(0.0, 1.0, size=(len(vision), 6)) * sig_v
    if len(vision):
        vision[:, 1:4] = wrap_angle(vision[:, 1:4])

    meta = {"seed": int(seed), "duration": float(duration)}
    meta.update({f"noise.{k}": v for k, v in asdict(noise).items()})
    return Dataset(truth, gps_lines, samples, calib, vision, meta)


# ---------------------------------------------------------------------------
# bundled regimes

REGIME_STEPS = {"long_walk": 3388, "medium_walk": 1735, "stationary": 182, "turns": 1406, "loop": 3515}
REGIME_ALIASES = {"1": "long_walk", "2": "medium_walk", "3": "stationary", "4": "turns", "5": "loop"}
FUSION_RATE = 4.0


def _walk(v, d):
    return Segment(d, v, 0.0, "straight")


def _turn(v, w, d):
    return Segment(d, v, w, "turn")


def _stop(d):
    return Segment(d, 0.0, 0.0, "stationary")


def _fill(pattern, duration):
    """Repeat ``pattern`` and trim the final segment so the total is ``duration``."""
    out, total = [], 0.0
    while total < duration - 1e-9:
        for seg in pattern:
            remaining = duration - total
            if remaining <= 1e-9:
                break
            d = min(seg.duration, remaining)
            out.append(Segment(d, seg.linear_velocity, seg.angular_velocity_z, seg.profile))
            total += d
    return out


def _loop_segments(duration, speed=1.2, turn_time=8.0, pause=20.0):
    w = (math.pi / 2) / turn_time
    walk_time = duration - 3 * pause - 4 * turn_time
    side_a = 0.6 * walk_time / 2 * speed
    side_b = 0.4 * walk_time / 2 * speed
    segs = [_stop(pause)]
    for k, side in enumerate((side_a, side_b, side_a, side_b)):
        if k == 2:
            segs += [_walk(speed, side / 2 / speed), _stop(pause), _walk(speed, side / 2 / speed)]
        else:
            segs.append(_walk(speed, side / speed))
        segs.append(_turn(speed, w, turn_time))
    segs.append(_stop(pause))
    return segs


def regime_spec(name: str, seed: int = 0, scale: float = 1.0) -> TrajectorySpec:
    """Trajectory for one of the bundled regimes.

    Durations follow the regime's step count at the 4 Hz fusion cadence,
    multiplied by ``scale``.
    """
    name = REGIME_ALIASES.get(str(name), name)
    if name not in REGIME_STEPS:
        raise ValueError(f"unknown regime {name!r}; choose from {sorted(REGIME_STEPS)}")
    duration = REGIME_STEPS[name] / FUSION_RATE * scale
    if name == "stationary":
        segs = [_stop(duration)]
    elif name == "long_walk":
        segs = _fill(
            [_stop(10), _walk(1.3, 60), _turn(1.0, 0.3, 5), _walk(1.4, 45), _stop(25), _walk(1.2, 40),
             _turn(1.1, -0.25, 6), _walk(1.5, 35), _stop(15), _turn(0.8, 0.4, 4), _walk(1.1, 50)],
            duration,
        )
    elif name == "medium_walk":
        segs = _fill(
            [_stop(10), _walk(1.3, 80), _turn(1.2, 0.15, 6), _walk(1.3, 70), _stop(20),
             _walk(1.4, 60), _turn(1.2, -0.2, 5), _walk(1.3, 90)],
            duration,
        )
    elif name == "turns":
        segs = _fill(
            [_stop(10), _walk(1.2, 20), _turn(1.0, 0.35, 5), _walk(1.2, 15), _turn(0.9, -0.4, 4),
             _stop(15), _walk(1.3, 25), _turn(1.0, 0.3, 6), _walk(1.1, 10), _turn(1.0, -0.3, 5), _stop(10)],
            duration,
        )
    else:
        segs = _loop_segments(duration)
    return TrajectorySpec(segs, seed=seed)


def make_regime(name: str, seed: int = 0, noise: Optional[SensorNoiseSpec] = None, scale: float = 1.0) -> Dataset:
    spec = regime_spec(name, seed, scale)
    ds = synthesize_sensors(generate_truth(spec), noise or SensorNoiseSpec(), seed)
    ds.meta["regime"] = REGIME_ALIASES.get(str(name), name)
    ds.meta["scale"] = float(scale)
    return ds


# ---------------------------------------------------------------------------
# bundle directory format


def write_bundle(ds: Dataset, out_dir, header_lines=()):
    os.makedirs(out_dir, exist_ok=True)
    header = [f"# {line}" for line in header_lines]
    with open(os.path.join(out_dir, "truth.csv"), "w") as fh:
        for line in header:
            fh.write(line + "\n")
        fh.write("# t,Px,Py,Pz,Rx,Ry,Rz\n")
        np.savetxt(fh, np.column_stack([ds.truth.t, ds.truth.position, ds.truth.rotation]), delimiter=",", fmt="%.12g")
    with open(os.path.join(out_dir, "gps.nmea"), "w") as fh:
        fh.write("\n".join(ds.gps_lines) + "\n")
    imu.write_imu_csv(os.path.join(out_dir, "imu.csv"), ds.imu, header_lines)
    imu.write_imu_csv(os.path.join(out_dir, "imu_calib.csv"), ds.imu_calibration, header_lines)
    with open(os.path.join(out_dir, "vision.csv"), "w") as fh:
        for line in header:
            fh.write(line + "\n")
        fh.write("# t,Rx,Ry,Rz,tx,ty,tz\n")
        np.savetxt(fh, ds.vision.reshape(-1, 7), delimiter=",", fmt="%.12g")
    meta = dict(ds.meta)
    if ds.truth.trajectory is not None:
        for k, seg in enumerate(ds.truth.trajectory.spec.segments):
            meta[f"segment.{k}"] = f"{seg.profile}:{seg.duration!r}:{seg.linear_velocity!r}:{seg.angular_velocity_z!r}"
    with open(os.path.join(out_dir, "meta.txt"), "w") as fh:
        fh.write(dump_kv(meta))


def _load_array(path, width):
    if not os.path.exists(path):
        return np.empty((0, width))
    arr = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return arr.reshape(-1, width) if arr.size else np.empty((0, width))


def read_bundle(path) -> Dataset:
    """Load a bundle directory. Missing sensor files are treated as empty streams."""
    if not os.path.isdir(path):
        raise FileNotFoundError(f"dataset bundle {path!r} does not exist")
    meta = load_kv(open(os.path.join(path, "meta.txt")).read()) if os.path.exists(os.path.join(path, "meta.txt")) else {}
    truth_arr = _load_array(os.path.join(path, "truth.csv"), 7)
    segs = []
    k = 0
    while f"segment.{k}" in meta:
        profile, d, v, w = str(meta.pop(f"segment.{k}")).split(":")
        segs.append(Segment(float(d), float(v), float(w), profile))
        k += 1
    traj = Trajectory(TrajectorySpec(segs)) if segs else None
    truth = GroundTruth(truth_arr[:, 0], truth_arr[:, 1:4], truth_arr[:, 4:7], traj)
    gps_path = os.path.join(path, "gps.nmea")
    gps_lines = [ln.strip() for ln in open(gps_path)] if os.path.exists(gps_path) else []
    gps_lines = [ln for ln in gps_lines if ln]
    imu_path = os.path.join(path, "imu.csv")
    samples = imu.read_imu_csv(imu_path) if os.path.exists(imu_path) else np.empty((0, 7))
    calib_path = os.path.join(path, "imu_calib.csv")
    calib = imu.read_imu_csv(calib_path) if os.path.exists(calib_path) else np.empty((0, 7))
    vision = _load_array(os.path.join(path, "vision.csv"), 7)
    return Dataset(truth, gps_lines, samples, calib, vision, meta)

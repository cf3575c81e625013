"""Multi-rate ingestion and the fusion loop.

Two producers replay a :class:`~fammfusion.sim.Dataset`: one emits vision
deltas, the other is event driven over GPS fixes and raw IMU samples and
emits parsed fixes plus batch-averaged, bias-corrected IMU samples with the
gyro attitude after each batch. They hand chunks of events to the consumer
over three bounded channels (vision, GPS, IMU). The consumer merges the
channels by ``(t, source priority)`` and owns the filter and the model
controller outright, so results do not depend on thread scheduling.

:func:`run_pipeline` runs producers on their own threads;
:func:`run_reference` does the same work on the calling thread.
"""

from __future__ import annotations

import heapq
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import famm, geodesy
from .events import GPS, IMU, VISION, SOURCE_NAMES, GpsFix, ImuBatch, SensorEvent
from .fusion import FilterState, Measurement, NoiseConfig, compose_position_measurement, predict, update
from .imu import (
    AttitudeMeasurement,
    BiasCalibration,
    ImuSample,
    InsufficientSamples,
    batch_average_stream,
    calibrate,
    integrate_attitude,
    integrate_position,
)
from .vision import VisionDelta, rotation_matrix, transform_about
from ._validation import wrap_angle

CLOCKS = ("fast", "realtime")
SENSOR_SETS = ("camera-gps-imu", "gps-imu", "gps")


@dataclass(frozen=True)
class PipelineConfig:
    """Execution settings.

    Parameters
    ----------
    imu_batch : int
        Raw IMU samples averaged into one batch.
    clock : {"fast", "realtime"}
        ``realtime`` paces producers against the wall clock (scaled by
        ``speed``) and drops the oldest queued chunk when a channel is full.
    queue_capacity : int
        Channel capacity in chunks.
    sensors : {"camera-gps-imu", "gps-imu", "gps"}
        Which streams feed the positional measurement.
    tick_rate : float
        Fusion rate in Hz when no camera drives the ticks.
    """

    imu_batch: int = 4
    clock: str = "fast"
    queue_capacity: int = 64
    sensors: str = "camera-gps-imu"
    integration: str = "rectangular"
    tick_rate: float = 4.0
    speed: float = 1.0
    chunk: int = 256
    cov_every: int = 0
    min_calibration_samples: int = 100
    ellipsoid: geodesy.Ellipsoid = geodesy.WGS84

    def __post_init__(self):
        if int(self.imu_batch) < 1:
            raise ValueError("imu_batch must be >= 1")
        if int(self.queue_capacity) < 16:
            raise ValueError("queue_capacity must be >= 16")
        if self.clock not in CLOCKS:
            raise ValueError(f"clock must be one of {CLOCKS}")
        if self.sensors not in SENSOR_SETS:
            raise ValueError(f"sensors must be one of {SENSOR_SETS}")
        if self.integration not in ("rectangular", "trapezoidal"):
            raise ValueError("integration must be rectangular or trapezoidal")
        if not self.tick_rate > 0 or not self.speed > 0:
            raise ValueError("tick_rate and speed must be positive")
        if int(self.chunk) < 1 or int(self.cov_every) < 0:
            raise ValueError("chunk must be >= 1 and cov_every >= 0")


@dataclass(frozen=True)
class FilterConfig:
    noise: NoiseConfig = field(default_factory=NoiseConfig.from_sigmas)
    initial_sigma: tuple = (2.5**2,) * 3 + (0.05**2,) * 3 + (0.035**2,) * 3 + (0.01**2,) * 3
    joseph: bool = False


@dataclass(frozen=True)
class FammConfig:
    mode: str = "famm"
    rulebase: Optional[famm.RuleBase] = None
    memberships: famm.MembershipConfig = field(default_factory=famm.MembershipConfig)
    initial: famm.MotionModel = famm.STATIONARY

    def __post_init__(self):
        if self.mode not in ("famm", "cmm"):
            raise ValueError("mode must be 'famm' or 'cmm'")

    def controller(self):
        if self.mode == "cmm":
            return famm.ConstantController(famm.CMM)
        return famm.FammController(self.rulebase, self.memberships, self.initial)


# ---------------------------------------------------------------------------
# report


@dataclass
class RunReport:
    """Per-step records and run bookkeeping.

    Positions are in the ENU frame anchored at the first GPS fix
    (``origin``); ``models`` holds the model used by each step's prediction.
    """

    t: np.ndarray
    position: np.ndarray
    rotation: np.ndarray
    y_p: np.ndarray
    y_r: np.ndarray
    models: list
    trace: np.ndarray
    covariances: list  # (step, t, 12x12)
    origin: Optional[geodesy.GeodeticPosition]
    events: dict
    dropped: int = 0
    singular_updates: int = 0
    wall_clock: float = 0.0
    calibration: Optional[BiasCalibration] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def steps_table(self):
        """``(n, 11)`` array: t, P, R, y_p, y_r, model index, trace."""
        ids = np.array([famm.ALL_MODELS.index(famm.MotionModel.parse(m)) for m in self.models], dtype=float)
        return np.column_stack([self.t, self.position, self.rotation, self.y_p, self.y_r, ids.reshape(-1), self.trace])

    def fingerprint(self) -> bytes:
        """Bytes of every deterministic field; wall-clock time is excluded."""
        parts = [a.tobytes() for a in (self.t, self.position, self.rotation, self.y_p, self.y_r, self.trace)]
        parts.append(",".join(self.models).encode())
        parts += [s.tobytes() for _, _, s in self.covariances]
        parts.append(repr(sorted(self.events.items())).encode())
        parts.append(repr((self.dropped, self.singular_updates, self.origin)).encode())
        return b"|".join(parts)


# ---------------------------------------------------------------------------
# channels and producers


class Channel:
    """Bounded hand-off of event chunks from one producer to the consumer."""

    _END = None

    def __init__(self, capacity: int, drop_oldest: bool = False):
        self._q = queue.Queue(maxsize=capacity)
        self.drop_oldest = drop_oldest
        self.dropped = 0

    def put(self, chunk):
        if not self.drop_oldest:
            self._q.put(chunk)
            return
        while True:
            try:
                self._q.put_nowait(chunk)
                return
            except queue.Full:
                try:
                    old = self._q.get_nowait()
                except queue.Empty:
                    continue
                if old is self._END:  # never discard the end marker
                    self._q.put(old)
                    continue
                self.dropped += len(old)

    def close(self):
        if self.drop_oldest:
            while True:
                try:
                    self._q.put_nowait(self._END)
                    return
                except queue.Full:
                    try:
                        self.dropped += len(self._q.get_nowait())
                    except queue.Empty:
                        pass
        self._q.put(self._END)

    def discard(self):
        """Throw away whatever is queued without blocking."""
        while True:
            try:
                self._q.get_nowait()
            except queue.Empty:
                return

    def drain(self):
        while True:
            chunk = self._q.get()
            if chunk is self._END:
                return
            yield from chunk


def _pacer(cfg: PipelineConfig):
    if cfg.clock != "realtime":
        return lambda t: None
    start = time.perf_counter()

    def wait(t):
        delay = start + t / cfg.speed - time.perf_counter()
        if delay > 0:
            time.sleep(delay)

    return wait


def calibration_for(dataset, cfg: PipelineConfig) -> BiasCalibration:
    """Offsets from the dataset's stationary capture; zero offsets when it is too short."""
    try:
        return calibrate(dataset.imu_calibration, cfg.min_calibration_samples)
    except (InsufficientSamples, ValueError):
        return BiasCalibration.zero()


def vision_chunks(dataset, cfg: PipelineConfig):
    """Yield lists of vision events."""
    if cfg.sensors != "camera-gps-imu":
        return
    rows = np.asarray(dataset.vision, dtype=float).reshape(-1, 7)
    size = 1 if cfg.clock == "realtime" else cfg.chunk
    for k in range(0, len(rows), size):
        block = rows[k:k + size]
        yield [SensorEvent(float(r[0]), VISION, VisionDelta(r[1:4].copy(), r[4:7].copy(), float(r[0]))) for r in block]


def gps_imu_chunks(dataset, cfg: PipelineConfig, cal: BiasCalibration):
    """Yield ``(source, events)`` pairs, each source in time order.

    GPS sentences are parsed here; raw IMU samples are batch averaged and
    the gyro attitude is integrated chunk by chunk, carrying state across
    chunk boundaries. A ``None`` chunk marks the end of that source.
    """
    fixes = dataset.gps_events()
    use_imu = cfg.sensors != "gps"
    raw = np.asarray(dataset.imu, dtype=float).reshape(-1, 7) if use_imu else np.empty((0, 7))
    batch = int(cfg.imu_batch)
    step = 1 if cfg.clock == "realtime" else cfg.chunk
    per_chunk = step * batch
    attitude = AttitudeMeasurement(0.0, 0.0, 0.0, float(raw[0, 0]) if len(raw) else 0.0)
    g = 0
    for k in range(0, (len(raw) // batch) * batch, per_chunk):
        avg = batch_average_stream(raw[k:k + per_chunk], cal, batch)
        unwrapped = integrate_attitude(avg, attitude, wrap=False)
        attitude = AttitudeMeasurement(unwrapped[-1, 2], unwrapped[-1, 1], unwrapped[-1, 0], float(avg[-1, 0]))
        att = wrap_angle(unwrapped)
        t_end = float(avg[-1, 0])
        yield IMU, [
            SensorEvent(float(row[0]), IMU, ImuBatch(ImuSample(float(row[0]), row[1:4], row[4:7]), a, batch))
            for row, a in zip(avg, att)
        ]
        if g == len(fixes):
            continue
        # send every fix up to and including the first one past this chunk;
        # that look-ahead keeps a merging consumer from starving on GPS
        start = g
        while g < len(fixes) and (g == 0 or fixes[g - 1].t <= t_end):
            g += 1
        if g > start:
            yield GPS, fixes[start:g]
            if g == len(fixes):
                yield GPS, None
    yield IMU, None
    if g < len(fixes):
        for k in range(g, len(fixes), step):
            yield GPS, fixes[k:k + step]
        yield GPS, None
    elif not fixes:
        yield GPS, None


def _count_raw(dataset, cfg: PipelineConfig):
    counts = {"gps": len(dataset.gps_lines), "imu": 0, "vision": 0}
    if cfg.sensors != "gps":
        counts["imu"] = (len(dataset.imu) // cfg.imu_batch) * cfg.imu_batch
    if cfg.sensors == "camera-gps-imu":
        counts["vision"] = len(dataset.vision)
    return counts


# ---------------------------------------------------------------------------
# consumer


class FusionLoop:
    """Consumer side: turns merged events into filter steps.

    Each fusion tick builds the positional measurement from the held GPS
    fix, the camera motion accumulated since that fix (lifted into the
    local frame with the current attitude estimate) and the IMU
    displacement over the part of the interval the camera does not cover.
    """

    def __init__(self, cfg: PipelineConfig, filter_cfg: FilterConfig, famm_cfg: FammConfig, camera_ticks: bool,
                 use_imu: Optional[bool] = None):
        self.cfg = cfg
        self.filter_cfg = filter_cfg
        self.controller = famm_cfg.controller()
        self.camera_ticks = camera_ticks
        self.use_imu = cfg.sensors != "gps" if use_imu is None else use_imu
        self.frame: Optional[geodesy.LocalFrame] = None
        self.anchor = None
        self.t_fix = None
        self.att_fix = np.zeros(3)
        self.attitude = np.zeros(3)
        self.key_attitude = np.zeros(3)  # attitude at the previous keyframe
        self.window = []
        self.gap_delta = np.zeros(3)
        self.gap_open = False
        self.rot_world = np.eye(3)
        self.trans_world = np.zeros(3)
        self.state: Optional[FilterState] = None
        self.t_prev = None
        self.next_tick = None
        self.singular = 0
        self.records = []
        self.models = []
        self.covariances = []

    # event handlers

    def handle(self, ev: SensorEvent):
        if ev.source == IMU:
            self._on_imu(ev)
        elif ev.source == GPS:
            self._on_gps(ev)
        elif ev.source == VISION:
            self._on_vision(ev)

    def _on_gps(self, ev):
        pos = ev.payload.position
        if self.frame is None:
            self.frame = geodesy.LocalFrame(pos, self.cfg.ellipsoid)
        self.anchor = np.asarray(self.frame.geodetic_to_local(*pos), dtype=float).reshape(3)
        self.t_fix = ev.t
        self.att_fix = self.attitude.copy()
        self.window = []
        self.gap_delta = np.zeros(3)
        self.gap_open = True
        self.rot_world = np.eye(3)
        self.trans_world = np.zeros(3)
        if not self.camera_ticks and not self.use_imu:
            self._tick(ev.t)

    def _on_imu(self, ev):
        batch = ev.payload
        self.attitude = np.asarray(batch.attitude, dtype=float)
        if self.t_fix is not None and ev.t > self.t_fix:
            self.window.append(np.concatenate([[ev.t], batch.sample.accel, batch.sample.gyro]))
        if not self.camera_ticks:
            if self.next_tick is None:
                self.next_tick = ev.t
            if ev.t >= self.next_tick - 1e-9:
                self._tick(ev.t)
                self.next_tick += 1.0 / self.cfg.tick_rate

    def _on_vision(self, ev):
        if self.anchor is not None:
            if self.gap_open:
                # the first keyframe after a fix straddles it; IMU covers that gap
                self.gap_delta = self._imu_displacement(ev.t)
                self.gap_open = False
            else:
                c = rotation_matrix(*self.key_attitude)
                delta = ev.payload
                self.trans_world = self.trans_world + c @ np.asarray(delta.trans, dtype=float)
                self.rot_world = c @ rotation_matrix(*delta.rot) @ c.T @ self.rot_world
        self.key_attitude = self.attitude.copy()
        self._tick(ev.t)

    # measurement and filter

    def _imu_displacement(self, t_end):
        if not self.use_imu or not self.window:
            return np.zeros(3)
        arr = np.array(self.window)
        arr = arr[arr[:, 0] <= t_end + 1e-12]
        if len(arr) == 0:
            return np.zeros(3)
        c = rotation_matrix(*self.att_fix)
        v_world = self.state.V if self.state is not None else np.zeros(3)
        res = integrate_position(arr, c.T @ v_world, t0=self.t_fix, rule=self.cfg.integration)
        return c @ res.delta

    def measurement(self, t):
        if self.camera_ticks:
            tr = transform_about(self.rot_world, self.trans_world, self.anchor)
            gap = self.gap_delta
        else:
            tr = np.eye(4)
            gap = self._imu_displacement(t)
        m_p = compose_position_measurement(tr, self.anchor, gap)
        return Measurement(m_p, self.attitude.copy(), t)

    def _tick(self, t):
        if self.anchor is None:
            return
        z = self.measurement(t)
        if self.state is None:
            self.state = FilterState.initial(z.m_P, z.m_R, self.filter_cfg.initial_sigma)
            self.t_prev = t
            return
        dt = t - self.t_prev
        if not dt > 0:
            return
        model = self.controller.model
        noise = self.filter_cfg.noise
        predicted = predict(self.state, model, dt, noise)
        self.state, innov = update(predicted, z, noise, joseph=self.filter_cfg.joseph)
        self.singular += int(innov.singular)
        self.controller.observe(innov.y_p_mag, innov.y_r_mag)
        self.t_prev = t
        sigma = self.state.sigma
        self.records.append((t, *self.state.P, *self.state.R, innov.y_p_mag, innov.y_r_mag, float(np.trace(sigma))))
        self.models.append(model.name)
        step = len(self.records)
        if self.cfg.cov_every and step % self.cfg.cov_every == 0:
            self.covariances.append((step, t, sigma.copy()))

    def report(self, events, dropped, wall, cal) -> RunReport:
        rec = np.array(self.records, dtype=float).reshape(-1, 10)
        covs = list(self.covariances)
        if self.state is not None and (not covs or covs[-1][0] != len(rec)):
            covs.append((len(rec), float(rec[-1, 0]) if len(rec) else 0.0, self.state.sigma.copy()))
        return RunReport(
            t=rec[:, 0].copy(),
            position=rec[:, 1:4].copy(),
            rotation=rec[:, 4:7].copy(),
            y_p=rec[:, 7].copy(),
            y_r=rec[:, 8].copy(),
            models=list(self.models),
            trace=rec[:, 9].copy(),
            covariances=covs,
            origin=self.frame.origin if self.frame is not None else None,
            events=events,
            dropped=dropped,
            singular_updates=self.singular,
            wall_clock=wall,
            calibration=cal,
        )


def _setup(dataset, cfg, filter_cfg, famm_cfg):
    cfg = cfg or PipelineConfig()
    filter_cfg = filter_cfg or FilterConfig()
    famm_cfg = famm_cfg or FammConfig()
    # missing streams degrade the run to the sensors that are actually present
    camera_ticks = cfg.sensors == "camera-gps-imu" and len(dataset.vision) > 0
    use_imu = cfg.sensors != "gps" and len(dataset.imu) >= cfg.imu_batch
    loop = FusionLoop(cfg, filter_cfg, famm_cfg, camera_ticks, use_imu)
    return cfg, loop, calibration_for(dataset, cfg)


def _merge(streams):
    return heapq.merge(*streams, key=SensorEvent.sort_key)


def run_reference(dataset, cfg: Optional[PipelineConfig] = None, filter_cfg: Optional[FilterConfig] = None,
                  famm_cfg: Optional[FammConfig] = None) -> RunReport:
    """Single-threaded executor producing the same report as :func:`run_pipeline`."""
    start = time.perf_counter()
    cfg, loop, cal = _setup(dataset, cfg, filter_cfg, famm_cfg)
    vision = [ev for chunk in vision_chunks(dataset, cfg) for ev in chunk]
    gps, imu_events = [], []
    for source, chunk in gps_imu_chunks(dataset, cfg, cal):
        if chunk is not None:
            (gps if source == GPS else imu_events).extend(chunk)
    for ev in _merge([vision, gps, imu_events]):
        loop.handle(ev)
    return loop.report(_count_raw(dataset, cfg), 0, time.perf_counter() - start, cal)


def run_pipeline(dataset, cfg: Optional[PipelineConfig] = None, filter_cfg: Optional[FilterConfig] = None,
                 famm_cfg: Optional[FammConfig] = None) -> RunReport:
    """Replay a dataset through two producer threads and the fusion consumer.

    Parameters
    ----------
    dataset : Dataset
    cfg : PipelineConfig, optional
    filter_cfg : FilterConfig, optional
    famm_cfg : FammConfig, optional
        ``mode="cmm"`` pins the constant motion model.

    Returns
    -------
    RunReport
    """
    start = time.perf_counter()
    cfg, loop, cal = _setup(dataset, cfg, filter_cfg, famm_cfg)
    drop = cfg.clock == "realtime"
    channels = {src: Channel(cfg.queue_capacity, drop) for src in (VISION, GPS, IMU)}
    stop = threading.Event()
    errors = []

    def produce(gen, owned, pace_gps):
        wait = _pacer(cfg)
        open_ = set(owned)
        try:
            for source, chunk in gen:
                if stop.is_set():
                    return
                if chunk is None:
                    channels[source].close()
                    open_.discard(source)
                    continue
                if source != GPS or pace_gps:
                    wait(chunk[0].t)
                channels[source].put(chunk)
        except BaseException as exc:  # surfaced to the caller after join
            errors.append(exc)
        finally:
            if not stop.is_set():
                for src in open_:
                    channels[src].close()

    threads = [
        threading.Thread(target=produce, args=(((VISION, c) for c in vision_chunks(dataset, cfg)), {VISION}, True),
                         name="vision-producer", daemon=True),
        threading.Thread(target=produce, args=(gps_imu_chunks(dataset, cfg, cal), {GPS, IMU}, not loop.use_imu),
                         name="gps-imu-producer", daemon=True),
    ]
    for th in threads:
        th.start()
    try:
        for ev in _merge([channels[VISION].drain(), channels[GPS].drain(), channels[IMU].drain()]):
            loop.handle(ev)
    except BaseException:
        # stop the producers and keep freeing space until they notice
        stop.set()
        while any(th.is_alive() for th in threads):
            for ch in channels.values():
                ch.discard()
            for th in threads:
                th.join(0.005)
        raise
    finally:
        for th in threads:
            th.join()
    if errors:
        raise errors[0]
    dropped = sum(ch.dropped for ch in channels.values())
    return loop.report(_count_raw(dataset, cfg), dropped, time.perf_counter() - start, cal)


def source_name(source: int) -> str:
    return SOURCE_NAMES[source]

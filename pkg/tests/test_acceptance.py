"""Acceptance suite: one PASS/FAIL line per criterion, gathered at the end of the run.

Datasets and runs are cached per module, so the slower checks share work.
Run on its own with ``pytest tests/test_acceptance.py -v``.
"""

import functools
import math
import time

import numpy as np
import pytest

from fammfusion import famm, fusion, geodesy, imu, metrics, sim, vision
from fammfusion import pipeline as pl
from oracles import FIXED_ROWS, DenseKalman, ecef_mp, random_spd, symbolic_transform

REGIMES = list(sim.REGIME_STEPS)
SEEDS = range(10)
WARMUP = 20


def run(ds, sensors="camera-gps-imu", mode="famm", concurrent=False):
    fn = pl.run_pipeline if concurrent else pl.run_reference
    return fn(ds, pl.PipelineConfig(sensors=sensors), pl.FilterConfig(), pl.FammConfig(mode))


def mean_error(report):
    return metrics.summarize(report, WARMUP)["mean_error"]


@functools.lru_cache(maxsize=None)
def matrix():
    """Datasets and three-sensor FAMM/CMM runs for every (regime, seed) cell, plus the wall time."""
    start = time.perf_counter()
    data, runs = {}, {}
    for regime in REGIMES:
        for seed in SEEDS:
            ds = sim.make_regime(regime, seed)
            data[regime, seed] = ds
            runs[regime, seed] = (run(ds, mode="famm"), run(ds, mode="cmm"))
    return data, runs, time.perf_counter() - start


# ---------------------------------------------------------------------------


def test_criterion_01_ecef_conversion(verdict):
    rng = np.random.default_rng(2024)
    lat = rng.uniform(-math.pi / 2, math.pi / 2, 1000)
    lon = rng.uniform(-math.pi, math.pi, 1000)
    alt = rng.uniform(-9000.0, 9000.0, 1000)
    start = time.perf_counter()
    got = np.array([geodesy.geodetic_to_ecef(geodesy.GeodeticPosition(*p)) for p in zip(lat, lon, alt)])
    elapsed = time.perf_counter() - start
    ref = np.array([ecef_mp(*p) for p in zip(lat, lon, alt)])
    worst = float(np.max(np.abs(got - ref)))
    a, e2 = 6378137.0, 6.69437999e-3
    analytic = [((0.0, 0.0), (a, 0.0, 0.0)), ((0.0, math.pi / 2), (0.0, a, 0.0)),
                ((math.pi / 2, 0.0), (0.0, 0.0, a * math.sqrt(1 - e2)))]
    worst_analytic = max(
        float(np.max(np.abs(np.subtract(geodesy.geodetic_to_ecef(geodesy.GeodeticPosition(la, lo, 0.0)), xyz))))
        for (la, lo), xyz in analytic
    )
    ok = worst <= 1e-6 and worst_analytic <= 1e-6 and elapsed < 1.0
    verdict(1, ok, f"ECEF vs 40-digit oracle max |err| {worst:.2e} m, analytic {worst_analytic:.2e} m "
                   f"(tol 1e-6), 1000 points in {elapsed:.3f} s (limit 1 s)")
    assert ok


def test_criterion_02_transform_fidelity(verdict):
    rng = np.random.default_rng(7)
    worst, rigid = 0.0, True
    for _ in range(1000):
        rot = rng.uniform(-math.pi, math.pi, 3)
        trans = rng.uniform(-100, 100, 3)
        m = vision.build_transform(vision.VisionDelta.make(rot, trans))
        worst = max(worst, float(np.max(np.abs(m - symbolic_transform(rot, trans)))))
        r = m[:3, :3]
        rigid &= bool(np.max(np.abs(r.T @ r - np.eye(3))) <= 1e-12 and abs(np.linalg.det(r) - 1) <= 1e-12)
    ok = worst <= 1e-9 and rigid
    verdict(2, ok, f"transform vs symbolic matrix max |err| {worst:.2e} (tol 1e-9), orthonormal det=+1: {rigid}")
    assert ok


def test_criterion_03_kalman_oracle(verdict):
    rng = np.random.default_rng(33)
    x0 = rng.normal(size=12)
    s0 = random_spd(rng, 12)
    noise = fusion.NoiseConfig(random_spd(rng, 12, 0.05), random_spd(rng, 6, 0.5))
    ours = fusion.FilterState(x0.copy(), s0.copy())
    ref = DenseKalman(x0, s0, noise.Q, noise.Rm)
    worst, psd = 0.0, True
    for _ in range(1000):
        model = famm.ALL_MODELS[rng.integers(9)]
        dt = float(rng.uniform(0.01, 1.0))
        z = ours.x[fusion.OBSERVED] + rng.normal(size=6) * 2
        ours = fusion.predict(ours, model, dt, noise)
        ref.predict(dt, model.i, model.j)
        ours, _ = fusion.update(ours, z, noise)
        ref.update(z)
        d = ours.x - ref.x
        d[6:9] = np.arctan2(np.sin(d[6:9]), np.cos(d[6:9]))
        worst = max(worst, float(np.max(np.abs(d))))
        psd &= fusion.is_symmetric_psd(ours.sigma)
    ok = worst <= 1e-9 and psd
    verdict(3, ok, f"structured filter vs dense reference over 1000 cycles max |dx| {worst:.2e} (tol 1e-9), "
                   f"symmetric PSD every step: {psd}")
    assert ok


def test_criterion_04_rule_base(verdict):
    start = time.perf_counter()
    rb = famm.load_rules()
    verbatim = sum(
        rb.lookup(famm.Level.parse(p), famm.Level.parse(r), famm.MotionModel.parse(c)) == famm.MotionModel.parse(n)
        for p, r, c, n in FIXED_ROWS
    )
    total = len({rule.key for rule in rb})
    corners = sum(
        famm.select_model(famm.fire_rules(dp, dr, m, rb), rb) == rb.lookup(yp, yr, m)
        for yp, yr, m, dp, dr in famm.crisp_corners()
    )
    elapsed = time.perf_counter() - start
    ok = len(FIXED_ROWS) == 54 and verbatim == 54 and total == 81 and corners == 81 and elapsed < 0.1
    verdict(4, ok, f"default rules load, fixed rows {verbatim}/54, keys {total}/81, crisp corners {corners}/81, "
                   f"{elapsed * 1000:.1f} ms (limit 100 ms)")
    assert ok


def test_criterion_05_stationary(verdict):
    start = time.perf_counter()
    fractions, deltas = [], []
    for seed in SEEDS:
        ds = sim.make_regime("stationary", seed)
        a, b = run(ds, mode="famm"), run(ds, mode="cmm")
        fractions.append(metrics.model_histogram(a.models, WARMUP)["P0R0"])
        deltas.append(mean_error(a) - mean_error(b))
    elapsed = time.perf_counter() - start
    gps_imu = []
    for seed in SEEDS:
        ds = sim.make_regime("stationary", seed)
        gps_imu.append(mean_error(run(ds, "gps-imu", "famm")) - mean_error(run(ds, "gps-imu", "cmm")))
    lines = [f"    FAMM-CMM mean error per seed, three sensors: {np.round(deltas, 4).tolist()}",
             f"    FAMM-CMM mean error per seed, GPS-IMU:       {np.round(gps_imu, 4).tolist()}"]
    ok = min(fractions) >= 0.95 and float(np.mean(deltas)) < 0 and elapsed < 5.0
    verdict(5, ok, f"stationary P0R0 share after warm-up min {min(fractions):.3f} (need >= 0.95); "
                   f"10-seed mean error FAMM-CMM {np.mean(deltas):+.4f} m (need < 0; GPS-IMU {np.mean(gps_imu):+.4f}); "
                   f"{elapsed:.2f} s (limit 5 s)", lines)
    assert ok


def test_criterion_06_directional_benefit(verdict):
    data, runs, elapsed = matrix()
    wins = 0
    lines = ["    mean filter error (m) per seed as FAMM/CMM, + where FAMM <= CMM"]
    for regime in REGIMES:
        cells = []
        for seed in SEEDS:
            a, b = (mean_error(r) for r in runs[regime, seed])
            wins += a <= b
            cells.append(f"{seed}:{a:.3f}/{b:.3f}{'+' if a <= b else '-'}")
        lines.append(f"    {regime:<12s} " + " ".join(cells))
    n = len(REGIMES) * len(SEEDS)
    ok = wins > n / 2 and elapsed < 120.0
    verdict(6, ok, f"FAMM <= CMM in {wins}/{n} (regime, seed) cells (need a majority), "
                   f"matrix built in {elapsed:.1f} s (limit 120 s)", lines)
    assert ok


def test_criterion_07_covariance_decrease(verdict):
    _, runs, _ = matrix()
    diffs = [runs["stationary", s][0].trace[-1] - runs["stationary", s][1].trace[-1] for s in SEEDS]
    ok = max(diffs) <= 1e-9
    verdict(7, ok, f"stationary steady-state trace(Sigma) FAMM-CMM worst over 10 seeds {max(diffs):+.4f} "
                   f"(need <= 1e-9)")
    assert ok


def test_criterion_08_loop_closure(verdict):
    data, runs, _ = matrix()
    wins, rows = 0, []
    for seed in SEEDS:
        famm_gap = metrics.loop_gap(runs["loop", seed][0], 0.0)
        cmm_gap = metrics.loop_gap(run(data["loop", seed], "gps-imu", "cmm"), 0.0)
        wins += famm_gap <= cmm_gap
        rows.append(f"{seed}:{famm_gap:.2f}/{cmm_gap:.2f}")
    ok = wins > len(SEEDS) / 2
    verdict(8, ok, f"loop gap three-sensor FAMM <= GPS-IMU CMM on {wins}/10 seeds (need a majority)",
            ["    end-to-start gap (m) per seed as FAMM/CMM: " + " ".join(rows)])
    assert ok


def test_criterion_09_accuracy_scale(verdict):
    data, runs, _ = matrix()
    per_regime = {
        regime: float(np.mean([metrics.rms_position_error(data[regime, s], runs[regime, s][0], WARMUP) for s in SEEDS]))
        for regime in REGIMES
    }
    ok = max(per_regime.values()) <= 1.5
    text = ", ".join(f"{k} {v:.2f}" for k, v in per_regime.items())
    verdict(9, ok, f"three-sensor RMS position error, 10-seed mean per regime (m): {text} (need <= 1.5 on every regime)")
    assert ok


def test_criterion_10_determinism_and_speed(verdict):
    data, runs, _ = matrix()
    mismatches = []
    for regime in REGIMES:
        ds = data[regime, 0]
        for sensors in pl.SENSOR_SETS:
            ref = runs[regime, 0][0] if sensors == "camera-gps-imu" else run(ds, sensors)
            if run(ds, sensors, concurrent=True).fingerprint() != ref.fingerprint():
                mismatches.append((regime, sensors))
    spec = sim.TrajectorySpec([sim.Segment(20.0, 1.0), sim.Segment(10.0, 0.8, 0.3, "turn"), sim.Segment(30.0, 1.2)])
    minute = sim.synthesize_sensors(sim.generate_truth(spec), sim.SensorNoiseSpec(), 0)
    run(minute, concurrent=True)
    start = time.perf_counter()
    rep = run(minute, concurrent=True)
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed < 1.0 and rep.dropped == 0
    verdict(10, ok, f"concurrent == reference bit for bit on {len(REGIMES) * 3 - len(mismatches)}/{len(REGIMES) * 3} "
                    f"(regime, sensors) runs; 60 s dataset in {elapsed:.3f} s unpaced (limit 1 s)")
    assert ok


def test_criterion_11_imu(verdict):
    accel, gyro = (-0.000817, 0.158242, 0.987314), (-0.216527, -0.052387, -0.183611)
    arr = np.empty((5000, 7))
    arr[:, 0] = np.arange(1, 5001) * 0.004
    arr[:, 1:4], arr[:, 4:7] = accel, gyro
    cal = imu.calibrate(arr)
    exact = tuple(cal.accel_offset) == accel and tuple(cal.gyro_offset) == gyro

    ramp = np.zeros((4, 7))
    ramp[:, 0] = [0.25, 0.5, 0.75, 1.0]
    ramp[:, 1] = 1.0
    hand = abs(imu.integrate_position(ramp, (0, 0, 0), t0=0.0).delta[0] - 0.625)

    drifts = []
    for seed in SEEDS:
        spec = sim.TrajectorySpec([sim.Segment(600.0, profile="stationary")])
        ds = sim.synthesize_sensors(sim.generate_truth(spec), sim.SensorNoiseSpec(), seed)
        batches = imu.batch_average_stream(ds.imu, imu.calibrate(ds.imu_calibration), 4)
        start = imu.AttitudeMeasurement(0.0, 0.0, 0.0, float(ds.imu[0, 0]))
        yaw = imu.integrate_attitude(batches, start)[:, 2]
        drifts.append(math.degrees(abs(yaw[-1])) / 10.0)
    ok = exact and hand <= 1e-12 and max(drifts) <= 0.5
    verdict(11, ok, f"calibration fixed point exact: {exact}; 0.625 m case |err| {hand:.1e} (tol 1e-12); "
                    f"calibrated yaw drift max {max(drifts):.3f} deg/min over 10 x 600 s (limit 0.5)")
    assert ok


@pytest.mark.parametrize("regime", REGIMES)
def test_matrix_runs_are_finite(regime):
    _, runs, _ = matrix()
    for seed in SEEDS:
        for rep in runs[regime, seed]:
            assert np.all(np.isfinite(rep.position)) and rep.singular_updates == 0

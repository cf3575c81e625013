import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fammfusion import fusion as f
from fammfusion.famm import ALL_MODELS, CMM, MotionModel
from fammfusion.vision import VisionDelta, build_transform
from oracles import DenseKalman, random_spd


def state(P=(0, 0, 0), V=(0, 0, 0), R=(0, 0, 0), W=(0, 0, 0), sigma=None):
    x = np.concatenate([P, V, R, W]).astype(float)
    return f.FilterState(x, np.eye(12) if sigma is None else np.asarray(sigma, float))


ZERO_Q = f.NoiseConfig(np.zeros((12, 12)), np.eye(6))


# ---------------------------------------------------------------------------
# prediction


def test_cmm_prediction_moves_position_by_velocity():
    out = f.predict(state(V=(1, 2, 3)), CMM, 1.0, ZERO_Q)
    np.testing.assert_array_equal(out.P, (1, 2, 3))
    np.testing.assert_array_equal(out.V, (1, 2, 3))


@pytest.mark.parametrize("dt", [0.01, 0.25, 3.0])
def test_stationary_model_holds_pose(dt):
    s = state(P=(4, 5, 6), V=(1, 2, 3), R=(0.1, 0.2, 0.3), W=(1, 1, 1))
    out = f.predict(s, MotionModel(0, 0), dt, ZERO_Q)
    np.testing.assert_array_equal(out.P, s.P)
    np.testing.assert_array_equal(out.R, s.R)


def test_doubled_rotational_velocity():
    out = f.predict(state(W=(0, 0, 1)), MotionModel(1, 2), 0.5, ZERO_Q)
    assert out.R[2] == pytest.approx(1.0, abs=1e-15)


def test_transition_matrix_structure():
    m = f.transition_matrix(0.3, 1, 1)
    coupled = {(0, 3), (1, 4), (2, 5), (6, 9), (7, 10), (8, 11)}
    for r in range(12):
        for c in range(12):
            expected = 1.0 if r == c else (0.3 if (r, c) in coupled else 0.0)
            assert m[r, c] == expected


@settings(max_examples=60)
@given(st.sampled_from(ALL_MODELS), st.floats(0.001, 2.0), st.integers(0, 2**32 - 1))
def test_structured_predict_equals_dense_product(model, dt, seed):
    rng = np.random.default_rng(seed)
    s = f.FilterState(rng.normal(size=12) * 0.3, random_spd(rng, 12))
    q = f.NoiseConfig(random_spd(rng, 12, 0.01), np.eye(6))
    out = f.predict(s, model, dt, q)
    fm = f.transition_matrix(dt, model.i, model.j)
    np.testing.assert_allclose(out.sigma, fm @ s.sigma @ fm.T + q.Q, atol=1e-12)
    np.testing.assert_allclose(out.x[:6], (fm @ s.x)[:6], atol=1e-12)


def test_non_positive_dt():
    with pytest.raises(ValueError):
        f.predict(state(), CMM, 0.0, ZERO_Q)


@pytest.mark.parametrize("bad", ["asymmetric", "negative", "nan"])
def test_corrupt_covariance_detected(bad):
    sigma = np.eye(12)
    if bad == "asymmetric":
        sigma[0, 1] = 0.5
    elif bad == "negative":
        sigma[3, 3] = -1.0
    else:
        sigma[2, 2] = math.nan
    with pytest.raises(f.StateCorrupt):
        f.predict(state(sigma=sigma), CMM, 0.1, ZERO_Q)


# ---------------------------------------------------------------------------
# measurement composition


def test_compose_identity():
    np.testing.assert_array_equal(f.compose_position_measurement(np.eye(4), (3, 4, 5), (0, 0, 0)), (3, 4, 5))


def test_compose_translation_plus_offset():
    tr = build_transform(VisionDelta.make((0, 0, 0), (1, 0, 0)))
    np.testing.assert_array_equal(f.compose_position_measurement(tr, (0, 0, 0), (0, 1, 0)), (1, 1, 0))


def test_compose_rotation_then_offset():
    tr = build_transform(VisionDelta.make((0, math.pi / 2, 0), (0, 0, 0)))
    out = f.compose_position_measurement(tr, (1, 0, 0), (0, 0, 0.5))
    np.testing.assert_allclose(out, (0, 0, -0.5), atol=1e-15)


# ---------------------------------------------------------------------------
# update


def test_perfect_measurement_has_zero_innovation():
    s = state(P=(1, 2, 3), R=(0.1, 0.2, 0.3))
    out, innov = f.update(s, np.concatenate([s.P, s.R]), ZERO_Q)
    assert innov.y_p_mag == 0 and innov.y_r_mag == 0
    np.testing.assert_array_equal(out.x, s.x)
    assert np.trace(out.sigma) < np.trace(s.sigma)


def test_scalar_slice():
    noise = f.NoiseConfig(np.zeros((12, 12)), np.eye(6))
    out, innov = f.update(state(), [2, 0, 0, 0, 0, 0], noise)
    assert out.P[0] == pytest.approx(1.0, abs=1e-15)
    assert out.sigma[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert innov.y_p_mag == 2.0


def test_huge_measurement_noise_ignores_measurement():
    noise = f.NoiseConfig(np.zeros((12, 12)), np.eye(6) * 1e12)
    s = state(P=(1, 1, 1))
    out, _ = f.update(s, [100, -50, 7, 1, 1, 1], noise)
    assert np.linalg.norm(out.x - s.x) <= 1e-6


def test_innovation_split_and_wrapping():
    s = state(R=(0, 0, math.pi - 0.05))
    innov = f.innovation(s, [3, 4, 0, 0, 0, -math.pi + 0.05])
    assert innov.y_p_mag == 5.0
    assert innov.y_r_mag == pytest.approx(0.1, abs=1e-12)


def test_filter_error_is_positional_norm():
    innov = f.Innovation(np.array([3.0, 4.0, 0, 1, 1, 1]), 5.0, math.sqrt(3))
    assert f.filter_error(innov) == 5.0
    assert f.filter_error(f.Innovation(np.zeros(6), 0.0, 0.0)) == 0.0


def test_singular_innovation_covariance_falls_back():
    noise = f.NoiseConfig(np.zeros((12, 12)), np.zeros((6, 6)))
    sigma = np.zeros((12, 12))
    out, innov = f.update(state(sigma=sigma), [1, 0, 0, 0, 0, 0], noise)
    assert innov.singular
    assert np.all(np.isfinite(out.x))


def test_measurement_object_accepted():
    z = f.Measurement(np.array([1.0, 0, 0]), np.zeros(3), 0.5)
    _, innov = f.update(state(), z, ZERO_Q)
    assert innov.y_p_mag == 1.0


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_joseph_and_standard_forms_agree(seed):
    rng = np.random.default_rng(seed)
    s = f.FilterState(rng.normal(size=12), random_spd(rng, 12))
    noise = f.NoiseConfig(random_spd(rng, 12, 0.01), random_spd(rng, 6, 0.5))
    z = rng.normal(size=6)
    a, _ = f.update(s, z, noise)
    b, _ = f.update(s, z, noise, joseph=True)
    np.testing.assert_allclose(a.x, b.x, atol=1e-8)
    np.testing.assert_allclose(a.sigma, b.sigma, atol=1e-8)


# ---------------------------------------------------------------------------
# whole-filter properties


def test_matches_dense_reference_over_1000_cycles():
    rng = np.random.default_rng(11)
    x0 = rng.normal(size=12) * 0.5
    s0 = random_spd(rng, 12)
    noise = f.NoiseConfig(random_spd(rng, 12, 0.02), random_spd(rng, 6, 0.3))
    ours = f.FilterState(x0.copy(), s0.copy())
    ref = DenseKalman(x0, s0, noise.Q, noise.Rm)
    worst = 0.0
    for _ in range(1000):
        model = ALL_MODELS[rng.integers(9)]
        dt = rng.uniform(0.01, 0.5)
        z = ours.x[f.OBSERVED] + rng.normal(size=6)
        ours = f.predict(ours, model, dt, noise)
        ref.predict(dt, model.i, model.j)
        ours, innov = f.update(ours, z, noise)
        y = ref.update(z)
        d = ours.x - ref.x
        d[6:9] = np.arctan2(np.sin(d[6:9]), np.cos(d[6:9]))
        worst = max(worst, np.max(np.abs(d)))
        np.testing.assert_allclose(innov.y, y, atol=1e-9)
        assert f.is_symmetric_psd(ours.sigma)
    assert worst <= 1e-9


def test_covariance_stays_psd_over_10000_cycles():
    rng = np.random.default_rng(12)
    noise = f.NoiseConfig.from_sigmas()
    s = f.FilterState.initial((0, 0, 0), (0, 0, 0))
    for _ in range(10000):
        s = f.predict(s, ALL_MODELS[rng.integers(9)], rng.uniform(0.05, 1.0), noise)
        s, _ = f.update(s, rng.normal(size=6) * [3, 3, 3, 0.05, 0.05, 0.05], noise)
        assert np.max(np.abs(s.sigma - s.sigma.T)) <= 1e-9
        assert np.linalg.eigvalsh(s.sigma)[0] >= -1e-9


def test_converges_on_noiseless_stationary_truth():
    truth = np.array([12.0, -7.0, 3.0])
    noise = f.NoiseConfig(np.zeros((12, 12)), np.eye(6) * 1e-6)
    s = f.FilterState.initial((0, 0, 0), (0, 0, 0))
    for _ in range(50):
        s = f.predict(s, CMM, 0.25, noise)
        s, _ = f.update(s, np.concatenate([truth, [0.1, 0.0, -0.2]]), noise)
    assert np.linalg.norm(s.P - truth) <= 1e-6


def test_noise_config_validation():
    with pytest.raises(ValueError):
        f.NoiseConfig(np.zeros((11, 11)), np.eye(6))
    with pytest.raises(ValueError):
        f.NoiseConfig(-np.eye(12), np.eye(6))


def test_from_sigmas_diagonal():
    n = f.NoiseConfig.from_sigmas(position=2.0, rotation=0.1, q_position=0.5, q_velocity=0.25, q_rotation=0.1,
                                  q_omega=0.2)
    np.testing.assert_allclose(np.diag(n.Rm), [4, 4, 4, 0.01, 0.01, 0.01])
    np.testing.assert_allclose(np.diag(n.Q)[[0, 3, 6, 9]], [0.25, 0.0625, 0.01, 0.04])


def test_initial_state_wraps_rotation():
    s = f.FilterState.initial((1, 2, 3), (0, 0, 3 * math.pi))
    assert s.R[2] == pytest.approx(math.pi)
    assert f.is_symmetric_psd(s.sigma)

"""scikit-learn style wrappers around the core routines.

These make the calibration, frame conversion and adaptive filter usable in
``sklearn`` pipelines and parameter searches. They add input validation via
:func:`sklearn.utils.check_array` and otherwise delegate to the functional API.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from . import famm, fusion, geodesy, imu


class ImuBiasCalibrator(TransformerMixin, BaseEstimator):
    """Learn per-axis offsets from a stationary capture and subtract them.

    ``X`` has six columns ``ax, ay, az, gx, gy, gz`` or seven with a leading
    time column, which is passed through untouched.
    """

    def __init__(self, min_samples=100):
        self.min_samples = min_samples

    def _split(self, X):
        X = check_array(X, dtype=float)
        if X.shape[1] not in (6, 7):
            raise ValueError(f"expected 6 or 7 columns, got {X.shape[1]}")
        return X, X.shape[1] - 6

    def fit(self, X, y=None):
        X, lead = self._split(X)
        if lead == 0:
            X = np.column_stack([np.arange(len(X), dtype=float), X])
        cal = imu.calibrate(X, self.min_samples)
        self.offsets_ = cal.offsets
        self.n_features_in_ = X.shape[1] - (1 - lead)
        return self

    def transform(self, X):
        check_is_fitted(self, "offsets_")
        X, lead = self._split(X)
        out = X.copy()
        out[:, lead:] -= self.offsets_
        return out


class LocalFrameTransformer(TransformerMixin, BaseEstimator):
    """Geodetic ``(lat, lon, alt)`` rows (radians, meters) to local ENU meters.

    Parameters
    ----------
    origin : tuple, optional
        Frame origin; the first row seen by ``fit`` when omitted.
    a, e2 : float
        Ellipsoid semi-major axis and squared eccentricity.
    """

    def __init__(self, origin=None, a=geodesy.WGS84.a, e2=geodesy.WGS84.e2):
        self.origin = origin
        self.a = a
        self.e2 = e2

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        origin = X[0] if self.origin is None else np.asarray(self.origin, dtype=float)
        self.frame_ = geodesy.LocalFrame(geodesy.GeodeticPosition(*origin), geodesy.Ellipsoid(self.a, self.e2))
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "frame_")
        X = check_array(X, dtype=float)
        return self.frame_.geodetic_to_local(X[:, 0], X[:, 1], X[:, 2])

    def inverse_transform(self, X):
        check_is_fitted(self, "frame_")
        X = check_array(X, dtype=float)
        return np.column_stack(self.frame_.local_to_geodetic(X))


class FammFilter(BaseEstimator):
    """Pose filter over a measurement sequence.

    ``X`` rows are ``t, mPx, mPy, mPz, mRx, mRy, mRz``. ``fit`` runs the
    filter and stores per-step estimates; ``predict`` returns the filtered
    ``(P, R)`` for a new sequence, starting from scratch.

    Parameters
    ----------
    mode : {"famm", "cmm"}
    positional_breakpoints : tuple of float
    rotational_breakpoints : tuple of float
        Radians.
    position_sigma, rotation_sigma, q_position, q_velocity, q_rotation, q_omega : float
        See :meth:`fammfusion.fusion.NoiseConfig.from_sigmas`.
    """

    def __init__(
        self,
        mode="famm",
        positional_breakpoints=famm.MembershipConfig().positional,
        rotational_breakpoints=famm.MembershipConfig().rotational,
        position_sigma=2.5,
        rotation_sigma=math.radians(2.0),
        q_position=0.08,
        q_velocity=0.005,
        q_rotation=1e-4,
        q_omega=2e-3,
    ):
        self.mode = mode
        self.positional_breakpoints = positional_breakpoints
        self.rotational_breakpoints = rotational_breakpoints
        self.position_sigma = position_sigma
        self.rotation_sigma = rotation_sigma
        self.q_position = q_position
        self.q_velocity = q_velocity
        self.q_rotation = q_rotation
        self.q_omega = q_omega

    def _run(self, X):
        X = check_array(X, dtype=float)
        if X.shape[1] != 7:
            raise ValueError(f"expected 7 columns (t, m_P, m_R), got {X.shape[1]}")
        if np.any(np.diff(X[:, 0]) <= 0):
            raise ValueError("measurement times must strictly increase")
        noise = fusion.NoiseConfig.from_sigmas(
            self.position_sigma, self.rotation_sigma, self.q_position, self.q_velocity, self.q_rotation, self.q_omega
        )
        if self.mode == "cmm":
            ctrl = famm.ConstantController()
        elif self.mode == "famm":
            ctrl = famm.FammController(
                memberships=famm.MembershipConfig(self.positional_breakpoints, self.rotational_breakpoints)
            )
        else:
            raise ValueError(f"mode must be 'famm' or 'cmm', got {self.mode!r}")
        state = fusion.FilterState.initial(X[0, 1:4], X[0, 4:7])
        out = np.empty((len(X), 6))
        out[0] = np.concatenate([state.P, state.R])
        errors, models = [], []
        for k in range(1, len(X)):
            model = ctrl.model
            state = fusion.predict(state, model, X[k, 0] - X[k - 1, 0], noise)
            state, innov = fusion.update(state, X[k, 1:], noise)
            ctrl.observe(innov.y_p_mag, innov.y_r_mag)
            out[k] = np.concatenate([state.P, state.R])
            errors.append(innov.y_p_mag)
            models.append(model.name)
        return out, np.array(errors), models, state

    def fit(self, X, y=None):
        self.estimates_, self.errors_, self.models_, self.state_ = self._run(X)
        self.n_features_in_ = 7
        return self

    def predict(self, X):
        check_is_fitted(self, "state_")
        return self._run(X)[0]

    def score(self, X, y=None):
        """Negative mean filter error, so that larger is better."""
        return -float(np.mean(self._run(X)[1]))

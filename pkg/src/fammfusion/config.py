"""Run configuration: a flat ``key=value`` mapping with dotted sections.

Every key has a default; unknown keys and malformed values raise
:class:`ConfigError` naming the offending field. The resolved mapping is
echoed into every output file so a run can be reproduced from its outputs.
"""

from __future__ import annotations

import math
import os
from dataclasses import fields

from . import famm, fusion, geodesy, sim
from .kvfile import KvSyntaxError, dump_kv, load_kv
from .pipeline import CLOCKS, SENSOR_SETS, FammConfig, FilterConfig, PipelineConfig


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}" if field_name else message)
        self.field = field_name
        self.detail = message


_NOISE_DEFAULTS = {f"noise.{f.name}": f.default for f in fields(sim.SensorNoiseSpec)}

DEFAULTS = {
    "dataset": "",
    "regime": "stationary",
    "scale": 1.0,
    "seed": 0,
    "mode": "famm",
    "sensors": "camera-gps-imu",
    "rules": "",
    "out": "",
    "warmup": 20,
    "filter.position_sigma": 2.5,
    "filter.rotation_sigma_deg": 2.0,
    "filter.q_position": 0.08,
    "filter.q_velocity": 0.005,
    "filter.q_rotation": 1e-4,
    "filter.q_omega": 2e-3,
    "filter.init_position_sigma": 2.5,
    "filter.init_velocity_sigma": 0.05,
    "filter.init_rotation_sigma_deg": 2.0,
    "filter.init_omega_sigma": 0.01,
    "filter.joseph": False,
    "membership.positional": famm.MembershipConfig().positional,
    "membership.rotational_deg": tuple(math.degrees(v) for v in famm.MembershipConfig().rotational),
    "famm.initial": "P0R0",
    "pipeline.imu_batch": 4,
    "pipeline.clock": "fast",
    "pipeline.queue_capacity": 64,
    "pipeline.integration": "rectangular",
    "pipeline.tick_rate": 4.0,
    "pipeline.speed": 1.0,
    "pipeline.cov_every": 0,
    "geodesy.a": geodesy.WGS84.a,
    "geodesy.e2": geodesy.WGS84.e2,
    **_NOISE_DEFAULTS,
}

CHOICES = {
    "mode": ("famm", "cmm"),
    "sensors": SENSOR_SETS,
    "pipeline.clock": CLOCKS,
    "pipeline.integration": ("rectangular", "trapezoidal"),
    "famm.initial": tuple(m.name for m in famm.ALL_MODELS),
}

NONNEGATIVE = {"scale", "warmup", "pipeline.cov_every"} | {
    k for k in DEFAULTS if k.startswith("filter.") and k != "filter.joseph"
}


def _coerce(key, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(key, f"expected true or false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(key, f"expected a finite number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = (float(value),)
        if not isinstance(value, tuple) or len(value) != len(default):
            raise ConfigError(key, f"expected {len(default)} comma-separated numbers, got {value!r}")
        return tuple(float(v) for v in value)
    return str(value)


class RunConfig:
    """Validated flat configuration.

    Parameters
    ----------
    values : dict, optional
        Overrides keyed like :data:`DEFAULTS`.
    """

    def __init__(self, values=None):
        merged = dict(DEFAULTS)
        for key, value in (values or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(key, "unknown key")
            merged[key] = _coerce(key, value, DEFAULTS[key])
        for key, options in CHOICES.items():
            merged[key] = merged[key].lower() if key != "famm.initial" else merged[key].upper()
            if merged[key] not in options:
                raise ConfigError(key, f"must be one of {', '.join(options)}, got {merged[key]!r}")
        for key in NONNEGATIVE:
            if merged[key] < 0:
                raise ConfigError(key, "must be nonnegative")
        self.values = merged
        self._validate()

    def _validate(self):
        v = self.values
        if v["dataset"] and not os.path.isdir(v["dataset"]):
            raise ConfigError("dataset", f"bundle directory {v['dataset']!r} does not exist")
        if v["rules"] and not os.path.isfile(v["rules"]):
            raise ConfigError("rules", f"rule file {v['rules']!r} does not exist")
        if not v["dataset"]:
            name = sim.REGIME_ALIASES.get(str(v["regime"]), v["regime"])
            if name not in sim.REGIME_STEPS:
                raise ConfigError("regime", f"unknown regime {v['regime']!r}")
        if not v["scale"] > 0:
            raise ConfigError("scale", "must be positive")
        # build each section once so field-level errors surface at load time
        for key, build in (
            ("membership", self.memberships),
            ("pipeline", self.pipeline),
            ("filter", self.filter),
            ("noise", self.noise_spec),
            ("geodesy", self.ellipsoid),
        ):
            try:
                build()
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None

    # construction -------------------------------------------------------

    @classmethod
    def from_text(cls, text: str, overrides=None):
        try:
            values = load_kv(text)
        except KvSyntaxError as exc:
            raise ConfigError("", str(exc)) from None
        values.update(overrides or {})
        return cls(values)

    @classmethod
    def from_file(cls, path, overrides=None):
        try:
            text = open(path).read()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path!r}: {exc.strerror}") from None
        try:
            return cls.from_text(text, overrides)
        except ConfigError as exc:
            raise ConfigError(exc.field, f"{exc.detail} (in {path})") from None

    def replace(self, **overrides):
        values = dict(self.values)
        values.update({k.replace("__", "."): v for k, v in overrides.items()})
        return RunConfig(values)

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def to_text(self) -> str:
        return dump_kv(self.values)

    def header_lines(self):
        return [f"{k}={v}" for k, v in (line.split("=", 1) for line in self.to_text().splitlines())]

    # section builders ----------------------------------------------------

    def memberships(self) -> famm.MembershipConfig:
        rot = tuple(math.radians(d) for d in self.values["membership.rotational_deg"])
        try:
            return famm.MembershipConfig(self.values["membership.positional"], rot)
        except ValueError as exc:
            raise ConfigError("membership", str(exc)) from None

    def ellipsoid(self) -> geodesy.Ellipsoid:
        try:
            return geodesy.Ellipsoid(self.values["geodesy.a"], self.values["geodesy.e2"])
        except ValueError as exc:
            raise ConfigError("geodesy", str(exc)) from None

    def pipeline(self) -> PipelineConfig:
        v = self.values
        try:
            return PipelineConfig(
                imu_batch=v["pipeline.imu_batch"],
                clock=v["pipeline.clock"],
                queue_capacity=v["pipeline.queue_capacity"],
                sensors=v["sensors"],
                integration=v["pipeline.integration"],
                tick_rate=v["pipeline.tick_rate"],
                speed=v["pipeline.speed"],
                cov_every=v["pipeline.cov_every"],
                ellipsoid=self.ellipsoid(),
            )
        except ValueError as exc:
            raise ConfigError("pipeline", str(exc)) from None

    def noise(self) -> fusion.NoiseConfig:
        v = self.values
        return fusion.NoiseConfig.from_sigmas(
            position=v["filter.position_sigma"],
            rotation=math.radians(v["filter.rotation_sigma_deg"]),
            q_position=v["filter.q_position"],
            q_velocity=v["filter.q_velocity"],
            q_rotation=v["filter.q_rotation"],
            q_omega=v["filter.q_omega"],
        )

    def filter(self) -> FilterConfig:
        v = self.values
        init = (
            (v["filter.init_position_sigma"] ** 2,) * 3
            + (v["filter.init_velocity_sigma"] ** 2,) * 3
            + (math.radians(v["filter.init_rotation_sigma_deg"]) ** 2,) * 3
            + (v["filter.init_omega_sigma"] ** 2,) * 3
        )
        return FilterConfig(noise=self.noise(), initial_sigma=init, joseph=v["filter.joseph"])

    def rulebase(self) -> famm.RuleBase:
        try:
            return famm.load_rules(self.values["rules"] or None)
        except famm.RuleBaseError as exc:
            raise ConfigError("rules", str(exc)) from None

    def famm(self) -> FammConfig:
        return FammConfig(
            mode=self.values["mode"],
            rulebase=self.rulebase() if self.values["mode"] == "famm" else None,
            memberships=self.memberships(),
            initial=famm.MotionModel.parse(self.values["famm.initial"]),
        )

    def noise_spec(self) -> sim.SensorNoiseSpec:
        kwargs = {k.split(".", 1)[1]: self.values[k] for k in _NOISE_DEFAULTS}
        try:
            return sim.SensorNoiseSpec(**kwargs)
        except ValueError as exc:
            raise ConfigError("noise", str(exc)) from None

    def dataset(self):
        """The bundle named by ``dataset`` or a freshly generated regime."""
        if self.values["dataset"]:
            return sim.read_bundle(self.values["dataset"])
        return sim.make_regime(self.values["regime"], self.values["seed"], self.noise_spec(), self.values["scale"])

    def dataset_identity(self):
        """Key identifying the input data, used to check two runs are comparable."""
        v = self.values
        if v["dataset"]:
            return ("bundle", os.path.realpath(v["dataset"]))
        noise = tuple(sorted((k, v[k]) for k in _NOISE_DEFAULTS))
        return ("regime", sim.REGIME_ALIASES.get(str(v["regime"]), v["regime"]), v["seed"], v["scale"], noise)


def load_config(path=None, overrides=None) -> RunConfig:
    if path is None:
        return RunConfig(overrides or {})
    return RunConfig.from_file(path, overrides)

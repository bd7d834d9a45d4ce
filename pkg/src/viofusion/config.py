"""Run configuration: a flat, fully defaulted schema behind an INI file.

Every knob has a default, so an empty file is a valid config. Unknown
sections or keys are rejected rather than ignored; a typo in an ablation
flag silently running the wrong experiment is the failure mode this guards
against. ``use_ema`` is accepted as an input alias for the fusion mode
(true -> "ema", false -> "lstm") and must agree with ``fusion_mode`` when
both are given. Serialization always writes the canonical keys, and
parse -> serialize -> parse is the identity on the config value.
"""

from __future__ import annotations

import configparser
import io

from .errors import ConfigError
from .fusion import FUSION_MODES

# (section, key, type, default); bool fields use configparser semantics
SCHEMA = [
    ("model", "visual_dim", int, 128),
    ("model", "inertial_dim", int, 128),
    ("model", "n_tokens", int, 4),
    ("model", "token_width", int, 64),
    ("model", "memory_slots", int, 32),
    ("model", "wavenet_layers", int, 4),
    ("model", "wavenet_channels", int, 64),
    ("model", "kernel_size", int, 2),
    ("model", "image_size", int, 64),
    ("model", "sequence_length", int, 5),
    ("model", "fusion_mode", str, "ema"),
    ("model", "use_wavenet", bool, True),
    ("model", "attention_scale", bool, False),
    ("model", "memory_norm", str, "double"),
    ("model", "memory_target", str, "qk"),
    ("loss", "rot_weight_frame", float, 100.0),
    ("loss", "rot_weight_seq", float, 100.0),
    ("loss", "use_multistate", bool, True),
    ("train", "learning_rate", float, 1e-4),
    ("train", "beta1", float, 0.9),
    ("train", "beta2", float, 0.999),
    ("train", "epsilon", float, 1e-8),
    ("train", "batch_size", int, 4),
    ("train", "steps", int, 200),
    ("train", "seed", int, 0),
    ("train", "precision", str, "f32"),
    ("train", "checkpoint_every", int, 50),
    ("data", "seed", int, 0),
    ("data", "n_sequences", int, 32),
    ("data", "duration_s", float, 12.0),
    ("data", "image_rate_hz", int, 10),
    ("data", "imu_rate_hz", int, 100),
    ("data", "velocity_mps", float, 1.0),
    ("data", "yaw_rate_rps", float, 0.3),
    ("data", "texture_seed", int, 7),
    ("data", "noise_sigma_gyro", float, 0.0),
    ("data", "noise_sigma_accel", float, 0.0),
    ("eval", "lengths_scaled", bool, True),
    ("eval", "stride", int, 1),
]

# [data] seed and [train] seed share a key name; attributes get prefixed.
_ATTR = {(s, k): (f"{s}_{k}" if k == "seed" else k) for s, k, _, _ in SCHEMA}
_BY_SECTION_KEY = {(s, k): (t, d) for s, k, t, d in SCHEMA}


class Config:
    """Validated bag of settings; attribute per schema key."""

    def __init__(self, **overrides):
        for (s, k), attr in _ATTR.items():
            setattr(self, attr, _BY_SECTION_KEY[(s, k)][1])
        for attr, value in overrides.items():
            if attr not in _ATTR.values():
                raise ConfigError(f"unknown config field {attr!r}")
            setattr(self, attr, value)
        self.validate()

    # -- equality / repr -------------------------------------------------

    def _fields(self):
        return {attr: getattr(self, attr) for attr in _ATTR.values()}

    def __eq__(self, other):
        return isinstance(other, Config) and self._fields() == other._fields()

    def __repr__(self):
        return f"Config({self._fields()!r})"

    # -- validation --------------------------------------------------------

    def validate(self):
        positive_ints = [
            "visual_dim", "inertial_dim", "n_tokens", "token_width", "memory_slots",
            "wavenet_layers", "wavenet_channels", "kernel_size", "batch_size",
            "checkpoint_every", "n_sequences", "image_rate_hz", "imu_rate_hz", "stride",
        ]
        for attr in positive_ints:
            if getattr(self, attr) < 1:
                raise ConfigError(f"{attr} must be >= 1, got {getattr(self, attr)}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.sequence_length < 2:
            raise ConfigError(f"sequence_length must be >= 2, got {self.sequence_length}")
        if self.image_size < 32:
            raise ConfigError(f"image_size must be >= 32, got {self.image_size}")
        if self.n_tokens * self.token_width != self.visual_dim + self.inertial_dim:
            raise ConfigError(
                f"n_tokens * token_width ({self.n_tokens}*{self.token_width}) must equal "
                f"visual_dim + inertial_dim ({self.visual_dim + self.inertial_dim})"
            )
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(
                f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}"
            )
        if self.memory_norm not in ("double", "softmax"):
            raise ConfigError(f"memory_norm must be 'double' or 'softmax', got {self.memory_norm!r}")
        if self.memory_target not in ("qk", "v"):
            raise ConfigError(f"memory_target must be 'qk' or 'v', got {self.memory_target!r}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be 'f32' or 'f64', got {self.precision!r}")
        for attr in ("rot_weight_frame", "rot_weight_seq"):
            if getattr(self, attr) <= 0:
                raise ConfigError(f"{attr} must be > 0, got {getattr(self, attr)}")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ConfigError("learning_rate and epsilon must be > 0")
        for attr in ("beta1", "beta2"):
            b = getattr(self, attr)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{attr} must be in [0, 1), got {b}")
        if self.duration_s <= 0:
            raise ConfigError(f"duration_s must be > 0, got {self.duration_s}")
        if self.imu_rate_hz % self.image_rate_hz != 0:
            raise ConfigError(
                f"imu_rate_hz ({self.imu_rate_hz}) must be divisible by "
                f"image_rate_hz ({self.image_rate_hz})"
            )
        for attr in ("velocity_mps", "yaw_rate_rps", "noise_sigma_gyro", "noise_sigma_accel"):
            if getattr(self, attr) < 0:
                raise ConfigError(f"{attr} must be >= 0, got {getattr(self, attr)}")

    # -- derived quantities --------------------------------------------------

    @property
    def imu_samples(self):
        """IMU samples per inter-frame interval, endpoints inclusive."""
        return self.imu_rate_hz // self.image_rate_hz + 1

    def model_dims(self):
        """The dims a checkpoint must match to be loadable."""
        return {
            "visual_dim": self.visual_dim,
            "inertial_dim": self.inertial_dim,
            "n_tokens": self.n_tokens,
            "token_width": self.token_width,
            "memory_slots": self.memory_slots,
            "wavenet_layers": self.wavenet_layers,
            "wavenet_channels": self.wavenet_channels,
            "kernel_size": self.kernel_size,
            "fusion_mode": self.fusion_mode,
            "use_wavenet": self.use_wavenet,
        }

    # -- serialization ---------------------------------------------------------

    @classmethod
    def from_ini(cls, text: str) -> "Config":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"config parse failure: {exc}") from exc
        overrides = {}
        use_ema = None
        for section in parser.sections():
            for key, raw in parser.items(section):
                if (section, key) == ("model", "use_ema"):
                    use_ema = _parse_bool(section, key, raw)
                    continue
                if (section, key) not in _BY_SECTION_KEY:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                typ, _ = _BY_SECTION_KEY[(section, key)]
                overrides[_ATTR[(section, key)]] = _parse_value(section, key, typ, raw)
        if use_ema is not None:
            implied = "ema" if use_ema else "lstm"
            stated = overrides.get("fusion_mode")
            if stated is not None and stated != implied:
                raise ConfigError(
                    f"use_ema={str(use_ema).lower()} conflicts with fusion_mode={stated!r}"
                )
            overrides["fusion_mode"] = implied
        return cls(**overrides)

    @classmethod
    def from_file(cls, path) -> "Config":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_ini(fh.read())

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for s, k, typ, _ in SCHEMA:
            if not parser.has_section(s):
                parser.add_section(s)
            value = getattr(self, _ATTR[(s, k)])
            parser.set(s, k, _format_value(typ, value))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def to_mapping(self) -> dict:
        """Nested {section: {key: value}} dict for JSON transport."""
        out = {}
        for s, k, _, _ in SCHEMA:
            out.setdefault(s, {})[k] = getattr(self, _ATTR[(s, k)])
        return out

    @classmethod
    def from_mapping(cls, mapping: dict) -> "Config":
        overrides = {}
        use_ema = None
        for section, keys in (mapping or {}).items():
            for key, value in keys.items():
                if (section, key) == ("model", "use_ema"):
                    if not isinstance(value, bool):
                        raise ConfigError(f"[model] use_ema must be a boolean, got {value!r}")
                    use_ema = value
                    continue
                if (section, key) not in _BY_SECTION_KEY:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                typ, _ = _BY_SECTION_KEY[(section, key)]
                if typ is bool and not isinstance(value, bool):
                    raise ConfigError(f"[{section}] {key} must be a boolean, got {value!r}")
                try:
                    overrides[_ATTR[(section, key)]] = typ(value)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from exc
        if use_ema is not None:
            implied = "ema" if use_ema else "lstm"
            stated = overrides.get("fusion_mode")
            if stated is not None and stated != implied:
                raise ConfigError(
                    f"use_ema={str(use_ema).lower()} conflicts with fusion_mode={stated!r}"
                )
            overrides["fusion_mode"] = implied
        return cls(**overrides)


def _parse_bool(section, key, raw):
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {raw!r}")


def _parse_value(section, key, typ, raw):
    if typ is bool:
        return _parse_bool(section, key, raw)
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _format_value(typ, value):
    if typ is bool:
        return "true" if value else "false"
    return repr(value) if typ is float else str(value)

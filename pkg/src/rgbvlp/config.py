"""Experiment configuration: YAML schema, validation and scene construction.

Every field has a default, so an empty file is the reference setup:
one-LED distance geometry with ``m = 1``, ``h = 2.5 m``, 1 cm^2 PDs and
``sigma^2 = 1.336e-22 W/Hz``; four tilted ceiling LEDs in an 8 x 8 x 5 m room
for positioning.  See ``configs/README.md`` for the full field reference.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from .estimators import DistanceModel, PositionModel, SearchGrid
from .geometry import LedTransmitter, VlcReceiver, gamma_matrix, orientation_from_angles
from .simulator import DistanceScene, PositionScene
from .waveform import (
    RaisedCosineWaveform,
    TabulatedWaveform,
    closed_form_cross_energies,
    color_frequencies,
    cross_energies,
)

RESPONSIVITY = (
    (0.4, 0.4 * 0.042, 0.4 * 0.03),
    (0.4 * 0.194, 0.4 * 0.665, 0.4 * 0.277),
    (0.4 * 0.009, 0.4 * 0.084, 0.4 * 0.421),
)

SWEEP_VARIABLES = {
    "P_o": ("waveform", "power"),
    "f_c": ("waveform", "center_frequency"),
    "T_s": ("waveform", "duration"),
    "x": ("scene", "distance"),
    "position": ("receiver", "location"),
}

SCENARIOS = ("s1", "s2", "s3")
DISTANCE_ESTIMATOR_NAMES = ("s1", "s1m", "s2", "s3")
POSITION_ESTIMATOR_NAMES = ("s1", "s2", "s3")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass(frozen=True)
class LedConfig:
    location: tuple
    angles_deg: tuple = None
    orientation: tuple = None
    clock_offset: float = 0.0


DEFAULT_LEDS = (
    LedConfig((2.0, 2.0, 5.0), (150.0, 45.0)),
    LedConfig((6.0, 2.0, 5.0), (150.0, 135.0)),
    LedConfig((2.0, 6.0, 5.0), (150.0, -45.0)),
    LedConfig((6.0, 6.0, 5.0), (150.0, -135.0)),
)


@dataclass(frozen=True)
class ReceiverConfig:
    location: tuple = (4.0, 4.0, 1.0)
    orientation: tuple = (0.0, 0.0, 1.0)
    pd_areas: tuple = (1e-4, 1e-4, 1e-4)
    responsivity: tuple = RESPONSIVITY
    noise_psd: tuple = (1.336e-22, 1.336e-22, 1.336e-22)


@dataclass(frozen=True)
class SceneConfig:
    lambertian_order: float = 1.0
    height: float = 2.5
    distance: float = 5.0
    clock_offset: float = 0.0
    offset_range: tuple = (0.0, 0.0)
    leds: tuple = DEFAULT_LEDS


@dataclass(frozen=True)
class WaveformConfig:
    kind: str = "raised_cosine"
    power: float = 0.1
    duration: float = 0.01
    center_frequency: float = 1e7
    color_ratios: tuple = (0.9, 1.0, 1.1)
    scale_by_led_index: bool = True
    files: tuple = ()
    energies: str = "auto"


@dataclass(frozen=True)
class GridConfig:
    lower: object
    upper: object
    step: float
    levels: int = 3
    shrink: float = 0.2
    window: int = 2

    def build(self):
        return SearchGrid(self.lower, self.upper, self.step, self.levels, self.shrink, self.window)


@dataclass(frozen=True)
class GridsConfig:
    distance: GridConfig = GridConfig(3.0, 7.0, 0.05)
    position: GridConfig = GridConfig((0.0, 0.0, 0.0), (8.0, 8.0, 4.9), 0.25)
    delay_step_samples: int = 4


@dataclass(frozen=True)
class SweepConfig:
    variable: str = "P_o"
    values: tuple = (0.1,)
    scenarios: tuple = SCENARIOS
    estimators: tuple = ()
    trials: int = 200
    seed: int = 20190908


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneConfig = SceneConfig()
    receiver: ReceiverConfig = ReceiverConfig()
    waveform: WaveformConfig = WaveformConfig()
    sweep: SweepConfig = SweepConfig()
    grids: GridsConfig = GridsConfig()
    dt: float = 5e-10
    output: str = "results.csv"


# ------------------------------------------------------------------ parsing


def _num(v, path, kind=float):
    if isinstance(v, bool):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    try:
        out = kind(float(v)) if kind is int else kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {v!r}") from None
    if kind is int and float(v) != out:
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    return out


def _vec(v, path, n=None):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{path}: expected a list, got {v!r}")
    if n is not None and len(v) != n:
        raise ConfigError(f"{path}: expected {n} entries, got {len(v)}")
    return tuple(_num(x, f"{path}[{i}]") for i, x in enumerate(v))


def _matrix(v, path, shape):
    if not isinstance(v, (list, tuple)) or len(v) != shape[0]:
        raise ConfigError(f"{path}: expected {shape[0]} rows")
    return tuple(_vec(row, f"{path}[{i}]", shape[1]) for i, row in enumerate(v))


def _section(cls, data, path, convert):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, v in data.items():
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown field")
        kwargs[key] = convert[key](v, f"{path}.{key}") if key in convert else v
    return cls(**kwargs)


def _led(v, path):
    if not isinstance(v, dict):
        raise ConfigError(f"{path}: expected a mapping")
    if "location" not in v:
        raise ConfigError(f"{path}.location: missing")
    return _section(
        LedConfig,
        v,
        path,
        {
            "location": lambda x, p: _vec(x, p, 3),
            "angles_deg": lambda x, p: _vec(x, p, 2),
            "orientation": lambda x, p: _vec(x, p, 3),
            "clock_offset": _num,
        },
    )


def _leds(v, path):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{path}: expected a list of LEDs")
    return tuple(_led(e, f"{path}[{i}]") for i, e in enumerate(v))


def _grid(v, path, dims):
    vec = (lambda x, p: _num(x, p)) if dims == 1 else (lambda x, p: _vec(x, p, 3))
    if not isinstance(v, dict):
        raise ConfigError(f"{path}: expected a mapping")
    for key in ("lower", "upper", "step"):
        if key not in v:
            raise ConfigError(f"{path}.{key}: missing")
    return _section(
        GridConfig,
        v,
        path,
        {
            "lower": vec,
            "upper": vec,
            "step": _num,
            "levels": lambda x, p: _num(x, p, int),
            "shrink": _num,
            "window": lambda x, p: _num(x, p, int),
        },
    )


def _strings(v, path):
    if isinstance(v, str):
        v = [v]
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{path}: expected a list of names")
    return tuple(str(x) for x in v)


def _sweep_values(v, path):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{path}: expected a list")
    return tuple(_vec(x, f"{path}[{i}]", 3) if isinstance(x, (list, tuple)) else _num(x, f"{path}[{i}]") for i, x in enumerate(v))


def config_from_dict(data):
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected a mapping")
    top = {f.name for f in fields(ExperimentConfig)}
    for key in data:
        if key not in top:
            raise ConfigError(f"{key}: unknown field")
    scene = _section(
        SceneConfig,
        data.get("scene"),
        "scene",
        {
            "lambertian_order": _num,
            "height": _num,
            "distance": _num,
            "clock_offset": _num,
            "offset_range": lambda x, p: _vec(x, p, 2),
            "leds": _leds,
        },
    )
    receiver = _section(
        ReceiverConfig,
        data.get("receiver"),
        "receiver",
        {
            "location": lambda x, p: _vec(x, p, 3),
            "orientation": lambda x, p: _vec(x, p, 3),
            "pd_areas": lambda x, p: _vec(x, p, 3),
            "responsivity": lambda x, p: _matrix(x, p, (3, 3)),
            "noise_psd": lambda x, p: _vec(x, p, 3),
        },
    )
    waveform = _section(
        WaveformConfig,
        data.get("waveform"),
        "waveform",
        {
            "kind": lambda x, p: str(x),
            "power": _num,
            "duration": _num,
            "center_frequency": _num,
            "color_ratios": lambda x, p: _vec(x, p, 3),
            "scale_by_led_index": lambda x, p: bool(x),
            "files": _strings,
            "energies": lambda x, p: str(x),
        },
    )
    sweep = _section(
        SweepConfig,
        data.get("sweep"),
        "sweep",
        {
            "variable": lambda x, p: str(x),
            "values": _sweep_values,
            "scenarios": _strings,
            "estimators": _strings,
            "trials": lambda x, p: _num(x, p, int),
            "seed": lambda x, p: _num(x, p, int),
        },
    )
    grids = _section(
        GridsConfig,
        data.get("grids"),
        "grids",
        {
            "distance": lambda x, p: _grid(x, p, 1),
            "position": lambda x, p: _grid(x, p, 3),
            "delay_step_samples": lambda x, p: _num(x, p, int),
        },
    )
    cfg = ExperimentConfig(
        scene,
        receiver,
        waveform,
        sweep,
        grids,
        _num(data.get("dt", ExperimentConfig.dt), "dt"),
        str(data.get("output", ExperimentConfig.output)),
    )
    validate_config(cfg)
    return cfg


def load_config(path=None):
    if path is None:
        cfg = ExperimentConfig()
        validate_config(cfg)
        return cfg
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: YAML syntax error at {where}: {getattr(exc, 'problem', exc)}") from None
    return config_from_dict(data)


def _require(cond, path, msg):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def validate_config(cfg):
    """Raise :class:`ConfigError` naming the first invalid field."""
    s, r, w, sw, g = cfg.scene, cfg.receiver, cfg.waveform, cfg.sweep, cfg.grids
    _require(s.lambertian_order >= 1, "scene.lambertian_order", "must be >= 1")
    _require(s.height > 0, "scene.height", "must be positive")
    _require(s.distance > 0, "scene.distance", "must be positive")
    _require(s.offset_range[0] <= s.offset_range[1], "scene.offset_range", "must be ordered")
    _require(len(s.leds) >= 1, "scene.leds", "need at least one LED")
    for i, led in enumerate(s.leds):
        _require(
            (led.angles_deg is None) != (led.orientation is None),
            f"scene.leds[{i}]",
            "give exactly one of angles_deg or orientation",
        )
        if led.orientation is not None:
            _require(abs(np.linalg.norm(led.orientation) - 1) <= 1e-12, f"scene.leds[{i}].orientation", "must be a unit vector")
    _require(abs(np.linalg.norm(r.orientation) - 1) <= 1e-12, "receiver.orientation", "must be a unit vector")
    for j, a in enumerate(r.pd_areas):
        _require(a > 0, f"receiver.pd_areas[{j}]", "must be positive")
    for j, v in enumerate(r.noise_psd):
        _require(v > 0, f"receiver.noise_psd[{j}]", "must be positive")
    R = np.asarray(r.responsivity)
    _require(R.shape == (3, 3), "receiver.responsivity", "must be 3x3")
    _require(np.all(R >= 0), "receiver.responsivity", "entries must be non-negative")
    _require(np.all(np.diag(R) > 0), "receiver.responsivity", "diagonal must be positive")
    _require(w.kind in ("raised_cosine", "tabulated"), "waveform.kind", "must be raised_cosine or tabulated")
    _require(w.power > 0, "waveform.power", "must be positive")
    _require(w.duration > 0, "waveform.duration", "must be positive")
    _require(w.center_frequency >= 0, "waveform.center_frequency", "must be non-negative")
    _require(w.energies in ("auto", "closed_form", "quadrature"), "waveform.energies", "must be auto, closed_form or quadrature")
    if w.kind == "tabulated":
        _require(len(w.files) == 3, "waveform.files", "tabulated waveforms need one file per color")
    _require(cfg.dt > 0, "dt", "must be positive")
    _require(sw.variable in SWEEP_VARIABLES, "sweep.variable", f"must be one of {sorted(SWEEP_VARIABLES)}")
    _require(len(sw.values) > 0, "sweep.values", "must be non-empty")
    for i, v in enumerate(sw.values):
        if sw.variable == "position":
            _require(isinstance(v, tuple), f"sweep.values[{i}]", "position values are [x, y, z] lists")
        else:
            _require(not isinstance(v, tuple) and v > 0, f"sweep.values[{i}]", "must be a positive number")
    for sc in sw.scenarios:
        _require(sc in SCENARIOS, "sweep.scenarios", f"unknown scenario {sc!r}")
    for e in sw.estimators:
        _require(e in DISTANCE_ESTIMATOR_NAMES, "sweep.estimators", f"unknown estimator {e!r}")
    _require(sw.trials >= 1, "sweep.trials", "must be >= 1")
    _require(sw.seed >= 0, "sweep.seed", "must be non-negative")
    _require(g.delay_step_samples >= 1, "grids.delay_step_samples", "must be >= 1")
    for name in ("distance", "position"):
        try:
            getattr(g, name).build()
        except ValueError as exc:
            raise ConfigError(f"grids.{name}: {exc}") from None


# ------------------------------------------------------------------ construction


def with_sweep_value(cfg, value):
    """Copy of ``cfg`` with the sweep variable set to ``value``."""
    section, name = SWEEP_VARIABLES[cfg.sweep.variable]
    sub = getattr(cfg, section)
    return replace(cfg, **{section: replace(sub, **{name: value})})


def _tabulated(files):
    return tuple(TabulatedWaveform.from_file(f) for f in files)


def build_waveforms(cfg, led_index=1):
    w = cfg.waveform
    if w.kind == "tabulated":
        return _tabulated(w.files)
    k = led_index if w.scale_by_led_index else 1
    return tuple(
        RaisedCosineWaveform(w.power, w.duration, f) for f in color_frequencies(w.center_frequency, k, w.color_ratios)
    )


@lru_cache(maxsize=256)
def _energies(waveforms, mode):
    if mode == "quadrature" or not all(isinstance(x, RaisedCosineWaveform) for x in waveforms):
        return cross_energies(waveforms)
    return closed_form_cross_energies(waveforms)


def build_energies(waveforms, mode="auto"):
    """Closed form for the raised-cosine family (``auto``), adaptive quadrature otherwise."""
    return _energies(tuple(waveforms), mode)


def build_receiver(cfg):
    r = cfg.receiver
    return VlcReceiver(r.location, r.orientation, r.pd_areas, r.responsivity, r.noise_psd)


def build_leds(cfg):
    leds = []
    for k, led in enumerate(cfg.scene.leds):
        n = orientation_from_angles(*led.angles_deg) if led.angles_deg is not None else led.orientation
        leds.append(LedTransmitter(led.location, n, cfg.scene.lambertian_order, build_waveforms(cfg, k + 1), led.clock_offset))
    return tuple(leds)


def distance_scene(cfg):
    rx = build_receiver(cfg)
    ws = build_waveforms(cfg, 1)
    m = cfg.scene.lambertian_order
    model = DistanceModel(gamma_matrix(rx, m, cfg.scene.height), rx.noise_psd, m, build_energies(ws, cfg.waveform.energies), ws)
    return DistanceScene(
        model,
        cfg.scene.distance,
        cfg.dt,
        cfg.grids.distance.build(),
        cfg.scene.clock_offset,
        cfg.scene.offset_range,
        cfg.grids.delay_step_samples,
    )


def position_scene(cfg):
    leds = build_leds(cfg)
    energies = tuple(build_energies(led.waveforms, cfg.waveform.energies) for led in leds)
    return PositionScene(
        PositionModel(leds, build_receiver(cfg), energies),
        cfg.dt,
        cfg.grids.position.build(),
        cfg.scene.offset_range,
        cfg.grids.delay_step_samples,
    )


def scene_factory(cfg, kind):
    build = distance_scene if kind == "distance" else position_scene
    return lambda value: build(with_sweep_value(cfg, value))

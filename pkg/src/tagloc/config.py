"""Flat key-value configuration for the pipeline and simulator scenarios.

Config files are diff-friendly text: one `section.key = value` per line,
`#` comments allowed. Unknown keys are rejected with the offending key
named. Values parse by the type of the default they override; 2D points
and complex gains are comma-separated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .simulate import Impairments, Reflector, Scenario, Trajectory
from .types import SubcarrierGrid


@dataclass
class DecodeConfig:
    bitrate: float = 300.0
    window_s: float = 0.1
    threshold: float = 0.5
    hysteresis: float = 0.1
    min_separation: float = 4.0


@dataclass
class SeparateConfig:
    block_s: float = 0.02
    max_frames_per_class: int = 64
    coherent_tol: float = 1e-6
    align_iterations: int = 2


@dataclass
class SpectralConfig:
    delay_max_s: float = 500e-9
    delay_step_s: float = 1e-9
    smoothing_fraction: float = 0.5
    order_threshold: float = 0.05
    max_paths: int = 5
    clusters: int = 5
    restarts: int = 10
    seed: int = 0
    min_rel_height: float = 0.1
    window_s: float = 1.0
    profiles_per_window: int = 16
    tag_group_size: int = 25  # backscatter blocks coherently averaged per profile
    tag_window_s: float = 2.0  # window length for tag-path ToF estimates


@dataclass
class DopplerConfig:
    window_s: float = 1.0
    max_speed: float = 3.0
    min_speed: float = 0.18
    min_peak_ratio: float = 5.0
    element_interval_s: float = 0.025
    spacing_m: float = 0.025
    window_elements: int = 16


@dataclass
class FusionConfig:
    tof_sigma: float = 0.5  # ToF range observation noise, meters
    vr_sigma: float = 0.06
    process_noise: float = 0.5


@dataclass
class AlignConfig:
    d1: float = 0.5
    v_min: float = 0.1
    v_max: float = 3.0
    stride_s: float = 0.5
    cost_slack: float = 1.3  # lags within this factor of the misfit minimum stay candidates
    max_candidates: int = 16


@dataclass
class LocalizeConfig:
    process_noise: float = 0.05
    obs_sigma: float = 1.0
    resolve_margin: float = 0.2
    residual_threshold: float = 25.0


@dataclass
class PipelineConfig:
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    separate: SeparateConfig = field(default_factory=SeparateConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    doppler: DopplerConfig = field(default_factory=DopplerConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    localize: LocalizeConfig = field(default_factory=LocalizeConfig)


def parse_kv(text: str) -> dict[str, str]:
    """Flat `key = value` lines into an ordered dict; rejects malformed lines."""
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {ln}: empty key")
        if key in out:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _convert(value: str, like, key: str):
    try:
        if isinstance(like, bool):
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if isinstance(like, int):
            return int(float(value))
        if isinstance(like, float):
            return float(value)
        return type(like)(value)
    except (TypeError, ValueError):
        raise ConfigError(f"key {key!r}: cannot parse {value!r} as {type(like).__name__}")


def load_pipeline_config(path_or_text) -> PipelineConfig:
    """PipelineConfig from a flat config file or raw text; unknown keys rejected."""
    text = _read(path_or_text)
    cfg = PipelineConfig()
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for key, value in parse_kv(text).items():
        if "." not in key:
            raise ConfigError(f"unknown config key {key!r} (expected section.key)")
        section, name = key.split(".", 1)
        sub = sections.get(section)
        if sub is None or not hasattr(sub, name):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(sub, name, _convert(value, getattr(sub, name), key))
    return cfg


def _read(path_or_text) -> str:
    s = str(path_or_text)
    if s and "\n" not in s and ("=" not in s) and Path(s).is_file():
        return Path(s).read_text()
    if isinstance(path_or_text, Path):
        return path_or_text.read_text()
    return s


def _floats(value: str) -> list[float]:
    return [float(v) for v in value.replace(";", ",").split(",") if v.strip()]


_SCENARIO_KEYS = {
    "duration", "packet_rate", "seed", "snr_db", "bitrate",
    "grid.center", "grid.bandwidth", "grid.subcarriers",
    "receiver.start", "receiver.direction", "receiver.speed", "receiver.waypoints",
    "target.position", "target.start", "target.direction", "target.speed",
    "tag.offset", "tag.mode", "tag.angle",
    "gains.direct", "gains.tag",
    "impair.cfo", "impair.sto_jitter", "impair.sto_walk", "impair.sfo_ppm",
    "reflectors",
}


def load_scenario(path_or_text) -> Scenario:
    """Scenario from a flat config file; see _SCENARIO_KEYS for the schema."""
    kv = parse_kv(_read(path_or_text))
    unknown = set(kv) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario key(s): {', '.join(sorted(unknown))}")

    def num(key, default):
        return float(kv[key]) if key in kv else default

    duration = num("duration", 30.0)
    grid = SubcarrierGrid.regular(
        num("grid.center", 5e9), num("grid.bandwidth", 40e6), int(num("grid.subcarriers", 64))
    )

    if "receiver.waypoints" in kv:
        pts = np.array(_floats(kv["receiver.waypoints"])).reshape(-1, 2)
        recv = Trajectory.waypoints(pts, num("receiver.speed", 1.0), duration=duration)
    else:
        start = _floats(kv.get("receiver.start", "0,0"))
        direction = np.array(_floats(kv.get("receiver.direction", "1,0")))
        speed = num("receiver.speed", 1.0)
        norm = np.linalg.norm(direction)
        if norm == 0:
            raise ConfigError("receiver.direction must be nonzero")
        recv = Trajectory.line(start, speed * direction / norm, duration)

    if "target.position" in kv:
        target = Trajectory.static(_floats(kv["target.position"]), duration)
    else:
        tstart = _floats(kv.get("target.start", "20,0"))
        tdir = np.array(_floats(kv.get("target.direction", "1,0")))
        tspeed = num("target.speed", 0.0)
        tnorm = np.linalg.norm(tdir)
        if tnorm == 0:
            raise ConfigError("target.direction must be nonzero")
        target = (
            Trajectory.line(tstart, tspeed * tdir / tnorm, duration)
            if tspeed > 0
            else Trajectory.static(tstart, duration)
        )

    reflectors = []
    if "reflectors" in kv:
        vals = _floats(kv["reflectors"])
        if len(vals) % 3 != 0:
            raise ConfigError("reflectors must be x,y,gain triples")
        for i in range(0, len(vals), 3):
            reflectors.append(Reflector(position=vals[i : i + 2], gain=vals[i + 2]))

    return Scenario(
        grid=grid,
        duration=duration,
        packet_rate=num("packet_rate", 1000.0),
        receiver_traj=recv,
        target_traj=target,
        tag_offset=num("tag.offset", 0.5),
        tag_bitrate=num("bitrate", 300.0),
        tag_mode=kv.get("tag.mode", "retrace"),
        rigid_angle=np.deg2rad(num("tag.angle", 0.0)),
        static_reflectors=reflectors,
        direct_path_gain=num("gains.direct", 1.0),
        tag_path_gain=num("gains.tag", 0.1),
        impairments=Impairments(
            cfo_hz=num("impair.cfo", 100.0),
            sto_jitter_s=num("impair.sto_jitter", 1e-9),
            sto_walk_s=num("impair.sto_walk", 0.0),
            sfo_ppm=num("impair.sfo_ppm", 0.0),
        ),
        noise_snr_db=num("snr_db", 20.0),
        rng_seed=int(num("seed", 0)),
    )

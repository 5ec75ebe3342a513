"""Synthetic CSI generator: geometry-driven multipath, tag modulation,
hardware impairments, and noise. Serves as the test oracle for the pipeline.

Per packet n and subcarrier k the clean channel is a sum over paths p of
g_p * exp(-j 2 pi f_k tau_p) with tau_p = path_length / c. The observed
channel is H_t + B(n) * H_b, phase-distorted by exp(j(theta_cfo - 2 pi f_k
tau_sto)) and corrupted with complex AWGN referenced to direct-path power.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TagLocError
from .types import SPEED_OF_LIGHT, CsiTrace, SubcarrierGrid, TagBitStream

DEFAULT_V_MAX = 3.0  # m/s, top tested walking speed


@dataclass(frozen=True)
class Trajectory:
    """2D positions sampled at uniform time steps."""

    positions: np.ndarray  # (M, 2) meters
    dt: float  # seconds between samples

    def __post_init__(self):
        p = np.ascontiguousarray(self.positions, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 1:
            raise TagLocError("trajectory positions must be (M, 2)")
        object.__setattr__(self, "positions", p)
        if p.shape[0] > 1:
            speeds = np.linalg.norm(np.diff(p, axis=0), axis=1) / self.dt
            if np.any(speeds > DEFAULT_V_MAX + 1e-9):
                raise TagLocError(f"trajectory speed {speeds.max():.2f} m/s exceeds v_max")

    @property
    def duration(self) -> float:
        return (self.positions.shape[0] - 1) * self.dt

    def at(self, t: np.ndarray) -> np.ndarray:
        """Linearly interpolated positions, clamped to the endpoints."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        m = self.positions.shape[0]
        x = np.interp(t, np.arange(m) * self.dt, self.positions[:, 0])
        y = np.interp(t, np.arange(m) * self.dt, self.positions[:, 1])
        return np.stack([x, y], axis=-1)

    def heading(self, t: np.ndarray) -> np.ndarray:
        """Unit motion-direction vectors; holds the last valid heading when static."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        p = self.positions
        if p.shape[0] < 2:
            return np.tile([1.0, 0.0], (t.size, 1))
        vel = np.gradient(p, self.dt, axis=0)
        speed = np.linalg.norm(vel, axis=1)
        unit = np.zeros_like(vel)
        ok = speed > 1e-9
        unit[ok] = vel[ok] / speed[ok, None]
        # fill static stretches with the nearest moving heading
        if not ok.all():
            if not ok.any():
                unit[:] = [1.0, 0.0]
            else:
                idx = np.flatnonzero(ok)
                for i in np.flatnonzero(~ok):
                    unit[i] = unit[idx[np.argmin(np.abs(idx - i))]]
        ti = np.clip(t / self.dt, 0, p.shape[0] - 1)
        hx = np.interp(ti, np.arange(p.shape[0]), unit[:, 0])
        hy = np.interp(ti, np.arange(p.shape[0]), unit[:, 1])
        h = np.stack([hx, hy], axis=-1)
        n = np.linalg.norm(h, axis=-1, keepdims=True)
        n[n < 1e-12] = 1.0
        return h / n

    def arc_length(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        return np.concatenate(([0.0], np.cumsum(seg)))

    @classmethod
    def static(cls, point, duration: float, dt: float = 0.01) -> "Trajectory":
        m = max(2, int(round(duration / dt)) + 1)
        return cls(np.tile(np.asarray(point, dtype=float), (m, 1)), dt)

    @classmethod
    def line(cls, start, velocity, duration: float, dt: float = 0.01) -> "Trajectory":
        m = int(round(duration / dt)) + 1
        t = np.arange(m) * dt
        p = np.asarray(start, dtype=float)[None, :] + t[:, None] * np.asarray(velocity, dtype=float)[None, :]
        return cls(p, dt)

    @classmethod
    def waypoints(cls, points, speed: float, dt: float = 0.01, duration: float | None = None) -> "Trajectory":
        """Piecewise-linear path traversed at constant speed; holds the last point."""
        pts = np.asarray(points, dtype=float)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        s = np.concatenate(([0.0], np.cumsum(seg)))
        total_t = s[-1] / speed
        if duration is None:
            duration = total_t
        m = int(round(duration / dt)) + 1
        t = np.arange(m) * dt
        si = np.clip(t * speed, 0, s[-1])
        x = np.interp(si, s, pts[:, 0])
        y = np.interp(si, s, pts[:, 1])
        return cls(np.stack([x, y], axis=-1), dt)

    @classmethod
    def speed_profile(cls, start, direction, speeds, dt: float = 0.01) -> "Trajectory":
        """Straight path whose speed varies per time step (speeds has one entry per step)."""
        u = np.asarray(direction, dtype=float)
        u = u / np.linalg.norm(u)
        s = np.concatenate(([0.0], np.cumsum(np.asarray(speeds, dtype=float) * dt)))
        p = np.asarray(start, dtype=float)[None, :] + s[:, None] * u[None, :]
        return cls(p, dt)


@dataclass(frozen=True)
class Impairments:
    """Per-packet phase distortion sources."""

    cfo_hz: float = 100.0
    sto_jitter_s: float = 1e-9  # uniform per-packet jitter half-width
    sto_walk_s: float = 0.0  # random-walk step std per packet
    sfo_ppm: float = 0.0  # linear delay drift, ppm of elapsed time

    def __post_init__(self):
        for v in (self.cfo_hz, self.sto_jitter_s, self.sto_walk_s, self.sfo_ppm):
            if not np.isfinite(v):
                raise TagLocError("impairment values must be finite")

    @classmethod
    def none(cls) -> "Impairments":
        return cls(cfo_hz=0.0, sto_jitter_s=0.0, sto_walk_s=0.0, sfo_ppm=0.0)


@dataclass(frozen=True)
class Reflector:
    position: np.ndarray  # (2,) meters
    gain: complex  # reflection loss factor applied on top of 1/length decay

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))


@dataclass
class Scenario:
    """Ground-truth world description consumed by simulate()."""

    grid: SubcarrierGrid
    duration: float = 60.0
    packet_rate: float = 1000.0
    receiver_traj: Trajectory | None = None
    target_traj: Trajectory | None = None
    tag_offset: float = 0.5  # d1, meters; tag trails the receiver by this path length
    tag_bitrate: float = 300.0
    tag_mode: str = "retrace"  # "retrace" or "rigid"
    rigid_angle: float = 0.0  # radians between heading and receiver-tag line (rigid mode)
    static_reflectors: list[Reflector] = field(default_factory=list)
    direct_path_gain: complex = 1.0 + 0.0j
    tag_path_gain: complex = 0.1 + 0.0j  # 20 dB below the direct path by default
    impairments: Impairments = field(default_factory=Impairments)
    noise_snr_db: float = 20.0
    rng_seed: int = 0

    def validate(self):
        if self.tag_offset <= 0:
            raise TagLocError("tag_offset d1 must be > 0")
        if self.receiver_traj is None or self.target_traj is None:
            raise TagLocError("scenario needs receiver and target trajectories")
        for traj, name in ((self.receiver_traj, "receiver"), (self.target_traj, "target")):
            if traj.duration + 1e-9 < self.duration and traj.positions.shape[0] > 1:
                # a static trajectory (single point repeated) covers any duration
                if not np.allclose(traj.positions, traj.positions[0]):
                    raise TagLocError(f"{name} trajectory shorter than scenario duration")
        if self.tag_mode not in ("retrace", "rigid"):
            raise TagLocError(f"unknown tag_mode {self.tag_mode!r}")
        if self.packet_rate / self.tag_bitrate < 2:
            raise TagLocError("packet_rate / tag_bitrate must be >= 2")


@dataclass(frozen=True)
class GroundTruth:
    """Per-packet truth emitted alongside the simulated trace."""

    times: np.ndarray
    target_pos: np.ndarray  # (N, 2)
    receiver_pos: np.ndarray  # (N, 2)
    tag_pos: np.ndarray  # (N, 2)
    range_r: np.ndarray  # target -> receiver, meters
    range_b: np.ndarray  # target -> tag, meters
    radial_speed: np.ndarray  # d(range_r)/dt, positive = receding
    bits: np.ndarray  # tag bit per packet

    def to_records(self, stride: int = 1) -> list[dict]:
        recs = []
        for i in range(0, self.times.size, stride):
            recs.append(
                {
                    "t": float(self.times[i]),
                    "target": [float(self.target_pos[i, 0]), float(self.target_pos[i, 1])],
                    "receiver": [float(self.receiver_pos[i, 0]), float(self.receiver_pos[i, 1])],
                    "tag": [float(self.tag_pos[i, 0]), float(self.tag_pos[i, 1])],
                    "range_r": float(self.range_r[i]),
                    "range_b": float(self.range_b[i]),
                    "radial_speed": float(self.radial_speed[i]),
                    "bit": int(self.bits[i]),
                }
            )
        return recs

    @classmethod
    def from_records(cls, records: list[dict]) -> "GroundTruth":
        n = len(records)
        times = np.array([r["t"] for r in records])
        tp = np.array([r["target"] for r in records]).reshape(n, 2)
        rp = np.array([r["receiver"] for r in records]).reshape(n, 2)
        gp = np.array([r["tag"] for r in records]).reshape(n, 2)
        return cls(
            times,
            tp,
            rp,
            gp,
            np.array([r["range_r"] for r in records]),
            np.array([r["range_b"] for r in records]),
            np.array([r["radial_speed"] for r in records]),
            np.array([r["bit"] for r in records], dtype=np.uint8),
        )


def tag_schedule(bitrate: float, packet_rate: float, duration: float, seed: int) -> TagBitStream:
    """Pseudo-random tag symbols held for packet_rate/bitrate packets each,
    with an 8-bit sync preamble for decoder alignment. The sync word is not
    symmetric under inversion, so the decoder can also resolve whether the
    tag's reflecting state raises or lowers the combined amplitude."""
    ratio = packet_rate / bitrate
    if ratio < 2:
        raise TagLocError(f"packet_rate/bitrate = {ratio:.2f} < 2; tag symbols must span >= 2 packets")
    n_packets = int(round(duration * packet_rate))
    n_symbols = int(np.ceil(n_packets * bitrate / packet_rate))
    rng = np.random.default_rng(seed)
    preamble = np.array([1, 1, 1, 0, 0, 1, 0, 1], dtype=np.uint8)
    payload = rng.integers(0, 2, size=max(0, n_symbols - preamble.size), dtype=np.uint8)
    symbols = np.concatenate([preamble, payload])[:n_symbols]
    boundaries = np.round(np.arange(n_symbols + 1) * packet_rate / bitrate).astype(int)
    bits = np.zeros(n_packets, dtype=np.uint8)
    for i in range(n_symbols):
        bits[boundaries[i] : min(boundaries[i + 1], n_packets)] = symbols[i]
    return TagBitStream(bits=bits, bitrate=bitrate, packet_rate=packet_rate, symbols=symbols)


def _tag_positions(scenario: Scenario, t: np.ndarray) -> np.ndarray:
    traj = scenario.receiver_traj
    d1 = scenario.tag_offset
    if scenario.tag_mode == "rigid":
        recv = traj.at(t)
        head = traj.heading(t)
        a = scenario.rigid_angle
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        back = -(head @ rot.T)
        return recv + d1 * back
    # retrace: the tag follows the receiver path, d1 of arc length behind;
    # before enough path exists it extrapolates backwards along the initial heading
    s = traj.arc_length()
    grid_t = np.arange(traj.positions.shape[0]) * traj.dt
    s_now = np.interp(t, grid_t, s)
    s_tag = s_now - d1
    x = np.interp(np.clip(s_tag, 0, s[-1]), s, traj.positions[:, 0])
    y = np.interp(np.clip(s_tag, 0, s[-1]), s, traj.positions[:, 1])
    pos = np.stack([x, y], axis=-1)
    behind = s_tag < 0
    if np.any(behind):
        u0 = traj.heading(np.array([0.0]))[0]
        pos[behind] = traj.positions[0][None, :] + s_tag[behind, None] * u0[None, :]
    return pos


def simulate(
    scenario: Scenario,
    return_components: bool = False,
    chunk_size: int = 20000,
):
    """Generate (CsiTrace, GroundTruth); optionally also the clean H_t and H_b arrays."""
    scenario.validate()
    grid = scenario.grid
    fk = grid.frequencies  # (K,)
    k = fk.size
    n = int(round(scenario.duration * scenario.packet_rate))
    t = np.arange(n) / scenario.packet_rate

    stream = tag_schedule(scenario.tag_bitrate, scenario.packet_rate, scenario.duration, scenario.rng_seed)
    bits = stream.bits

    recv = scenario.receiver_traj.at(t)
    target = scenario.target_traj.at(t)
    tag = _tag_positions(scenario, t)

    range_r = np.linalg.norm(target - recv, axis=1)
    range_b = np.linalg.norm(target - tag, axis=1)
    if np.any(range_r < 1e-6) or np.any(range_b < 1e-6):
        raise TagLocError("degenerate zero-length path between transceivers")

    rng = np.random.default_rng(scenario.rng_seed)
    imp = scenario.impairments
    sto = imp.sto_jitter_s * rng.uniform(-1.0, 1.0, size=n)
    if imp.sto_walk_s > 0:
        sto = sto + np.cumsum(imp.sto_walk_s * rng.standard_normal(n))
    sto = sto + imp.sfo_ppm * 1e-6 * t
    cfo_phase = 2 * np.pi * imp.cfo_hz * t

    # noise referenced to mean direct-path power
    amp_direct = np.abs(scenario.direct_path_gain) / range_r
    sigma = float(np.sqrt(np.mean(amp_direct**2) * 10 ** (-scenario.noise_snr_db / 10)))

    gains = np.empty((n, k), dtype=np.complex128)
    ht_all = np.empty((n, k), dtype=np.complex128) if return_components else None
    hb_all = np.empty((n, k), dtype=np.complex128) if return_components else None

    refl_pos = [r.position for r in scenario.static_reflectors]
    refl_gain = [complex(r.gain) for r in scenario.static_reflectors]

    two_pi_f = 2 * np.pi * fk[None, :]
    for lo in range(0, n, chunk_size):
        hi = min(lo + chunk_size, n)
        sl = slice(lo, hi)
        # direct path
        tau = (range_r[sl] / SPEED_OF_LIGHT)[:, None]
        ht = (scenario.direct_path_gain / range_r[sl])[:, None] * np.exp(-1j * two_pi_f * tau)
        # static reflector paths: target -> reflector -> receiver
        for pos, g in zip(refl_pos, refl_gain):
            length = np.linalg.norm(target[sl] - pos[None, :], axis=1) + np.linalg.norm(
                pos[None, :] - recv[sl], axis=1
            )
            ht += (g / length)[:, None] * np.exp(-1j * two_pi_f * (length / SPEED_OF_LIGHT)[:, None])
        # tag path: target -> tag -> receiver
        length_b = range_b[sl] + np.linalg.norm(tag[sl] - recv[sl], axis=1)
        hb = (scenario.tag_path_gain / length_b)[:, None] * np.exp(
            -1j * two_pi_f * (length_b / SPEED_OF_LIGHT)[:, None]
        )
        ho = ht + bits[sl, None] * hb
        # phase distortions, then noise
        ho = ho * np.exp(1j * (cfo_phase[sl, None] - two_pi_f * sto[sl, None]))
        if sigma > 0:
            noise = rng.standard_normal((hi - lo, 2 * k))
            ho = ho + sigma / np.sqrt(2) * (noise[:, :k] + 1j * noise[:, k:])
        gains[sl] = ho
        if return_components:
            ht_all[sl] = ht
            hb_all[sl] = hb

    trace = CsiTrace(
        grid=grid,
        packet_rate=scenario.packet_rate,
        packet_indices=np.arange(n, dtype=np.uint64),
        timestamps=t,
        gains=gains,
    )
    radial_speed = np.gradient(range_r, t) if n > 1 else np.zeros(n)
    truth = GroundTruth(
        times=t,
        target_pos=target,
        receiver_pos=recv,
        tag_pos=tag,
        range_r=range_r,
        range_b=range_b,
        radial_speed=radial_speed,
        bits=bits,
    )
    if return_components:
        return trace, truth, ht_all, hb_all
    return trace, truth

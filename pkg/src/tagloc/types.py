"""Core CSI domain types: subcarrier geometry, per-packet frames, traces, tag bits.

All types are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TraceFormatError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class SubcarrierGrid:
    """Uniform subcarrier frequency grid of one WiFi channel."""

    center_frequency: float  # Hz
    bandwidth: float  # Hz
    frequencies: np.ndarray  # Hz, ascending, uniformly spaced

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=np.float64)
        object.__setattr__(self, "frequencies", f)
        if f.ndim != 1 or f.size < 2:
            raise TraceFormatError("subcarrier grid needs at least 2 frequencies")
        df = np.diff(f)
        if np.any(df <= 0):
            raise TraceFormatError("subcarrier frequencies must be strictly increasing")
        # spacing uniform to 1 part in 1e9
        if np.max(np.abs(df - df[0])) > 1e-9 * abs(df[0]):
            raise TraceFormatError("subcarrier spacing is not uniform")
        lo = self.center_frequency - self.bandwidth / 2 - 1e-6
        hi = self.center_frequency + self.bandwidth / 2 + 1e-6
        if f[0] < lo or f[-1] > hi:
            raise TraceFormatError("subcarrier frequencies fall outside the channel")

    @property
    def subcarrier_count(self) -> int:
        return int(self.frequencies.size)

    @property
    def spacing(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    @classmethod
    def regular(cls, center_frequency: float, bandwidth: float, subcarrier_count: int) -> "SubcarrierGrid":
        """Grid with K subcarriers spaced bandwidth/K, centered on the channel."""
        k = int(subcarrier_count)
        if k < 2:
            raise TraceFormatError("subcarrier_count must be >= 2")
        spacing = bandwidth / k
        f = center_frequency - bandwidth / 2 + spacing * (np.arange(k) + 0.5)
        return cls(center_frequency, bandwidth, f)


@dataclass(frozen=True)
class CsiFrame:
    """Complex channel gains of one received packet."""

    packet_index: int
    timestamp: float  # seconds
    gains: np.ndarray  # complex, length K

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=np.complex128)
        object.__setattr__(self, "gains", g)
        if not np.all(np.isfinite(g)):
            raise TraceFormatError(f"non-finite gain in frame {self.packet_index}")


@dataclass(frozen=True)
class CsiTrace:
    """Time-ordered CSI across packets. Gains stored as an (N, K) array."""

    grid: SubcarrierGrid
    packet_rate: float  # Hz
    packet_indices: np.ndarray  # (N,) uint64
    timestamps: np.ndarray  # (N,) seconds, strictly increasing
    gains: np.ndarray  # (N, K) complex128
    irregular: bool = False

    def __post_init__(self):
        idx = np.ascontiguousarray(self.packet_indices, dtype=np.uint64)
        ts = np.ascontiguousarray(self.timestamps, dtype=np.float64)
        g = np.ascontiguousarray(self.gains, dtype=np.complex128)
        object.__setattr__(self, "packet_indices", idx)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "gains", g)
        n = ts.size
        if idx.shape != (n,) or g.shape != (n, self.grid.subcarrier_count):
            raise TraceFormatError(
                f"shape mismatch: {idx.shape} indices, {ts.shape} timestamps, "
                f"{g.shape} gains for K={self.grid.subcarrier_count}"
            )
        if not np.all(np.isfinite(g)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(g), axis=1))[0])
            raise TraceFormatError(f"non-finite gain at frame {bad}")
        if n > 1:
            if np.any(np.diff(ts) <= 0):
                bad = int(np.flatnonzero(np.diff(ts) <= 0)[0]) + 1
                raise TraceFormatError(f"non-monotonic timestamp at frame {bad}")
            if not self.irregular and self.packet_rate > 0:
                dt = np.diff(ts)
                nominal = 1.0 / self.packet_rate
                if np.max(np.abs(dt - nominal)) > 0.01 * nominal:
                    bad = int(np.argmax(np.abs(dt - nominal))) + 1
                    raise TraceFormatError(
                        f"timestamp spacing inconsistent with packet_rate at frame {bad} "
                        "(use irregular=True to accept)"
                    )

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def frame(self, i: int) -> CsiFrame:
        return CsiFrame(int(self.packet_indices[i]), float(self.timestamps[i]), self.gains[i])

    def duration(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(self.timestamps[-1] - self.timestamps[0])

    def equals(self, other: "CsiTrace") -> bool:
        """Bit-exact field-for-field equality."""
        return (
            np.array_equal(self.grid.frequencies, other.grid.frequencies)
            and self.grid.center_frequency == other.grid.center_frequency
            and self.grid.bandwidth == other.grid.bandwidth
            and self.packet_rate == other.packet_rate
            and self.irregular == other.irregular
            and np.array_equal(self.packet_indices, other.packet_indices)
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.gains, other.gains)
        )


@dataclass(frozen=True)
class TagBitStream:
    """Tag bit per packet, plus the underlying symbol stream."""

    bits: np.ndarray  # (N,) uint8, one per packet
    bitrate: float  # bits/second
    packet_rate: float = 0.0
    symbols: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.uint8))

    def __post_init__(self):
        b = np.ascontiguousarray(self.bits, dtype=np.uint8)
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "symbols", np.ascontiguousarray(self.symbols, dtype=np.uint8))
        if b.size and not np.all((b == 0) | (b == 1)):
            raise TraceFormatError("tag bits must be 0/1")
        if b.size > 1:
            # every symbol must span >= 2 packets
            change = np.flatnonzero(np.diff(b) != 0)
            runs = np.diff(np.concatenate(([0], change + 1, [b.size])))
            # the trailing run may be clipped by the end of the trace
            if np.any(runs[:-1] < 2):
                raise TraceFormatError("tag bit run length < 2 packets")

"""Bit-exact binary trace container and the JSON-lines ground-truth sidecar.

Layout (little-endian): magic "P2PCSI\\0", version u8=1, K u32, packet_rate f64,
center_frequency f64, bandwidth f64, frame_count u64, then per frame:
packet_index u64, timestamp f64, K x (f64 real, f64 imag).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import TraceFormatError
from .types import CsiTrace, SubcarrierGrid

MAGIC = b"P2PCSI\0"
VERSION = 1
_HEADER = struct.Struct("<7sBIdddQ")


def save_trace(trace: CsiTrace, path) -> None:
    """Write a trace; load_trace(save_trace(t)) reproduces t bit-exactly."""
    path = Path(path)
    n = len(trace)
    k = trace.grid.subcarrier_count
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        k,
        trace.packet_rate,
        trace.grid.center_frequency,
        trace.grid.bandwidth,
        n,
    )
    # per-frame record: u64 index, f64 timestamp, K complex as f64 pairs
    body = np.empty((n, 2 + 2 * k), dtype=np.float64)
    # keep indices bit-exact: write them through a u64 view of the same buffer
    body.view(np.uint64)[:, 0] = trace.packet_indices
    body[:, 1] = trace.timestamps
    body[:, 2::2] = trace.gains.real
    body[:, 3::2] = trace.gains.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def load_trace(path, irregular: bool = False) -> CsiTrace:
    """Read and validate a trace file. Raises TraceFormatError naming the frame."""
    path = Path(path)
    if not path.exists():
        raise TraceFormatError(f"no such trace file: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise TraceFormatError("file too short for trace header")
    magic, version, k, rate, center, bandwidth, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TraceFormatError(f"unsupported trace version {version}")
    rec = 8 * (2 + 2 * k)
    expected = _HEADER.size + rec * count
    if len(raw) != expected:
        raise TraceFormatError(
            f"size mismatch: {len(raw)} bytes, expected {expected} for {count} frames of K={k}"
        )
    body = np.frombuffer(raw, dtype=np.float64, offset=_HEADER.size).reshape(count, 2 + 2 * k)
    indices = body.view(np.uint64)[:, 0].copy()
    timestamps = body[:, 1].copy()
    gains = (body[:, 2::2] + 1j * body[:, 3::2]).astype(np.complex128)
    grid = SubcarrierGrid.regular(center, bandwidth, k)
    return CsiTrace(grid, rate, indices, timestamps, gains, irregular=irregular)


def truth_sidecar_path(trace_path) -> Path:
    return Path(trace_path).with_suffix(".truth")


def save_truth_records(records: list[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_truth_records(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise TraceFormatError(f"no such truth file: {path}")
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records

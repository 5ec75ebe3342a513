"""End-to-end pipeline: decode -> separate -> ToF -> Doppler -> fuse ->
align -> direction -> position, with per-stage error attribution, scoring
against ground truth, and plot-ready diagnostic dumps."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibrate import SeparatedCsi, SeparationConfig, phase_aligned_mean, separate
from .config import PipelineConfig
from .decode import DecodedSignal, decode_trace
from .doppler import (
    DopplerEstimate,
    VirtualArrayConfig,
    doppler_magnitude,
    doppler_sign,
    full_doppler,
)
from .errors import StageError, TagLocError
from .localize import (
    AlignmentResult,
    DirectionEstimate,
    LocationEstimate,
    RangeTrack,
    align_paths,
    alignment_series,
    estimate_directions,
    fuse_range,
    lag_cost_curve,
    localize_scored,
)
from .simulate import GroundTruth, Trajectory
from .spectral import MusicEstimator, direct_path_tof
from .types import SPEED_OF_LIGHT, CsiTrace


@dataclass
class ToFSeries:
    times: np.ndarray  # window centers, seconds
    tofs: np.ndarray  # direct-path ToF, seconds
    low_confidence: np.ndarray  # bool per window


@dataclass
class PipelineResult:
    decoded: DecodedSignal
    separated: SeparatedCsi
    tof_r: ToFSeries
    tof_b: ToFSeries
    doppler: list[DopplerEstimate]
    track_r: RangeTrack
    track_b: RangeTrack
    alignments: list[AlignmentResult]
    directions: list[DirectionEstimate]
    locations: list[LocationEstimate]


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except TagLocError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, str(exc)) from exc


def _zero_phase_smooth(values: np.ndarray, half: int) -> np.ndarray:
    """Symmetric Hann-kernel smoothing with edge replication (no time shift)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2 or half < 1:
        return values.copy()
    kernel = np.hanning(2 * half + 3)[1:-1]
    kernel /= kernel.sum()
    padded = np.concatenate([np.full(half, values[0]), values, np.full(half, values[-1])])
    return np.convolve(padded, kernel, mode="valid")


def windowed_tof(
    times: np.ndarray,
    gains: np.ndarray,
    grid,
    cfg: PipelineConfig,
    valid: np.ndarray | None = None,
    min_profiles: int = 10,
    group_size: int = 1,
    prior: ToFSeries | None = None,
    prior_half_width_s: float = 0.0,
    window_s: float | None = None,
    hop_s: float | None = None,
) -> ToFSeries:
    """Direct-path ToF per sliding window from MUSIC profiles.

    With group_size > 1 each profile is computed on the phase-aligned mean of
    that many consecutive frames (half-overlapped groups): coherent averaging
    cancels the sign-flipping separation leakage that covariance pooling
    would accumulate at the direct-path delay. When a prior series is given,
    cluster picking is restricted to peaks within prior_half_width_s of the
    interpolated prior ToF."""
    scfg = cfg.spectral
    k = grid.subcarrier_count
    l = max(2, min(k - 1, int(round(scfg.smoothing_fraction * k))))
    delays = np.arange(0.0, scfg.delay_max_s + scfg.delay_step_s / 2, scfg.delay_step_s)
    music = MusicEstimator(grid, l, delays, scfg.order_threshold, scfg.max_paths)
    if valid is None:
        valid = np.ones(times.size, dtype=bool)

    win = window_s if window_s is not None else scfg.window_s
    hop = hop_s if hop_s is not None else win / 2
    out_t, out_tof, out_flag = [], [], []
    start = float(times[0])
    while start + win <= float(times[-1]) + 1e-9:
        sel = np.flatnonzero((times >= start) & (times < start + win) & valid)
        if group_size > 1:
            stride = max(1, group_size // 2)
            profiles = [
                music.profile(phase_aligned_mean(gains[sel[g : g + group_size]]))
                for g in range(0, sel.size - group_size + 1, stride)
            ]
        elif sel.size >= min_profiles:
            take = min(scfg.profiles_per_window, sel.size)
            sub = np.unique(sel[np.linspace(0, sel.size - 1, take).round().astype(int)])
            profiles = [music.profile(gains[i], packet_index=int(i)) for i in sub]
        else:
            profiles = []
        if len(profiles) >= min_profiles:
            search = None
            if prior is not None and prior.times.size:
                center = float(np.interp(start + win / 2, prior.times, prior.tofs))
                search = (center - prior_half_width_s, center + prior_half_width_s)
            try:
                est = direct_path_tof(
                    profiles,
                    clusters=scfg.clusters,
                    restarts=scfg.restarts,
                    seed=scfg.seed,
                    min_rel_height=scfg.min_rel_height,
                    min_profiles=min(min_profiles, len(profiles)),
                    search_window=search,
                )
            except TagLocError:
                est = None
            if est is not None:
                out_t.append(start + win / 2)
                out_tof.append(est.direct_path_tof)
                out_flag.append(est.low_confidence)
        start += hop
    return ToFSeries(
        times=np.asarray(out_t),
        tofs=np.asarray(out_tof),
        low_confidence=np.asarray(out_flag, dtype=bool),
    )


def run_pipeline(
    trace: CsiTrace,
    receiver: Trajectory,
    cfg: PipelineConfig | None = None,
) -> PipelineResult:
    """Raw CSI trace + receiver poses -> target position estimates."""
    cfg = cfg or PipelineConfig()
    d1 = cfg.align.d1

    decoded = _stage(
        "decode",
        decode_trace,
        trace,
        cfg.decode.bitrate,
        cfg.decode.window_s,
        cfg.decode.threshold,
        cfg.decode.hysteresis,
        cfg.decode.min_separation,
    )

    sep_cfg = SeparationConfig(
        block_s=cfg.separate.block_s,
        max_frames_per_class=cfg.separate.max_frames_per_class,
        coherent_tol=cfg.separate.coherent_tol,
        align_iterations=cfg.separate.align_iterations,
    )
    separated = _stage("separate", separate, trace, decoded, sep_cfg)

    bit0 = (decoded.bits == 0) & ~decoded.guard
    tof_r = _stage(
        "tof", windowed_tof, trace.timestamps, trace.gains, trace.grid, cfg, valid=bit0
    )
    if tof_r.times.size == 0:
        raise StageError("tof", "no receiver ToF windows produced")
    # the tag trails the receiver by d1, so the tag-path ToF is confined to
    # the receiver ToF + d1/c within +- d1/c; gating the cluster search there
    # rejects environment multipath that leaks into the backscatter estimate
    keep_r = ~tof_r.low_confidence
    if np.count_nonzero(keep_r) < 2:
        keep_r = np.ones(tof_r.times.size, dtype=bool)
    prior_b = ToFSeries(
        times=tof_r.times[keep_r],
        tofs=tof_r.tofs[keep_r] + d1 / SPEED_OF_LIGHT,
        low_confidence=np.zeros(np.count_nonzero(keep_r), dtype=bool),
    )
    tof_b = _stage(
        "tof",
        windowed_tof,
        separated.block_times,
        separated.h_b,
        trace.grid,
        cfg,
        min_profiles=4,
        group_size=cfg.spectral.tag_group_size,
        prior=prior_b,
        prior_half_width_s=d1 / SPEED_OF_LIGHT + 2 * cfg.spectral.delay_step_s,
        window_s=cfg.spectral.tag_window_s,
        hop_s=cfg.spectral.tag_window_s / 4,
    )
    if tof_b.times.size == 0:
        raise StageError("tof", "no tag-path ToF windows produced")

    dop_centers, dop_speeds, _, dop_detected = _stage(
        "doppler",
        doppler_magnitude,
        trace,
        window_s=cfg.doppler.window_s,
        bits=decoded.bits,
        max_speed=cfg.doppler.max_speed,
        min_speed=cfg.doppler.min_speed,
        min_peak_ratio=cfg.doppler.min_peak_ratio,
    )
    va = VirtualArrayConfig(
        element_interval_s=cfg.doppler.element_interval_s,
        spacing_m=cfg.doppler.spacing_m,
        window_elements=cfg.doppler.window_elements,
    )
    _, dop_signs = _stage("doppler", doppler_sign, trace, va, cfg.doppler.window_s, bit0)
    doppler = _stage(
        "doppler",
        full_doppler,
        dop_centers,
        dop_speeds,
        dop_signs,
        trace.grid.center_frequency,
        dop_detected,
    )
    if not doppler:
        raise StageError("doppler", "every window's motion sign is undetermined")

    def confident(series: ToFSeries) -> tuple[np.ndarray, np.ndarray]:
        keep = ~series.low_confidence
        if np.count_nonzero(keep) < 2:
            keep = np.ones(series.times.size, dtype=bool)
        return series.times[keep], series.tofs[keep]

    times_r, tofs_r = confident(tof_r)
    track_r = _stage(
        "fuse",
        fuse_range,
        times_r,
        tofs_r,
        doppler,
        trace.grid.bandwidth,
        cfg.fusion.tof_sigma,
        cfg.fusion.vr_sigma,
        cfg.fusion.process_noise,
    )
    # tag-path length = (target->tag) + (tag->receiver ~= d1); remove the
    # trailing leg so the track measures the target->tag range
    times_b, tofs_b = confident(tof_b)
    tof_b_adj = np.maximum(tofs_b - d1 / SPEED_OF_LIGHT, 0.0)
    track_b = _stage(
        "fuse",
        fuse_range,
        times_b,
        tof_b_adj,
        doppler,
        trace.grid.bandwidth,
        cfg.fusion.tof_sigma,
        cfg.fusion.vr_sigma,
        cfg.fusion.process_noise,
    )

    # align raw ToF against ToF: the fused tracks share the Doppler series
    # (which would bend the tag track toward the unlagged receiver track and
    # hide the lag) and Kalman dynamics can delay features, so the reference
    # is a zero-phase smoothing of the raw receiver ToF samples instead
    track_r_align = RangeTrack(
        timestamps=times_r,
        ranges=_zero_phase_smooth(tofs_r * SPEED_OF_LIGHT, half=2),
        rates=np.zeros_like(times_r),
        source="raw-tof",
    )
    track_b_raw = RangeTrack(
        timestamps=times_b,
        ranges=tof_b_adj * SPEED_OF_LIGHT,
        rates=np.zeros_like(tof_b_adj),
        source="raw-tof",
    )
    # the lag misfit curve is shallow (the lag signal lives only where the
    # range rate changes), so slowly drifting ToF errors can move its
    # minimum; every near-minimum lag is kept as a candidate and the final
    # choice is the one whose target positions are most self-consistent
    lags, costs = _stage(
        "align", lag_cost_curve, track_r_align, track_b_raw, d1, cfg.align.v_min, cfg.align.v_max
    )
    finite = np.isfinite(costs)
    if not np.any(finite):
        raise StageError("align", "range tracks overlap too briefly to align")
    keep = np.flatnonzero(finite & (costs <= costs[finite].min() * cfg.align.cost_slack))
    if keep.size > cfg.align.max_candidates:
        keep = keep[np.round(np.linspace(0, keep.size - 1, cfg.align.max_candidates)).astype(int)]

    best = None
    for lag in lags[keep]:
        alignments = alignment_series(track_r_align, track_b_raw, d1, float(lag), cfg.align.stride_s)
        if not alignments:
            continue
        directions = _stage("direction", estimate_directions, alignments, doppler)
        if not directions:
            continue
        locations, score = _stage(
            "localize",
            localize_scored,
            track_r,
            directions,
            receiver,
            cfg.localize.process_noise,
            cfg.localize.obs_sigma,
            cfg.localize.resolve_margin,
            cfg.localize.residual_threshold,
        )
        if locations and (best is None or score < best[0]):
            best = (score, alignments, directions, locations)
    if best is None:
        raise StageError("localize", "no candidate lag produced usable positions")
    _, alignments, directions, locations = best

    return PipelineResult(
        decoded=decoded,
        separated=separated,
        tof_r=tof_r,
        tof_b=tof_b,
        doppler=doppler,
        track_r=track_r,
        track_b=track_b,
        alignments=alignments,
        directions=directions,
        locations=locations,
    )


def receiver_from_truth(truth: GroundTruth) -> Trajectory:
    """Receiver trajectory from a ground-truth record stream."""
    if truth.times.size < 2:
        raise TagLocError("ground truth too short to derive receiver poses")
    dt = float(np.median(np.diff(truth.times)))
    return Trajectory(truth.receiver_pos, dt)


def estimates_to_records(locations: list[LocationEstimate]) -> list[dict]:
    return [
        {
            "t": loc.time,
            "x": float(loc.position[0]),
            "y": float(loc.position[1]),
            "range": loc.range_used,
            "theta_deg": float(np.degrees(loc.direction_used)),
            "confidence": loc.confidence,
            "flags": list(loc.flags),
        }
        for loc in locations
    ]


def score_positions(est_records: list[dict], truth: GroundTruth) -> dict:
    """Euclidean-error metrics of position estimates against ground truth."""
    if not est_records:
        raise TagLocError("no estimates to score")
    t = np.array([r["t"] for r in est_records])
    if t.min() > truth.times[-1] or t.max() < truth.times[0]:
        raise TagLocError("estimates and ground truth do not overlap in time")
    tx = np.interp(t, truth.times, truth.target_pos[:, 0])
    ty = np.interp(t, truth.times, truth.target_pos[:, 1])
    ex = np.array([r["x"] for r in est_records])
    ey = np.array([r["y"] for r in est_records])
    err = np.hypot(ex - tx, ey - ty)
    order = np.sort(err)
    cdf = [[float(e), float((i + 1) / err.size)] for i, e in enumerate(order)]
    return {
        "count": int(err.size),
        "median": float(np.median(err)),
        "mean": float(np.mean(err)),
        "p90": float(np.percentile(err, 90)),
        "cdf": cdf,
    }


def dump_stage(result: PipelineResult, trace: CsiTrace, stage: str, out_dir) -> list[Path]:
    """Write per-stage diagnostics as CSV; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def write(name, header, rows):
        path = out_dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        written.append(path)

    if stage == "decode":
        write(
            "decode.csv",
            ["packet_index", "combined", "normalized", "bit", "guard"],
            [
                (int(trace.packet_indices[i]), result.decoded.combined[i],
                 result.decoded.normalized[i], int(result.decoded.bits[i]),
                 int(result.decoded.guard[i]))
                for i in range(len(trace))
            ],
        )
    elif stage == "separate":
        write(
            "pairs.csv",
            ["index_one", "index_zero", "tau_d_s"],
            [(p.index_one, p.index_zero, p.tau_d) for p in result.separated.pairs],
        )
        write(
            "blocks.csv",
            ["time_s"] + [f"mag_{k}" for k in range(result.separated.h_b.shape[1])],
            [
                [result.separated.block_times[b]] + list(np.abs(result.separated.h_b[b]))
                for b in range(result.separated.h_b.shape[0])
            ],
        )
    elif stage == "spectral":
        write(
            "tof.csv",
            ["time_s", "tof_r_s", "low_conf_r"],
            list(zip(result.tof_r.times, result.tof_r.tofs, result.tof_r.low_confidence.astype(int))),
        )
        write(
            "tof_tag.csv",
            ["time_s", "tof_b_s", "low_conf_b"],
            list(zip(result.tof_b.times, result.tof_b.tofs, result.tof_b.low_confidence.astype(int))),
        )
    elif stage == "doppler":
        write(
            "doppler.csv",
            ["time_s", "f_d_hz", "sign", "v_r_mps"],
            [(d.time, d.f_d, d.sign, d.v_r) for d in result.doppler],
        )
    elif stage == "range":
        write(
            "range_r.csv",
            ["time_s", "range_m", "rate_mps"],
            list(zip(result.track_r.timestamps, result.track_r.ranges, result.track_r.rates)),
        )
        write(
            "range_b.csv",
            ["time_s", "range_m", "rate_mps"],
            list(zip(result.track_b.timestamps, result.track_b.ranges, result.track_b.rates)),
        )
    elif stage == "align":
        write(
            "alignment.csv",
            ["time_s", "lag_s", "correlation", "speed_mps"],
            [(a.time, a.lag, a.correlation, a.speed) for a in result.alignments],
        )
    else:
        raise TagLocError(
            f"unknown dump stage {stage!r}; expected one of decode, separate, spectral, doppler, range, align"
        )
    return written


def save_estimates(locations: list[LocationEstimate], path) -> None:
    with open(path, "w") as fh:
        for rec in estimates_to_records(locations):
            fh.write(json.dumps(rec) + "\n")


def load_estimates(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records

"""Phase-distortion removal and backscatter CSI separation.

The carrier offset and the packet-timing offset corrupt each frame with a
common phase and a per-subcarrier linear phase ramp, both random per packet.
Referencing every subcarrier to the first one (remove_cfo) cancels the
common phase exactly; the residual ramp is estimated per frame against its
own bit class and compensated. Because same-bit frames share one channel,
those estimates carry no tag-path bias. The backscatter channel is then the
difference of the bit-1 and bit-0 class means after a least-squares
common-phase rotation; when the trace is already phase-coherent the raw
class-mean difference is used, which is exact by linearity.

profile_delay_offset/compensate/refine_delay expose the pairwise delay
estimation and compensation steps directly for traces with large injected
timing offsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decode import DecodedSignal
from .errors import FlatProfileError, TagLocError
from .spectral import MultipathProfile
from .types import CsiFrame, CsiTrace, SubcarrierGrid


@dataclass(frozen=True)
class PairRecord:
    """Per-block diagnostics from separation."""

    index_one: int  # packet index of the block's first bit-1 frame
    index_zero: int  # packet index of the block's first bit-0 frame
    tau_d: float  # residual cross-class delay ramp, seconds (diagnostic)


@dataclass(frozen=True)
class SeparatedCsi:
    """Backscatter channel estimates averaged per coherence block."""

    grid: SubcarrierGrid
    block_times: np.ndarray  # (B,) block center times, seconds
    h_b: np.ndarray  # (B, K) averaged backscatter channel per block
    pairs: list[PairRecord]
    ref_flags: np.ndarray  # (B,) True when any frame needed a fallback reference subcarrier


def reference_phase(gains: np.ndarray) -> tuple[np.ndarray, int]:
    """Rotate so the reference subcarrier's phase is zero. Uses the first
    subcarrier; falls back to the largest-magnitude one if it is ~zero."""
    gains = np.asarray(gains, dtype=np.complex128)
    ref = 0
    scale = float(np.max(np.abs(gains)))
    if abs(gains[0]) < 1e-12 * max(scale, 1e-300):
        ref = int(np.argmax(np.abs(gains)))
        if abs(gains[ref]) == 0:
            raise TagLocError("all-zero frame; cannot phase-reference")
    phase = gains[ref] / abs(gains[ref])
    return gains * np.conj(phase), ref


def remove_cfo(frame: CsiFrame) -> CsiFrame:
    """Frame with the first-subcarrier phase removed from every subcarrier."""
    gains, _ = reference_phase(frame.gains)
    return CsiFrame(frame.packet_index, frame.timestamp, gains)


def profile_delay_offset(p0: MultipathProfile, p1: MultipathProfile) -> float:
    """Delay of p1 relative to p0: argmax over dt of sum_t p0(t) * p1(t + dt).

    The search is bounded to +-1/4 of the grid; out-of-range samples are
    treated as zero. The peak is refined by parabolic interpolation.
    """
    a = np.asarray(p0.power, dtype=np.float64)
    b = np.asarray(p1.power, dtype=np.float64)
    if a.size != b.size:
        raise TagLocError("profiles must share one delay grid")
    step = p0.step
    t_len = a.size
    max_lag = t_len // 4
    for p in (a, b):
        mean = float(np.mean(p))
        if mean <= 0 or (np.max(p) - mean) < 0.5 * mean:
            raise FlatProfileError("profile has no peak above the noise floor")
    lags = np.arange(-max_lag, max_lag + 1)
    corr = np.empty(lags.size)
    for i, lag in enumerate(lags):
        if lag >= 0:
            corr[i] = float(np.dot(a[: t_len - lag], b[lag:]))
        else:
            corr[i] = float(np.dot(a[-lag:], b[: t_len + lag]))
    best = int(np.argmax(corr))
    lag = float(lags[best])
    # parabolic sub-step refinement
    if 0 < best < corr.size - 1:
        denom = corr[best - 1] - 2 * corr[best] + corr[best + 1]
        if denom < 0:
            lag += 0.5 * (corr[best - 1] - corr[best + 1]) / denom
    return lag * step


def compensate(frame: CsiFrame, grid: SubcarrierGrid, tau_d: float) -> CsiFrame:
    """Multiply each subcarrier by exp(j 2 pi f_k tau_d); magnitudes unchanged."""
    if not np.isfinite(tau_d):
        raise TagLocError("non-finite delay compensation")
    gains = frame.gains * np.exp(2j * np.pi * grid.frequencies * tau_d)
    return CsiFrame(frame.packet_index, frame.timestamp, gains)


def compensate_gains(gains: np.ndarray, grid: SubcarrierGrid, tau_d: float) -> np.ndarray:
    return gains * np.exp(2j * np.pi * grid.frequencies * tau_d)


def refine_delay(
    h_ref: np.ndarray,
    h_mov: np.ndarray,
    grid: SubcarrierGrid,
    tau0: float,
    half_window: float = 0.6e-9,
    step: float = 0.005e-9,
) -> float:
    """Fine delay so that compensate(h_mov, tau) best matches h_ref, by a
    bounded scan of the real part of the compensated cross-correlation."""
    taus = np.arange(tau0 - half_window, tau0 + half_window + step / 2, step)
    phases = np.exp(2j * np.pi * grid.frequencies[None, :] * taus[:, None])
    score = np.real((h_ref.conj()[None, :] * h_mov[None, :] * phases).sum(axis=1))
    best = int(np.argmax(score))
    tau = float(taus[best])
    if 0 < best < score.size - 1:
        denom = score[best - 1] - 2 * score[best] + score[best + 1]
        if denom < 0:
            tau += 0.5 * (score[best - 1] - score[best + 1]) / denom * step
    return tau


@dataclass
class SeparationConfig:
    block_s: float = 0.02  # coherence block length, seconds
    max_frames_per_class: int = 64  # per-block cap on frames averaged per bit class
    coherent_tol: float = 1e-6  # phase agreement (rad) that counts as undistorted
    align_iterations: int = 2  # per-class timing-ramp alignment passes


def fit_ramp(reference: np.ndarray, frame: np.ndarray, grid: SubcarrierGrid) -> float:
    """Delay lam such that frame ~= reference * exp(j 2 pi (f_k - f_1) lam),
    by a magnitude-weighted linear fit of the unwrapped pairwise phase."""
    r = np.conj(reference) * frame
    w = np.abs(r)
    if not np.any(w > 0):
        raise TagLocError("cannot fit a phase ramp to all-zero frames")
    ang = np.unwrap(np.angle(r))
    x = 2 * np.pi * (grid.frequencies - grid.frequencies[0])
    xm = np.average(x, weights=w)
    am = np.average(ang, weights=w)
    denom = np.average((x - xm) ** 2, weights=w)
    if denom <= 0:
        return 0.0
    return float(np.average((x - xm) * (ang - am), weights=w) / denom)


def _aligned_class_mean(frames: np.ndarray, grid: SubcarrierGrid, iterations: int = 2):
    """Coherent mean of phase-referenced same-bit frames after compensating
    each frame's residual timing ramp. The per-frame ramps are re-centered to
    zero mean, so the class's average timing offset is preserved: the jitter
    is zero-mean, which makes the bit-0 and bit-1 class means directly
    comparable without a (tag-biased) cross-class delay estimate."""
    m = frames.mean(axis=0)
    x = 2 * np.pi * (grid.frequencies - grid.frequencies[0])
    aligned = frames
    for _ in range(iterations):
        taus = np.array([fit_ramp(m, f, grid) for f in frames])
        taus -= taus.mean()
        aligned = frames * np.exp(-1j * x[None, :] * taus[:, None])
        m = aligned.mean(axis=0)
    return m


def phase_aligned_mean(frames: np.ndarray) -> np.ndarray:
    """Coherent mean of frames whose global phases are unknown: each frame is
    rotated onto the running sum before averaging. Errors that flip sign from
    frame to frame (gauge-phase and timing-gauge leakage) cancel linearly,
    which a covariance-style pooling cannot achieve."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.complex128))
    m = frames[0].astype(np.complex128).copy()
    for f in frames[1:]:
        ph = np.vdot(m, f)
        if abs(ph) > 0:
            m += f * np.conj(ph / abs(ph))
        else:
            m += f
    return m / frames.shape[0]


def _class_coherent(gains: np.ndarray, idx: np.ndarray, tol: float) -> bool:
    """True when consecutive same-class frames agree in phase to within tol
    (no measurable CFO/STO distortion, so raw subtraction is exact)."""
    for j in range(1, min(idx.size, 8)):
        a, b = int(idx[j - 1]), int(idx[j])
        if abs(float(np.angle(np.vdot(gains[a], gains[b])))) > tol:
            return False
        ratio = gains[b] * np.conj(gains[a])
        ang = np.angle(ratio[np.abs(ratio) > 0])
        if ang.size and float(np.max(ang) - np.min(ang)) > 4 * tol:
            return False
    return True


def separate(
    trace: CsiTrace,
    decoded: DecodedSignal,
    config: SeparationConfig | None = None,
) -> SeparatedCsi:
    """Backscatter channel per coherence block.

    When the channel is phase-coherent across packets (no impairments), the
    block estimate is the plain difference of the bit-1 and bit-0 class
    means — exact by linearity. Otherwise every frame is phase-referenced to
    the first subcarrier, each bit class is coherently averaged after
    per-frame timing-ramp alignment (zero-mean gauge), and the class means
    are subtracted after a least-squares common-phase rotation. The
    recovered channel then carries one unobservable global phase per block,
    which is fundamental: without synchronization the absolute phase between
    the tag's two states cannot be measured.
    """
    cfg = config or SeparationConfig()
    usable = ~decoded.guard
    labels = decoded.bits
    times = trace.timestamps
    t0 = float(times[0])
    n_blocks = max(1, int(np.ceil((float(times[-1]) - t0 + 1e-12) / cfg.block_s)))

    block_times, block_hb, pairs, ref_flags = [], [], [], []
    for b in range(n_blocks):
        lo_t = t0 + b * cfg.block_s
        hi_t = lo_t + cfg.block_s
        in_block = (times >= lo_t) & (times < hi_t) & usable
        ones_idx = np.flatnonzero(in_block & (labels == 1))
        zeros_idx = np.flatnonzero(in_block & (labels == 0))
        if ones_idx.size == 0 or zeros_idx.size == 0:
            continue
        if ones_idx.size > cfg.max_frames_per_class:
            sel = np.linspace(0, ones_idx.size - 1, cfg.max_frames_per_class).round().astype(int)
            ones_idx = ones_idx[np.unique(sel)]
        if zeros_idx.size > cfg.max_frames_per_class:
            sel = np.linspace(0, zeros_idx.size - 1, cfg.max_frames_per_class).round().astype(int)
            zeros_idx = zeros_idx[np.unique(sel)]

        coherent = _class_coherent(trace.gains, zeros_idx, cfg.coherent_tol) and _class_coherent(
            trace.gains, ones_idx, cfg.coherent_tol
        )
        ref_flag = False
        if coherent:
            hb = trace.gains[ones_idx].mean(axis=0) - trace.gains[zeros_idx].mean(axis=0)
            tau_cross = 0.0
        else:
            r1 = np.empty((ones_idx.size, trace.grid.subcarrier_count), dtype=np.complex128)
            r0 = np.empty((zeros_idx.size, trace.grid.subcarrier_count), dtype=np.complex128)
            for j, i in enumerate(ones_idx):
                r1[j], ref = reference_phase(trace.gains[i])
                ref_flag = ref_flag or ref != 0
            for j, i in enumerate(zeros_idx):
                r0[j], ref = reference_phase(trace.gains[i])
                ref_flag = ref_flag or ref != 0
            m1 = _aligned_class_mean(r1, trace.grid, cfg.align_iterations)
            m0 = _aligned_class_mean(r0, trace.grid, cfg.align_iterations)
            gamma = float(np.angle(np.vdot(m0, m1)))
            hb = m1 * np.exp(-1j * gamma) - m0
            tau_cross = fit_ramp(m0, m1, trace.grid)

        block_hb.append(hb)
        block_times.append(lo_t + cfg.block_s / 2)
        ref_flags.append(ref_flag)
        pairs.append(PairRecord(int(ones_idx[0]), int(zeros_idx[0]), tau_cross))

    if not block_hb:
        raise TagLocError("no block contains both bit-1 and bit-0 frames")
    return SeparatedCsi(
        grid=trace.grid,
        block_times=np.asarray(block_times),
        h_b=np.asarray(block_hb),
        pairs=pairs,
        ref_flags=np.asarray(ref_flags, dtype=bool),
    )

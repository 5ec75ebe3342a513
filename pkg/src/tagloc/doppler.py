"""Two-step Doppler estimation.

Magnitude comes from amplitude-only time-frequency analysis of |h(k,n)|^2
(immune to any per-packet common phase). The arithmetic sign comes from a
movement-synthesized virtual antenna array built from phase-referenced
frames sampled at a fixed interval: the referenced phase of a far subcarrier
drifts with the direct-path delay, so the beamformer peak lands on a small
positive cos(theta) when the receiver approaches and negative when it
recedes. Sub-grid vertex interpolation recovers that offset even though it
is far below the array's Rayleigh resolution (the input is a near-pure
tone, so the peak location is unbiased).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import detrend

from .calibrate import reference_phase
from .errors import TagLocError
from .types import SPEED_OF_LIGHT, CsiTrace


@dataclass(frozen=True)
class DopplerEstimate:
    """Signed radial-speed estimate for one analysis window."""

    time: float  # window center, seconds
    f_d: float  # Doppler magnitude at the center frequency, Hz
    sign: int  # +1 receding, -1 approaching, 0 undetermined
    v_r: float  # signed radial speed, m/s (negative = approaching)


@dataclass
class VirtualArrayConfig:
    element_interval_s: float = 0.025  # time between virtual elements
    spacing_m: float = 0.025  # assumed inter-element spacing
    window_elements: int = 16  # elements per beamforming sub-window
    wavelength_m: float | None = None  # default: c / center frequency
    cos_grid_points: int = 201
    flat_threshold: float = 0.05  # |A| variation below this -> undetermined

    def validate(self) -> None:
        if self.window_elements < 4:
            raise TagLocError("virtual array window must span >= 4 elements")
        if self.spacing_m <= 0 or self.element_interval_s <= 0:
            raise TagLocError("virtual array spacing and interval must be positive")


def _window_starts(n: int, win: int, hop: int) -> np.ndarray:
    if win > n:
        return np.empty(0, dtype=int)
    return np.arange(0, n - win + 1, hop)


def _parabolic_peak(mag: np.ndarray, j: int) -> float:
    """Sub-bin offset of the vertex through (j-1, j, j+1); 0 at the edges."""
    if not 0 < j < mag.size - 1:
        return 0.0
    denom = mag[j - 1] - 2 * mag[j] + mag[j + 1]
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (mag[j - 1] - mag[j + 1]) / denom, -0.5, 0.5))


def remove_outlier_windows(values: np.ndarray, neighbors: int = 3, n_mad: float = 3.0) -> np.ndarray:
    """Replace windows that differ from the median of their +-neighbors by
    more than n_mad times the neighbors' MAD."""
    v = np.asarray(values, dtype=np.float64).copy()
    out = v.copy()
    for i in range(v.size):
        lo = max(0, i - neighbors)
        hi = min(v.size, i + neighbors + 1)
        nb = np.delete(v[lo:hi], i - lo)
        if nb.size < 2:
            continue
        med = np.median(nb)
        mad = np.median(np.abs(nb - med))
        if mad > 0 and abs(v[i] - med) > n_mad * mad:
            out[i] = med
    return out


def doppler_magnitude(
    trace: CsiTrace,
    window_s: float = 1.0,
    bits: np.ndarray | None = None,
    max_speed: float = 3.0,
    min_speed: float = 0.18,
    min_peak_ratio: float = 5.0,
    min_samples: int = 64,
):
    """Unsigned radial speed per STFT window.

    Per subcarrier, the dominant non-DC bin of the Hann-windowed spectrum of
    |h(k,n)|^2 gives f_Dk; speeds combine as mean over k of (f_Dk/f_k)*c.
    When ``bits`` is given, the per-level means of the on-off tag modulation
    are removed inside each window so the keying spectrum does not mask the
    Doppler beat. Returns (window centers, unsigned speeds, f_D at center,
    detected); windows whose beat is below the search band or buried in the
    noise floor report speed 0 with detected=False.
    """
    win = int(round(window_s * trace.packet_rate))
    if win < min_samples:
        raise TagLocError(f"window of {win} samples is shorter than {min_samples}")
    hop = max(1, win // 2)
    power = np.abs(trace.gains) ** 2
    freqs = trace.grid.frequencies
    fc = trace.grid.center_frequency
    df = trace.packet_rate / win
    f_cap = 1.2 * max_speed * fc / SPEED_OF_LIGHT
    k_hi = min(win // 2, max(3, int(np.ceil(f_cap / df)) + 1))
    # the lower band edge rejects the always-present slow beat between the
    # direct and tag paths (the tag nearly retraces the direct path, so
    # their relative speed stays well under min_speed)
    f_floor = min_speed * fc / SPEED_OF_LIGHT
    k_lo = max(2, int(np.ceil(f_floor / df)))
    taper = np.hanning(win)[:, None]

    starts = _window_starts(len(trace), win, hop)
    centers, speeds, flags = [], [], []
    for s in starts:
        x = power[s : s + win].copy()
        if bits is not None:
            b = bits[s : s + win]
            for level in (0, 1):
                sel = b == level
                if np.any(sel):
                    x[sel] -= x[sel].mean(axis=0)
        x = detrend(x, axis=0)
        spec = np.abs(np.fft.rfft(taper * x, axis=0))
        band = spec[k_lo:k_hi]
        v, got = 0.0, False
        if band.size and np.any(band > 0):
            peak_bins = np.argmax(band, axis=0)
            peak_vals = band[peak_bins, np.arange(band.shape[1])]
            floor = np.median(band, axis=0)
            strong = peak_vals > min_peak_ratio * np.maximum(floor, 1e-300)
            if np.count_nonzero(strong) >= band.shape[1] / 2:
                f_dk = np.empty(np.count_nonzero(strong))
                for out_i, k in enumerate(np.flatnonzero(strong)):
                    j = int(peak_bins[k]) + k_lo
                    p = _parabolic_peak(spec[:, k], j)
                    f_dk[out_i] = (j + p) * df
                v = float(np.mean(f_dk / freqs[strong] * SPEED_OF_LIGHT))
                got = True
        centers.append(trace.timestamps[s] + window_s / 2)
        speeds.append(v)
        flags.append(got)

    speeds = np.asarray(speeds)
    flags = np.asarray(flags, dtype=bool)
    if np.any(flags):
        cleaned = remove_outlier_windows(speeds[flags])
        speeds = speeds.copy()
        speeds[flags] = cleaned
    centers = np.asarray(centers)
    f_d = speeds * fc / SPEED_OF_LIGHT
    return centers, speeds, f_d, flags


def doppler_sign(
    trace: CsiTrace,
    cfg: VirtualArrayConfig | None = None,
    window_s: float = 1.0,
    valid: np.ndarray | None = None,
):
    """Per-window motion sign from the movement-synthesized virtual array.

    Elements are phase-referenced frames at the configured interval;
    A(cos t) = sum_i conj(z_i) exp(j (2 pi / lambda) i spacing cos t) is
    evaluated on a cos-theta grid and the vertex-interpolated argmax gives
    cos(theta_e) whose sign encodes approach (+) vs recede (-). Each window
    takes a majority vote over sliding element sub-windows. Returns
    (window centers, signs) with 0 marking undetermined windows.
    """
    cfg = cfg or VirtualArrayConfig()
    cfg.validate()
    lam = cfg.wavelength_m or SPEED_OF_LIGHT / trace.grid.center_frequency
    n = len(trace)
    rate = trace.packet_rate
    step = max(1, int(round(cfg.element_interval_s * rate)))
    win = int(round(window_s * rate))
    hop = max(1, win // 2)
    k_sel = trace.grid.subcarrier_count - 1

    if valid is None:
        valid = np.ones(n, dtype=bool)

    # phase-referenced far-subcarrier series at the element cadence
    element_idx = np.arange(0, n, step)
    z_all = np.full(element_idx.size, np.nan + 0j, dtype=np.complex128)
    for e, i in enumerate(element_idx):
        j = _nearest_valid(valid, i, step // 2)
        if j is not None:
            g, _ = reference_phase(trace.gains[j])
            z_all[e] = g[k_sel]

    kappa = 2 * np.pi * cfg.spacing_m / lam
    cos_grid = np.linspace(-1.0, 1.0, cfg.cos_grid_points)
    w = cfg.window_elements
    basis = np.exp(1j * kappa * np.arange(w)[:, None] * cos_grid[None, :])

    starts = _window_starts(n, win, hop)
    centers, signs = [], []
    for s in starts:
        lo = int(np.ceil(s / step))
        hi = int((s + win - 1) // step)
        votes = []
        for e0 in range(lo, hi - w + 2):
            z = z_all[e0 : e0 + w]
            if z.size < w or np.any(np.isnan(z)):
                continue
            mag = np.abs(np.conj(z) @ basis)
            peak = float(np.max(mag))
            if peak <= 0 or (peak - float(np.min(mag))) < cfg.flat_threshold * peak:
                continue
            j = int(np.argmax(mag))
            dc = cos_grid[1] - cos_grid[0]
            cos_e = cos_grid[j] + _parabolic_peak(mag, j) * dc
            if cos_e != 0:
                votes.append(-1 if cos_e > 0 else 1)
        if votes:
            tally = int(np.sum(votes))
            # a near-split vote is noise, not evidence
            sign = int(np.sign(tally)) if abs(tally) > 0.25 * len(votes) else 0
        else:
            sign = 0
        centers.append(trace.timestamps[s] + window_s / 2)
        signs.append(sign)
    return np.asarray(centers), np.asarray(signs, dtype=int)


def _nearest_valid(valid: np.ndarray, i: int, radius: int):
    """Index of the valid frame nearest i within +-radius, else None."""
    if valid[i]:
        return i
    for d in range(1, radius + 1):
        if i - d >= 0 and valid[i - d]:
            return i - d
        if i + d < valid.size and valid[i + d]:
            return i + d
    return None


def full_doppler(
    centers: np.ndarray,
    speeds: np.ndarray,
    signs: np.ndarray,
    center_frequency: float,
    detected: np.ndarray | None = None,
) -> list[DopplerEstimate]:
    """Signed per-window estimates; undetermined windows inherit a
    neighboring sign, leading undetermined windows are withheld, and windows
    with no detected Doppler beat are dropped.

    When the determined sign changes between two windows, the change is
    placed retroactively at the lowest-speed window in between: the physical
    zero crossing of the radial speed sits at the speed minimum, and blaming
    the whole gap on the later window would feed stale wrong-sign rates into
    downstream fusion.
    """
    if len(centers) != len(speeds) or len(speeds) != len(signs):
        raise TagLocError("magnitude and sign windows are not aligned")
    if detected is None:
        detected = np.ones(len(centers), dtype=bool)
    signs = np.asarray(signs, dtype=int)
    resolved = signs.copy()
    det = np.flatnonzero(signs != 0)
    for a, b in zip(det[:-1], det[1:]):
        if signs[a] == signs[b]:
            resolved[a:b] = signs[a]
        else:
            gap = np.where(detected[a : b + 1], speeds[a : b + 1], 0.0)
            lows = np.flatnonzero(gap == gap.min())
            k = a + int(lows[lows.size // 2])
            resolved[a:k] = signs[a]
            resolved[k:b] = signs[b]
    out: list[DopplerEstimate] = []
    for t, v, s, ok in zip(centers, speeds, resolved, detected):
        if s == 0 or not ok:
            continue  # no determined sign yet, or no measurable beat
        f_d = v * center_frequency / SPEED_OF_LIGHT
        out.append(DopplerEstimate(time=float(t), f_d=float(f_d), sign=int(s), v_r=int(s) * float(v)))
    return out

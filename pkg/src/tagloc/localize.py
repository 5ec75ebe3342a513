"""Range fusion, virtual path alignment, direction, and position tracking.

A 1D constant-velocity Kalman filter fuses ToF range observations with
signed Doppler radial speeds into a fine-grained range track. The receiver
and tag range tracks are then aligned in time: the tag retraces the
receiver's path d1 meters behind, so the lag dt that best matches the two
tracks gives the moving speed v = d1/dt. The angle between the motion
direction and the target line follows as theta = arccos(|v_r|/v), and a
pair of mirror-hypothesis constant-velocity trackers turns ranges + angles
+ receiver poses into target positions, using track-model consistency to
pick the correct side of the motion line when the path curvature allows it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .doppler import DopplerEstimate
from .errors import TagLocError
from .simulate import Trajectory
from .types import SPEED_OF_LIGHT


@dataclass(frozen=True)
class RangeTrack:
    """A range time series (meters) and its filtered range rate."""

    timestamps: np.ndarray
    ranges: np.ndarray
    rates: np.ndarray
    source: str  # "raw-tof" or "fused"

    def at(self, t) -> np.ndarray:
        return np.interp(t, self.timestamps, self.ranges)


@dataclass(frozen=True)
class AlignmentResult:
    time: float  # window center, seconds
    lag: float  # dt > 0, seconds
    correlation: float  # mean-removed correlation at the chosen lag
    speed: float  # d1 / lag after the moving-average smoothing, m/s


@dataclass(frozen=True)
class DirectionEstimate:
    time: float
    theta: float  # radians in [0, pi], motion direction vs target line
    mirror: str  # "left" | "right" | "unresolved"
    clamped: bool  # |v_r| exceeded v and the ratio was clamped to 1


@dataclass(frozen=True)
class LocationEstimate:
    time: float
    position: np.ndarray  # chosen-hypothesis 2D position, meters
    alt_position: np.ndarray  # rejected (mirror) hypothesis position
    range_used: float
    direction_used: float
    confidence: float  # in [0, 1]
    flags: tuple = ()


def fuse_range(
    tof_times: np.ndarray,
    tof_seconds: np.ndarray,
    doppler: list[DopplerEstimate],
    bandwidth: float,
    tof_sigma: float | None = None,
    vr_sigma: float = 0.06,
    process_noise: float = 0.5,
    gate_nis: float = 16.0,
    warmup: int = 5,
) -> RangeTrack:
    """Kalman-fused and RTS-smoothed range track from ToF ranges and signed v_r.

    State [range, range-rate] under a constant-velocity model; ToF * c
    observes the range (sigma one resolution cell c/(2*bandwidth) by
    default), v_r observes the rate. After warmup updates, observations
    whose normalized innovation squared exceeds gate_nis are rejected
    (multipath occasionally swaps the direct-path cluster, producing range
    jumps of tens of meters). A backward Rauch-Tung-Striebel pass removes
    the causal filter delay, which would otherwise shift the whole track
    late in time and corrupt the receiver/tag track alignment. Track
    samples are emitted at the ToF observation times.
    """
    tof_times = np.asarray(tof_times, dtype=np.float64)
    ranges_obs = np.asarray(tof_seconds, dtype=np.float64) * SPEED_OF_LIGHT
    if tof_times.size == 0 or len(doppler) == 0:
        raise TagLocError("range fusion needs both ToF and Doppler series")
    d_times = np.array([d.time for d in doppler])
    d_vals = np.array([d.v_r for d in doppler])
    if max(tof_times[0], d_times[0]) > min(tof_times[-1], d_times[-1]):
        raise TagLocError("ToF and Doppler series do not overlap in time")
    if tof_sigma is None:
        tof_sigma = SPEED_OF_LIGHT / (2.0 * bandwidth)

    events = [(float(t), 0, float(r)) for t, r in zip(tof_times, ranges_obs)]
    events += [(float(t), 1, float(v)) for t, v in zip(d_times, d_vals)]
    events.sort(key=lambda e: (e[0], e[1]))

    x = np.array([ranges_obs[0], d_vals[0]])
    p = np.diag([tof_sigma**2, max(vr_sigma, 1e-6) ** 2])
    r_var = np.array([tof_sigma**2, vr_sigma**2])
    h_rows = (np.array([1.0, 0.0]), np.array([0.0, 1.0]))

    # forward pass, recording what the backward pass needs
    xs_prior, ps_prior, xs_post, ps_post, fs, is_tof = [], [], [], [], [], []
    t_prev = events[0][0]
    updates = 0
    for t, kind, val in events:
        dt = t - t_prev
        t_prev = t
        f = np.array([[1.0, dt], [0.0, 1.0]])
        if dt > 0:
            q = process_noise * np.array(
                [[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]]
            )
            x = f @ x
            p = f @ p @ f.T + q
        xs_prior.append(x.copy())
        ps_prior.append(p.copy())
        fs.append(f)
        h = h_rows[kind]
        s = float(h @ p @ h) + r_var[kind]
        innov = val - float(h @ x)
        if updates < warmup or innov**2 / s <= gate_nis:
            gain = (p @ h) / s
            x = x + gain * innov
            p = (np.eye(2) - np.outer(gain, h)) @ p
            updates += 1
        xs_post.append(x.copy())
        ps_post.append(p.copy())
        is_tof.append(kind == 0)

    # backward Rauch-Tung-Striebel smoothing
    n = len(events)
    xs = [None] * n
    xs[-1] = xs_post[-1]
    p_s = ps_post[-1]
    for i in range(n - 2, -1, -1):
        f = fs[i + 1]
        c = ps_post[i] @ f.T @ np.linalg.inv(ps_prior[i + 1])
        xs[i] = xs_post[i] + c @ (xs[i + 1] - xs_prior[i + 1])
        p_s = ps_post[i] + c @ (p_s - ps_prior[i + 1]) @ c.T

    out_t = [events[i][0] for i in range(n) if is_tof[i]]
    out_r = [max(0.0, xs[i][0]) for i in range(n) if is_tof[i]]
    out_v = [xs[i][1] for i in range(n) if is_tof[i]]
    return RangeTrack(
        timestamps=np.asarray(out_t),
        ranges=np.asarray(out_r),
        rates=np.asarray(out_v),
        source="fused",
    )


def align_paths(
    track_r: RangeTrack,
    track_b: RangeTrack,
    d1: float,
    v_min: float = 0.1,
    v_max: float = 3.0,
    stride_s: float = 0.5,
    lag_step_s: float = 0.02,
    huber_m: float = 0.5,
    min_samples: int = 8,
) -> list[AlignmentResult]:
    """Trace-wide lag fit between the receiver and tag range tracks.

    The tag retraces the receiver's path d1 meters behind, so the tag track
    is the receiver track delayed by lag = d1/v. The lag in [d1/v_max,
    d1/v_min] minimizing the Huber cost of (tag samples - receiver track at
    the lagged times) is picked on the whole overlap; one trace-wide lag is
    far more stable than windowed estimates because the per-window lag
    signal (track difference over track slope) is unobservable wherever the
    range rate is small. Results are emitted at stride_s cadence so each
    downstream direction window can pair with its nearest Doppler window.
    """
    lags, costs = lag_cost_curve(track_r, track_b, d1, v_min, v_max, lag_step_s, huber_m, min_samples)
    if not np.any(np.isfinite(costs)):
        raise TagLocError("range tracks overlap too briefly to align")
    best = int(np.argmin(costs))
    lag = float(lags[best])
    if 0 < best < lags.size - 1 and np.all(np.isfinite(costs[best - 1 : best + 2])):
        denom = costs[best - 1] - 2 * costs[best] + costs[best + 1]
        if denom > 0:
            lag += float(0.5 * (costs[best - 1] - costs[best + 1]) / denom) * lag_step_s
    lag = float(np.clip(lag, lags[0], lags[-1]))
    return alignment_series(track_r, track_b, d1, lag, stride_s)


def lag_cost_curve(
    track_r: RangeTrack,
    track_b: RangeTrack,
    d1: float,
    v_min: float = 0.1,
    v_max: float = 3.0,
    lag_step_s: float = 0.02,
    huber_m: float = 0.5,
    min_samples: int = 8,
):
    """Huber misfit of (tag samples - receiver track at the lagged times) on
    a lag grid covering [d1/v_max, d1/v_min]; lags with too little track
    overlap cost infinity. Returns (lags, costs)."""
    if d1 <= 0:
        raise TagLocError("tag trailing distance d1 must be positive")
    lag_lo = max(lag_step_s, d1 / v_max)
    lag_hi = d1 / v_min
    lags = np.arange(lag_lo, lag_hi + lag_step_s / 2, lag_step_s)
    tb = track_b.timestamps
    rb = track_b.ranges
    costs = np.full(lags.size, np.inf)
    for i, lag in enumerate(lags):
        shifted = tb - lag
        ok = (shifted >= track_r.timestamps[0]) & (shifted <= track_r.timestamps[-1])
        if np.count_nonzero(ok) < min_samples:
            continue
        e = np.abs(rb[ok] - track_r.at(shifted[ok]))
        costs[i] = float(
            np.mean(np.where(e <= huber_m, 0.5 * e**2, huber_m * (e - 0.5 * huber_m)))
        )
    return lags, costs


def alignment_series(
    track_r: RangeTrack,
    track_b: RangeTrack,
    d1: float,
    lag: float,
    stride_s: float = 0.5,
) -> list[AlignmentResult]:
    """AlignmentResults at stride_s cadence for one chosen lag (speed = d1/lag)."""
    tb = track_b.timestamps
    rb = track_b.ranges
    shifted = tb - lag
    ok = (shifted >= track_r.timestamps[0]) & (shifted <= track_r.timestamps[-1])
    if not np.any(ok):
        return []
    corr = _safe_corr(
        rb[ok],
        track_r.at(shifted[ok]),
        float(np.mean(np.abs(rb[ok] - track_r.at(shifted[ok])))),
        d1,
    )
    t0 = max(track_r.timestamps[0], tb[0])
    t1 = min(track_r.timestamps[-1], tb[-1])
    centers = np.arange(t0, t1 + stride_s / 2, stride_s)
    return [
        AlignmentResult(time=float(c), lag=float(lag), correlation=float(corr), speed=float(d1 / lag))
        for c in centers
    ]


def _safe_corr(a: np.ndarray, b: np.ndarray, abs_err: float, scale: float) -> float:
    """Mean-removed Pearson correlation; degenerate flat windows count as
    correlated only when the tracks already agree to within the scale."""
    sa, sb = float(np.std(a)), float(np.std(b))
    if sa < 1e-9 or sb < 1e-9:
        return 1.0 if abs_err < 0.5 * scale else 0.0
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def estimate_direction(alignment: AlignmentResult, doppler: DopplerEstimate) -> DirectionEstimate:
    """theta = arccos(|v_r|/v), folded so approaching motion maps into
    [0, pi/2) and receding into (pi/2, pi]. Ratios above 1 clamp and flag."""
    if alignment.speed <= 0:
        raise TagLocError("alignment speed must be positive")
    ratio = abs(doppler.v_r) / alignment.speed
    clamped = ratio > 1.0
    theta = float(np.arccos(min(ratio, 1.0)))
    if doppler.sign > 0:  # receding
        theta = float(np.pi) - theta
    return DirectionEstimate(
        time=alignment.time, theta=theta, mirror="unresolved", clamped=clamped
    )


def estimate_directions(
    alignments: list[AlignmentResult],
    doppler: list[DopplerEstimate],
    max_gap_s: float = 1.0,
) -> list[DirectionEstimate]:
    """Pair each alignment window with the nearest Doppler window in time."""
    if not doppler:
        return []
    d_times = np.array([d.time for d in doppler])
    out = []
    for a in alignments:
        j = int(np.argmin(np.abs(d_times - a.time)))
        if abs(d_times[j] - a.time) <= max_gap_s:
            out.append(estimate_direction(a, doppler[j]))
    return out


def _cv_fit(times: np.ndarray, points: np.ndarray, sigma: float, iterations: int = 3):
    """Robust constant-velocity fit p(t) = p0 + v t of 2D points; returns
    (coefficients, residual vectors). Outliers are downweighted by Huber
    reweighting with scale sigma."""
    a = np.stack([np.ones_like(times), times], axis=1)
    w = np.ones_like(times)
    coef = None
    for _ in range(iterations):
        coef, *_ = np.linalg.lstsq(a * w[:, None], points * w[:, None], rcond=None)
        resid = points - a @ coef
        rn = np.linalg.norm(resid, axis=1)
        w = 1.0 / np.maximum(1.0, rn / (1.345 * max(sigma, 1e-9)))
    return coef, points - a @ coef


def localize(
    ranges: RangeTrack,
    directions: list[DirectionEstimate],
    receiver: Trajectory,
    process_noise: float = 0.05,
    obs_sigma: float = 1.0,
    resolve_margin: float = 0.2,
    residual_threshold: float = 25.0,
) -> list[LocationEstimate]:
    return localize_scored(
        ranges, directions, receiver, process_noise, obs_sigma, resolve_margin, residual_threshold
    )[0]


def localize_scored(
    ranges: RangeTrack,
    directions: list[DirectionEstimate],
    receiver: Trajectory,
    process_noise: float = 0.05,
    obs_sigma: float = 1.0,
    resolve_margin: float = 0.2,
    residual_threshold: float = 25.0,
) -> tuple[list[LocationEstimate], float]:
    """Target positions from ranges + angles + receiver poses.

    Each window yields two candidates, mirrored about the motion direction.
    Both candidate sets get a robust constant-velocity fit over the whole
    trace and the side whose candidates are more consistent with such a
    track wins; the mirror side only stays self-consistent while the
    receiver heading is fixed, so any heading change separates the sides.
    Near-identical residuals (straight-path symmetry) are reported as
    unresolved rather than chosen arbitrarily. Emitted positions are the
    fitted track sampled at the window times; windows whose candidate sits
    far from the fitted track are withheld.

    Also returns the chosen assignment's bounded mean squared residual
    (computed over every window, before any withholding), a self-consistency
    score that lets a caller compare alternative upstream hypotheses.
    """
    if not directions:
        raise TagLocError("no direction estimates to localize from")
    ds = sorted(directions, key=lambda e: e.time)
    times = np.array([d.time for d in ds])
    drs = np.array([float(ranges.at(t)) for t in times])
    cands = np.empty((2, times.size, 2))
    for i, d in enumerate(ds):
        pos = receiver.at(d.time)[0]
        u = receiver.heading(d.time)[0]
        uperp = np.array([-u[1], u[0]])
        along = np.cos(d.theta) * u
        cands[0, i] = pos + drs[i] * (along + np.sin(d.theta) * uperp)
        cands[1, i] = pos + drs[i] * (along - np.sin(d.theta) * uperp)
    if times.size < 2:
        raise TagLocError("too few direction windows to localize from")

    # per-window candidate choice by alternating fit/assign: a fixed
    # "left/right of heading" labeling is not usable because the correct
    # side flips whenever the receiver heading reverses past the target
    a = np.stack([np.ones_like(times), times], axis=1)

    def fit_assignment(assign: np.ndarray):
        for _ in range(10):
            pts = cands[assign, np.arange(times.size)]
            coef, resid = _cv_fit(times, pts, obs_sigma)
            pred = a @ coef
            d2 = np.linalg.norm(cands - pred[None, :, :], axis=2)
            new = (d2[1] < d2[0]).astype(int)
            if np.array_equal(new, assign):
                break
            assign = new
        rn = np.linalg.norm(cands[assign, np.arange(times.size)] - a @ coef, axis=1)
        # bound single outliers so one bad window cannot decide the side
        score = float(np.mean(np.minimum(rn, 3.0 * obs_sigma) ** 2)) / obs_sigma**2
        return assign, coef, rn, score

    # starting points: every per-segment side combination, where segments
    # are runs of near-constant heading -- after a reversal the same
    # physical side is the other candidate index, so a good start may need
    # different indices per segment
    headings = np.array([receiver.heading(t)[0] for t in times])
    seg = np.zeros(times.size, dtype=int)
    for i in range(1, times.size):
        seg[i] = seg[i - 1] + (headings[i] @ headings[i - 1] < 0)
    n_seg = min(int(seg[-1]) + 1, 6)
    seg = np.minimum(seg, n_seg - 1)
    fits = []
    for combo in range(2**n_seg):
        sides = np.array([(combo >> s) & 1 for s in range(n_seg)])
        fits.append(fit_assignment(sides[seg]))
    best = int(np.argmin([f[3] for f in fits]))
    assign, coef, rn, score = fits[best]
    # the mirror of the chosen assignment is the competing hypothesis
    alt_assign = 1 - assign
    alt_coef, alt_resid = _cv_fit(times, cands[alt_assign, np.arange(times.size)], obs_sigma)
    alt_rn = np.linalg.norm(alt_resid, axis=1)
    alt_score = float(np.mean(np.minimum(alt_rn, 3.0 * obs_sigma) ** 2)) / obs_sigma**2
    worst = max(score, alt_score)
    unresolved = (worst - min(score, alt_score)) / max(worst, 1e-9) < resolve_margin

    fit_best = a @ coef
    fit_alt = a @ alt_coef
    resids_best = rn
    out: list[LocationEstimate] = []
    for i, d in enumerate(ds):
        nis = (resids_best[i] / obs_sigma) ** 2
        if nis > residual_threshold:
            continue  # candidate inconsistent with the motion-model track
        flags = []
        if d.clamped:
            flags.append("clamped")
        if unresolved:
            flags.append("unresolved")
        confidence = float(np.exp(-nis / 8.0))
        if unresolved:
            confidence *= 0.5
        if d.clamped:
            confidence *= 0.8
        out.append(
            LocationEstimate(
                time=d.time,
                position=fit_best[i].copy(),
                alt_position=fit_alt[i].copy(),
                range_used=float(drs[i]),
                direction_used=d.theta,
                confidence=confidence,
                flags=tuple(flags),
            )
        )
    return out, score

"""Super-resolution ToF estimation: Hankel smoothing, noise-subspace MUSIC
pseudospectra, peak extraction, and tightest-cluster direct-path picking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hankel
from scipy.signal import find_peaks

from .errors import TagLocError
from .types import SubcarrierGrid

DEFAULT_DELAY_MAX = 500e-9  # covers 150 m of path length
DEFAULT_DELAY_STEP = 1e-9


def default_delay_grid(
    delay_max: float = DEFAULT_DELAY_MAX, delay_step: float = DEFAULT_DELAY_STEP
) -> np.ndarray:
    return np.arange(0.0, delay_max + delay_step / 2, delay_step)


@dataclass(frozen=True)
class MultipathProfile:
    """MUSIC pseudospectrum over a uniform delay grid."""

    delays: np.ndarray  # seconds, uniform step
    power: np.ndarray  # nonnegative pseudospectrum values
    packet_index: int = -1

    @property
    def step(self) -> float:
        return float(self.delays[1] - self.delays[0])

    def peak_delay(self) -> float:
        return float(self.delays[int(np.argmax(self.power))])


@dataclass(frozen=True)
class ToFEstimate:
    direct_path_tof: float  # seconds
    cluster_members: np.ndarray  # per-packet ToF peaks of the chosen cluster
    cluster_diameter: float  # std of the chosen cluster, seconds
    low_confidence: bool = False


def hankel_smooth(gains: np.ndarray, l: int) -> np.ndarray:
    """l x (K-l+1) Hankel matrix with entry (i, j) = gains[i+j]."""
    gains = np.asarray(gains, dtype=np.complex128)
    k = gains.size
    if not 2 <= l <= k - 1:
        raise TagLocError(f"smoothing size l={l} out of range [2, {k - 1}]")
    return hankel(gains[:l], gains[l - 1 :])


def hankel_stack(frames: np.ndarray, l: int) -> np.ndarray:
    """Horizontally stacked Hankel matrices of several frames (extra snapshots)."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.complex128))
    return np.hstack([hankel_smooth(f, l) for f in frames])


def model_order(singular_values: np.ndarray, threshold: float = 0.05, max_paths: int = 5) -> int:
    """Number of signal-space components: count of sigma_m/sigma_1 > threshold,
    clamped to [1, max_paths]."""
    s = np.asarray(singular_values, dtype=np.float64)
    if s.size == 0 or s[0] <= 0:
        raise TagLocError("degenerate singular values")
    m = int(np.sum(s / s[0] > threshold))
    return int(np.clip(m, 1, min(max_paths, s.size - 1)))


def steering_matrix(grid: SubcarrierGrid, l: int, delays: np.ndarray) -> np.ndarray:
    """s_l(tau) columns: [exp(-j 2 pi f_1 tau), ..., exp(-j 2 pi f_l tau)]."""
    f = grid.frequencies[:l]
    return np.exp(-2j * np.pi * f[:, None] * np.asarray(delays)[None, :])


def music_profile(
    smoothed: np.ndarray,
    grid: SubcarrierGrid,
    delays: np.ndarray,
    order: int | None = None,
    order_threshold: float = 0.05,
    max_paths: int = 5,
    packet_index: int = -1,
    _steering: np.ndarray | None = None,
) -> MultipathProfile:
    """P(tau) = 1 / ||U_n^* s_l(tau)|| with U_n the noise-space singular vectors."""
    smoothed = np.asarray(smoothed, dtype=np.complex128)
    u, s, _ = np.linalg.svd(smoothed, full_matrices=True)
    if s[0] <= 0 or not np.all(np.isfinite(s)):
        raise TagLocError("rank-deficient degenerate input to MUSIC")
    if order is None:
        order = model_order(s, order_threshold, max_paths)
    order = min(order, u.shape[1] - 1)
    un = u[:, order:]
    sm = _steering if _steering is not None else steering_matrix(grid, smoothed.shape[0], delays)
    proj = np.linalg.norm(un.conj().T @ sm, axis=0)
    power = 1.0 / np.maximum(proj, 1e-300)
    return MultipathProfile(delays=np.asarray(delays), power=power, packet_index=packet_index)


@dataclass
class MusicEstimator:
    """Caches the steering matrix for repeated per-frame profiles."""

    grid: SubcarrierGrid
    l: int
    delays: np.ndarray = field(default_factory=default_delay_grid)
    order_threshold: float = 0.05
    max_paths: int = 5

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=np.float64)
        self._steering = steering_matrix(self.grid, self.l, self.delays)

    def profile(self, gains: np.ndarray, packet_index: int = -1, order: int | None = None) -> MultipathProfile:
        return music_profile(
            hankel_smooth(gains, self.l),
            self.grid,
            self.delays,
            order=order,
            order_threshold=self.order_threshold,
            max_paths=self.max_paths,
            packet_index=packet_index,
            _steering=self._steering,
        )

    def profile_of_frames(self, frames: np.ndarray, order: int | None = None) -> MultipathProfile:
        return music_profile(
            hankel_stack(frames, self.l),
            self.grid,
            self.delays,
            order=order,
            order_threshold=self.order_threshold,
            max_paths=self.max_paths,
            _steering=self._steering,
        )


def peak_delays(profile: MultipathProfile, min_rel_height: float = 0.1) -> np.ndarray:
    """Delays of local maxima above min_rel_height of the global maximum."""
    p = profile.power
    height = min_rel_height * float(np.max(p))
    idx, _ = find_peaks(p, height=height)
    # find_peaks misses maxima at the grid edges
    edges = []
    if p.size >= 2 and p[0] >= height and p[0] > p[1]:
        edges.append(0)
    if p.size >= 2 and p[-1] >= height and p[-1] > p[-2]:
        edges.append(p.size - 1)
    idx = np.sort(np.concatenate([idx, np.array(edges, dtype=int)])) if edges else idx
    return profile.delays[idx]


def _kmeans_1d(values: np.ndarray, k: int, restarts: int, rng: np.random.Generator):
    """Seeded 1D k-means; returns (centers, labels) of the best restart."""
    best = None
    uniq = np.unique(values)
    for _ in range(restarts):
        centers = rng.choice(uniq, size=k, replace=False)
        for _ in range(50):
            labels = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
            new = centers.copy()
            for j in range(k):
                sel = values[labels == j]
                if sel.size:
                    new[j] = sel.mean()
            if np.allclose(new, centers):
                break
            centers = new
        labels = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
        inertia = float(np.sum((values - centers[labels]) ** 2))
        if best is None or inertia < best[0]:
            best = (inertia, centers, labels)
    return best[1], best[2]


def direct_path_tof(
    profiles: list[MultipathProfile],
    clusters: int = 5,
    restarts: int = 10,
    seed: int = 0,
    min_rel_height: float = 0.1,
    min_profiles: int = 10,
    min_support: float = 0.5,
    search_window: tuple[float, float] | None = None,
) -> ToFEstimate:
    """Mean of the tightest peak-delay cluster across per-packet profiles.

    The direct path appears in every profile, so only clusters holding peaks
    from at least min_support of the profiles are eligible; this rejects
    spuriously tight singleton clusters from noise peaks. When
    search_window is given, peaks outside [lo, hi] seconds are discarded
    first (unless that leaves too few). Ties between
    equally tight clusters break toward the smaller mean delay. Flags low
    confidence when the chosen cluster's mean exceeds the smallest eligible
    cluster mean by > 2 grid steps.
    """
    if len(profiles) < min_profiles:
        raise TagLocError(f"need >= {min_profiles} profiles, got {len(profiles)}")
    step = profiles[0].step
    peaks = np.concatenate([peak_delays(p, min_rel_height) for p in profiles])
    if search_window is not None:
        lo, hi = search_window
        peaks = peaks[(peaks >= lo) & (peaks <= hi)]
        if peaks.size < max(2, len(profiles) // 3):
            raise TagLocError("too few profile peaks inside the search window")
    if peaks.size == 0:
        raise TagLocError("no profile peaks found")
    k = min(clusters, np.unique(peaks).size)
    rng = np.random.default_rng(seed)
    centers, labels = _kmeans_1d(peaks, k, restarts, rng)
    counts = np.array([np.sum(labels == j) for j in range(k)])
    need = max(2, int(np.ceil(min_support * len(profiles))))
    eligible = counts >= need
    if not np.any(eligible):
        eligible = counts == counts.max()
    stds = np.array(
        [peaks[labels == j].std() if eligible[j] else np.inf for j in range(k)]
    )
    means = np.array(
        [peaks[labels == j].mean() if eligible[j] else np.inf for j in range(k)]
    )
    # tightest eligible cluster; ties toward the smaller mean delay
    order = np.lexsort((means, np.round(stds / (step / 100))))
    chosen = order[0]
    low_confidence = means[chosen] > np.min(means) + 2 * step
    return ToFEstimate(
        direct_path_tof=float(means[chosen]),
        cluster_members=peaks[labels == chosen],
        cluster_diameter=float(stds[chosen]),
        low_confidence=bool(low_confidence),
    )

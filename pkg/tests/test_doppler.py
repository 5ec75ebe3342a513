"""Doppler magnitude (amplitude-only) and sign (virtual array)."""

import numpy as np
import pytest

from tagloc.doppler import (
    DopplerEstimate,
    VirtualArrayConfig,
    doppler_magnitude,
    doppler_sign,
    full_doppler,
    remove_outlier_windows,
)
from tagloc.errors import TagLocError
from tagloc.simulate import Impairments, Reflector, Scenario, Trajectory, simulate
from tagloc.types import SPEED_OF_LIGHT as C
from tagloc.types import CsiTrace


def radial_scenario(grid, speed, duration=6.0, approach=True, reflector=True, seed=0):
    start = 5.0 + speed * duration if approach else 5.0
    vel = [-speed if approach else speed, 0.0]
    refl = [Reflector(position=np.array([15.0, -600.0]), gain=24.0)] if reflector else []
    return Scenario(
        grid=grid, duration=duration,
        receiver_traj=Trajectory.line([start, 0.0], vel, duration),
        target_traj=Trajectory.static([0.0, 0.0], duration),
        static_reflectors=refl,
        impairments=Impairments(), noise_snr_db=20.0, rng_seed=seed,
    )


class TestMagnitude:
    def test_static_world_zero(self, static_trace):
        trace, truth, sc = static_trace
        centers, speeds, fd, det = doppler_magnitude(trace, 1.0, bits=truth.bits)
        assert np.all(speeds[~det] == 0.0)
        assert not det.any()

    def test_common_phase_invariance(self, grid):
        """Amplitude-only pathway: per-packet phase rotations change nothing."""
        sc = radial_scenario(grid, 1.0)
        trace, truth = simulate(sc)
        rng = np.random.default_rng(0)
        rotated = CsiTrace(
            trace.grid, trace.packet_rate, trace.packet_indices, trace.timestamps,
            trace.gains * np.exp(1j * rng.uniform(0, 2 * np.pi, len(trace)))[:, None],
        )
        a = doppler_magnitude(trace, 1.0, bits=truth.bits)
        b = doppler_magnitude(rotated, 1.0, bits=truth.bits)
        assert np.array_equal(a[1], b[1])
        assert np.array_equal(a[3], b[3])

    def test_one_mps_within_resolution(self, grid):
        sc = radial_scenario(grid, 1.0, duration=8.0)
        trace, truth = simulate(sc)
        centers, speeds, fd, det = doppler_magnitude(trace, 1.0, bits=truth.bits)
        assert det.sum() >= 0.8 * det.size
        assert np.median(np.abs(speeds[det] - 1.0)) <= 0.06

    def test_resolution_cells_distinct(self, grid):
        """0.5 and 0.56 m/s land in different spectral cells."""
        est = []
        for v in (0.5, 0.56):
            trace, truth = simulate(radial_scenario(grid, v, duration=8.0, approach=False))
            _, speeds, _, det = doppler_magnitude(trace, 1.0, bits=truth.bits)
            est.append(np.median(speeds[det]))
        assert abs(est[1] - est[0]) > 0.02

    def test_window_too_short(self, static_trace):
        trace, _, _ = static_trace
        with pytest.raises(TagLocError):
            doppler_magnitude(trace, 0.01)


class TestSign:
    def test_mirror_symmetry(self, grid):
        for approach, want in ((True, -1), (False, 1)):
            trace, truth = simulate(radial_scenario(grid, 1.5, approach=approach,
                                                    reflector=False, seed=1))
            _, signs = doppler_sign(trace, VirtualArrayConfig(), 1.0,
                                    valid=truth.bits == 0)
            det = signs != 0
            assert det.any()
            assert np.mean(signs[det] == want) >= 0.9

    def test_spacing_scale_invariance(self, grid):
        trace, truth = simulate(radial_scenario(grid, 1.0, duration=8.0, reflector=False, seed=2))
        valid = truth.bits == 0
        _, s1 = doppler_sign(trace, VirtualArrayConfig(spacing_m=0.025), 1.0, valid=valid)
        _, s2 = doppler_sign(trace, VirtualArrayConfig(spacing_m=0.075), 1.0, valid=valid)
        assert np.sum(s1 != s2) == 0

    def test_config_validation(self):
        with pytest.raises(TagLocError):
            VirtualArrayConfig(window_elements=2).validate()


class TestFullDoppler:
    def test_sign_application(self):
        out = full_doppler(np.array([0.5]), np.array([1.0]), np.array([-1]), 5e9)
        assert out[0].v_r == pytest.approx(-1.0)
        assert out[0].f_d == pytest.approx(1.0 * 5e9 / C)

    def test_vr_never_exceeds_magnitude(self):
        speeds = np.array([0.4, 1.2, 0.8, 2.0])
        signs = np.array([1, 0, -1, 1])
        out = full_doppler(np.arange(4.0), speeds, signs, 5e9)
        assert all(abs(d.v_r) <= speeds.max() for d in out)

    def test_leading_undetermined_withheld(self):
        out = full_doppler(np.arange(4.0), np.ones(4), np.array([0, 0, 1, 1]), 5e9)
        assert [d.time for d in out] == [2.0, 3.0]

    def test_all_undetermined_empty(self):
        out = full_doppler(np.arange(3.0), np.ones(3), np.zeros(3, dtype=int), 5e9)
        assert out == []

    def test_misaligned_rejected(self):
        with pytest.raises(TagLocError, match="not aligned"):
            full_doppler(np.arange(3.0), np.ones(3), np.array([1, 1]), 5e9)

    def test_turnaround_crossing(self, grid):
        """Out-and-back: signed v_r crosses zero near the true turnaround."""
        dur = 16.0
        wp = np.array([[12.0, 0.0], [4.0, 0.0], [12.0, 0.0]])
        rx = Trajectory.waypoints(wp, 1.0, duration=dur)
        sc = Scenario(grid=grid, duration=dur, receiver_traj=rx,
                      target_traj=Trajectory.static([0.0, 0.0], dur),
                      impairments=Impairments(), noise_snr_db=20.0, rng_seed=3)
        trace, truth = simulate(sc)
        centers, speeds, fd, det = doppler_magnitude(trace, 1.0, bits=truth.bits)
        _, signs = doppler_sign(trace, VirtualArrayConfig(), 1.0, valid=truth.bits == 0)
        out = full_doppler(centers, speeds, signs, grid.center_frequency, det)
        vr = np.array([d.v_r for d in out])
        times = np.array([d.time for d in out])
        flips = times[np.flatnonzero(np.diff(np.sign(vr)) != 0)]
        assert flips.size >= 1
        assert min(abs(flips - 8.0)) <= 2.0


def test_remove_outlier_windows():
    v = np.ones(20)
    v[7] = 9.0
    keep = remove_outlier_windows(v)
    assert not keep[7]
    assert keep.sum() >= 18

"""Tag bit decoding: combining, normalization, thresholding, robustness."""

import numpy as np
import pytest

from tagloc.decode import (
    bit_error_rate,
    combine_subcarriers,
    decode_bits,
    decode_trace,
    smooth_normalize,
)
from tagloc.errors import SeparationTooWeak
from tagloc.simulate import Impairments, Scenario, Trajectory, simulate, tag_schedule
from tagloc.types import CsiTrace


def make_trace(grid, n=5, rate=1000.0, gains=None):
    if gains is None:
        gains = np.ones((n, grid.subcarrier_count), dtype=np.complex128)
    return CsiTrace(grid, rate, np.arange(n, dtype=np.uint64), np.arange(n) / rate, gains)


def test_combine_unit_gains(grid):
    t = make_trace(grid, n=3)
    assert np.allclose(combine_subcarriers(t), 64.0)
    t2 = make_trace(grid, n=3, gains=2j * np.ones((3, 64)))
    assert np.allclose(combine_subcarriers(t2), 128.0)


class TestSmoothNormalize:
    def test_constant_maps_to_half(self):
        out = smooth_normalize(np.full(500, 3.7), 1000.0)
        assert np.allclose(out, 0.5)

    def test_square_wave_levels_preserved(self):
        period = 2 * round(1000 / 300)
        sq = (np.arange(2000) % period < period // 2).astype(float)
        out = smooth_normalize(sq, 1000.0)
        interior = out[50:-50]
        hi = interior[sq[50:-50] == 1]
        lo = interior[sq[50:-50] == 0]
        assert hi.mean() > 0.8 and lo.mean() < 0.2

    def test_drift_removed(self):
        period = 2 * round(1000 / 300)
        sq = (np.arange(2000) % period < period // 2).astype(float)
        drift = np.linspace(0, 5, 2000)
        out = smooth_normalize(sq + drift, 1000.0)
        hi = out[50:-50][sq[50:-50] == 1]
        lo = out[50:-50][sq[50:-50] == 0]
        assert hi.min() > lo.max()


class TestDecodeBits:
    def test_constant_input_rejected(self):
        with pytest.raises(SeparationTooWeak):
            decode_bits(np.full(1000, 0.5), 1000.0, 300.0)

    def test_guard_excludes_boundaries(self, static_trace):
        trace, truth, sc = static_trace
        dec = decode_trace(trace, sc.tag_bitrate)
        for b in dec.bit_boundaries:
            lo = max(0, b - 1)
            hi = min(dec.guard.size, b + 2)
            assert dec.guard[lo:hi].all()

    def test_separation_invariant_on_accepted_trace(self, static_trace):
        trace, truth, sc = static_trace
        dec = decode_trace(trace, sc.tag_bitrate)
        assert dec.separation >= 4.0


class TestDecodeTrace:
    def test_scale_invariance(self, static_trace):
        trace, truth, sc = static_trace
        scaled = CsiTrace(trace.grid, trace.packet_rate, trace.packet_indices,
                          trace.timestamps, trace.gains * 37.5)
        a = decode_trace(trace, sc.tag_bitrate)
        b = decode_trace(scaled, sc.tag_bitrate)
        assert np.array_equal(a.bits, b.bits)
        assert np.array_equal(a.symbols, b.symbols)

    def test_zero_ber_at_default_snr(self, static_trace):
        trace, truth, sc = static_trace
        dec = decode_trace(trace, sc.tag_bitrate)
        stream = tag_schedule(sc.tag_bitrate, sc.packet_rate, sc.duration, sc.rng_seed)
        assert bit_error_rate(dec, stream) == 0.0

    def test_plateau_gap_matches_tag_component(self, clean_components):
        trace, truth, ht, hb, sc = clean_components
        dec = decode_trace(trace, sc.tag_bitrate)
        combined = dec.combined
        ones = combined[(truth.bits == 1)]
        zeros = combined[(truth.bits == 0)]
        gap = abs(ones.mean() - zeros.mean())
        # |H_t + H_b| - |H_t| summed over subcarriers; bounded by sum |H_b|
        bound = np.abs(hb[0]).sum()
        assert gap <= bound + 1e-9
        assert gap > 0.25 * bound

    def test_low_snr_raises(self, grid):
        sc = Scenario(grid=grid, duration=4.0,
                      receiver_traj=Trajectory.static([0, 0], 4.0),
                      target_traj=Trajectory.static([8, 2], 4.0),
                      impairments=Impairments(), noise_snr_db=-10.0, rng_seed=0)
        trace, _ = simulate(sc)
        with pytest.raises(SeparationTooWeak):
            decode_trace(trace, sc.tag_bitrate)

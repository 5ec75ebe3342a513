"""Domain-type invariants: subcarrier grids, frames, traces, bit streams."""

import numpy as np
import pytest

from tagloc.errors import TraceFormatError
from tagloc.types import CsiFrame, CsiTrace, SubcarrierGrid, TagBitStream


def make_trace(grid, n=5, rate=1000.0, gains=None):
    ts = np.arange(n) / rate
    if gains is None:
        gains = np.ones((n, grid.subcarrier_count), dtype=np.complex128)
    return CsiTrace(grid, rate, np.arange(n, dtype=np.uint64), ts, gains)


class TestSubcarrierGrid:
    def test_regular_properties(self, grid):
        f = grid.frequencies
        assert f.size == 64
        assert np.all(np.diff(f) > 0)
        sp = np.diff(f)
        assert np.max(np.abs(sp - sp[0])) <= 1e-9 * sp[0]
        assert f[0] >= grid.center_frequency - grid.bandwidth / 2
        assert f[-1] <= grid.center_frequency + grid.bandwidth / 2

    def test_too_few_subcarriers(self):
        with pytest.raises(TraceFormatError):
            SubcarrierGrid.regular(5e9, 40e6, 1)

    def test_non_ascending_rejected(self):
        with pytest.raises(TraceFormatError):
            SubcarrierGrid(5e9, 40e6, np.array([5.0e9, 4.99e9]))

    def test_non_uniform_rejected(self):
        with pytest.raises(TraceFormatError):
            SubcarrierGrid(5e9, 40e6, np.array([4.99e9, 4.995e9, 5.01e9]))

    def test_out_of_band_rejected(self):
        with pytest.raises(TraceFormatError):
            SubcarrierGrid(5e9, 40e6, np.array([4.9e9, 5.1e9]))


class TestCsiFrame:
    def test_non_finite_named(self):
        with pytest.raises(TraceFormatError, match="frame 7"):
            CsiFrame(7, 0.007, np.array([1.0, np.nan]))


class TestCsiTrace:
    def test_basic(self, grid):
        t = make_trace(grid, n=5)
        assert len(t) == 5
        assert t.frame(2).packet_index == 2
        assert t.duration() == pytest.approx(4 / 1000.0)

    def test_non_finite_gain_names_frame(self, grid):
        g = np.ones((5, 64), dtype=np.complex128)
        g[3, 10] = np.inf
        with pytest.raises(TraceFormatError, match="frame 3"):
            make_trace(grid, n=5, gains=g)

    def test_non_monotonic_names_frame(self, grid):
        ts = np.array([0.0, 0.001, 0.0005, 0.003])
        with pytest.raises(TraceFormatError, match="frame 2"):
            CsiTrace(grid, 1000.0, np.arange(4, dtype=np.uint64), ts,
                     np.ones((4, 64), dtype=np.complex128))

    def test_rate_inconsistency_rejected_unless_irregular(self, grid):
        ts = np.array([0.0, 0.001, 0.005, 0.006])
        args = (grid, 1000.0, np.arange(4, dtype=np.uint64), ts,
                np.ones((4, 64), dtype=np.complex128))
        with pytest.raises(TraceFormatError, match="irregular"):
            CsiTrace(*args)
        t = CsiTrace(*args, irregular=True)
        assert t.irregular

    def test_equality_is_bit_exact(self, grid):
        a = make_trace(grid)
        b = make_trace(grid)
        assert a.equals(b)
        g = np.ones((5, 64), dtype=np.complex128)
        g[0, 0] += 1e-15
        assert not a.equals(make_trace(grid, gains=g))


class TestTagBitStream:
    def test_non_binary_rejected(self):
        with pytest.raises(TraceFormatError):
            TagBitStream(bits=np.array([0, 2, 1]), bitrate=300.0)

    def test_short_run_rejected(self):
        with pytest.raises(TraceFormatError, match="run length"):
            TagBitStream(bits=np.array([0, 0, 1, 0, 0]), bitrate=300.0)

    def test_trailing_clipped_run_allowed(self):
        s = TagBitStream(bits=np.array([0, 0, 1, 1, 0]), bitrate=300.0)
        assert s.bits[-1] == 0

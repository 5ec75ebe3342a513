"""Peer-to-peer backscatter-assisted localization from WiFi channel state
information, plus the deterministic channel simulator used as its oracle."""

from .calibrate import (
    PairRecord,
    SeparatedCsi,
    SeparationConfig,
    compensate,
    fit_ramp,
    profile_delay_offset,
    refine_delay,
    remove_cfo,
    separate,
)
from .config import PipelineConfig, load_pipeline_config, load_scenario
from .decode import DecodedSignal, bit_error_rate, combine_subcarriers, decode_bits, decode_trace, smooth_normalize
from .doppler import DopplerEstimate, VirtualArrayConfig, doppler_magnitude, doppler_sign, full_doppler
from .errors import (
    ConfigError,
    FlatProfileError,
    SeparationTooWeak,
    StageError,
    TagLocError,
    TraceFormatError,
)
from .localize import (
    AlignmentResult,
    DirectionEstimate,
    LocationEstimate,
    RangeTrack,
    align_paths,
    estimate_direction,
    estimate_directions,
    fuse_range,
    localize,
)
from .pipeline import PipelineResult, run_pipeline, score_positions
from .simulate import GroundTruth, Impairments, Reflector, Scenario, Trajectory, simulate, tag_schedule
from .spectral import (
    MultipathProfile,
    MusicEstimator,
    ToFEstimate,
    direct_path_tof,
    hankel_smooth,
    model_order,
    music_profile,
)
from .traceio import load_trace, load_truth_records, save_trace, save_truth_records, truth_sidecar_path
from .types import SPEED_OF_LIGHT, CsiFrame, CsiTrace, SubcarrierGrid, TagBitStream

__version__ = "1.0.0"

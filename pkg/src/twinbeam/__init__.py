"""Twin-beam photon-pair simulator and analysis toolkit.

Simulates frames of photon pairs on the accepted strip of a downconversion
cone, detects them on a three-strip intensified camera model, and analyzes
the resulting frame ensembles two ways: the joint photocount distribution
with its per-bin classicality test and count correlation, and the spatial
correlation-area measurement from weighted signal-idler position histograms.
"""

from .config import (
    RunConfig,
    RunControls,
    paper_joint_profile,
    paper_spatial_profile,
    read_config,
    write_config,
)
from .counting import (
    AnalyticJoint,
    CorrelationResult,
    CriterionReport,
    JointHistogram,
    accumulate,
    analytic_joint,
    classicality_bound,
    correlation_coefficient,
    criterion_test,
    difference_map,
    marginals,
    merge,
    total_variation,
)
from .detector import (
    DetectionEvent,
    DetectorParams,
    FrameEvents,
    RasterFrame,
    RegionOfInterest,
    default_rois,
    detect_events,
    process_frame,
    rasterize,
)
from .errors import (
    ConfigError,
    FitConvergenceError,
    FitError,
    FormatError,
    NoPeakError,
    NumericalError,
    TwinbeamError,
    UndefinedCorrelationError,
)
from .frames_io import FrameRecord, FrameWriter, append_frame, read_frames_header, stream_frames
from .pipeline import (
    StripLocalizer,
    accumulate_joint,
    accumulate_spatial,
    generate_records,
    run_in_process,
    simulate_to_file,
)
from .source import PairEvent, SourceParams, sample_frame
from .spatial import (
    CorrelationAccumulator,
    CorrelationAreaReport,
    CrossSectionProfile,
    GaussianFit,
    accumulate_frame,
    correlation_area_report,
    cross_section,
    fit_gaussian,
    merge_accumulators,
)

__version__ = "0.1.0"

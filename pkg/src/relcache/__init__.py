"""Feature-cache forecasting for iterative denoising pipelines.

Output-prediction policies (reuse, linear, Taylor, relational feature
estimation), cache schedulers (fixed interval, input distance, relational
cache scheduling), a toy diffusion-transformer pipeline to drive them, and
offline trace analysis.
"""
from .errors import (
    BisectionFailed,
    FormatError,
    InsufficientData,
    InsufficientHistory,
    InvalidConfig,
    NonUniformSpacing,
    RelCacheError,
    ShapeMismatch,
    SingularFit,
    UndefinedDirection,
    UndefinedRatio,
    ZeroReference,
)
from .features import (
    SampleHistory,
    finite_difference,
    l1_norm,
    l2_norm,
    newton_predict,
    normalize_l2,
    rel_l1_error,
    taylor_series_predict,
)
from .policies import ModuleCache, PolicySpec, compute_s_ratio, predict_output
from .scheduler import SchedulerSpec, SchedulerState, observe_and_decide
from .pipeline import PipelineConfig, build_pipeline, run_sampling
from .trace import Trace, trace_read, trace_write

__version__ = "0.1.0"

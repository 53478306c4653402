"""streamdp: continuous release of real-valued streams under DP and local DP.

A threshold optimizer bounds each reading's contribution, a hierarchical
perturber releases noisy aggregates with consistent pre-generated noise, and
a smoother turns group aggregates into per-reading estimates. A local-DP
variant replaces the server-side stages with client-side square-wave and
hybrid-mechanism reports. A benchmark harness scores everything by the MSE
of random range queries.
"""

from ._accel import BACKEND as ACCEL_BACKEND
from .config import StreamConfig
from .errors import (
    DataError,
    DegenerateParameterError,
    InvalidParameterError,
    QueryError,
    StreamDPError,
)
from .hierarchy import (
    HierarchyPlan,
    NoiseTree,
    Perturber,
    build_noise_tree,
    chunk_noise,
    make_consistent,
    offline_consistency_reference,
    perturb_batch,
    plan_hierarchy,
)
from .ldp import (
    DensityEstimate,
    SwParams,
    hm_perturb,
    hm_worst_case_variance,
    ldp_threshold,
    pm_perturb,
    prune_density,
    sr_perturb,
    sw_estimate,
    sw_perturb,
)
from .mechanisms import (
    CandidateSet,
    SmoothSensParams,
    exp_mechanism,
    laplace_sample,
    smooth_sensitivity_quantile,
)
from .pipeline import (
    PipelineConfig,
    RunResult,
    answer_range_query,
    run_dp_pipeline,
    run_ldp_pipeline,
    run_pipeline,
)
from .rng import RandomSource
from .smoothing import Smoother, SmootherConfig, optimize_s, smooth_batch
from .threshold import (
    PakParams,
    ThresholdDecision,
    em_threshold,
    pak_threshold,
    quality_scores,
    sp_threshold,
    truncate,
)

__version__ = "0.1.0"

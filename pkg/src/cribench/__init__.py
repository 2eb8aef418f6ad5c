"""Toolkit for measuring how prompt compression changes LLM output behavior.

Core surfaces: word-token prompts with weighted instruction segments and
survival probabilities, the first-N-words compression operator, pluggable
model backends (HTTP, replay, synthetic), a resumable trial engine,
censoring-aware statistics, and deployment metrics including the
Compression Robustness Index.
"""

from .backends import (
    CompletionRequest,
    CompletionResponse,
    HttpBackend,
    ReplayBackend,
    SyntheticBackend,
    VerboseCompensationParams,
    complete,
    count_output_tokens,
    make_backend,
    request_digest,
    synthesize_length,
)
from .compression import DEFAULT_RATIOS, RatioSweep, compress_first_n, sweep
from .metrics import BenchmarkOutcome, CriReport, EnergyModel, cri, energy, explosion_ratio, weighted_mixture
from .prompts import (
    BenchmarkProfile,
    Prompt,
    SegmentAnnotation,
    SegmentSpan,
    SurvivalResult,
    load_profile,
    profile_survival,
    retained_count,
    segment_survival,
    tokenize,
    weighted_survival,
)
from .report import load_reference_cells
from .stats import (
    BootstrapCI,
    CellSummary,
    ThresholdFit,
    TobitFit,
    WelchResult,
    bootstrap_bca,
    fit_threshold_model,
    summarize_cell,
    tobit_fit,
    truncated_mean,
    welch_t,
)
from .trials import (
    CellKey,
    ExperimentPlan,
    TrialRecord,
    build_plan,
    group_by_cell,
    load_record_file,
    run,
    verify_determinism,
)

__version__ = "0.1.0"

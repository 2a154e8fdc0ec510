"""Divergence-trajectory toolkit.

Tracks how a language model's next-token predictions for verb argument
structures organize over training: per-checkpoint distribution dumps,
Jensen-Shannon divergence learning curves at the item and class level,
nonparametric onset statistics, noun-trajectory correlations, and a
count-based exemplar baseline for comparison.
"""

from .dist_store import (
    CheckpointIndex,
    DistributionDump,
    DumpError,
    PrefixRecord,
    ValidationReport,
    load_dump,
    load_prefix_table,
    mean_distribution,
    normalize_row,
    validate_dump,
    verb_profile,
    write_dump,
    write_prefix_table,
)
from .divergence import (
    DivergenceGrid,
    GridLabel,
    class_labels,
    grid_from_profiles,
    jsd,
    pairwise_grid,
    read_grid,
    split_in_between,
    write_grid,
)
from .stats import (
    DegenerateSamplesError,
    TTestResult,
    UndefinedCorrelationError,
    UTestResult,
    average_ranks,
    exact_u_counts,
    mann_whitney_one_tailed,
    spearman,
    unpaired_t_test,
)
from .metrics import (
    DEFAULT_ALPHA,
    DEFAULT_BASELINE_WINDOW,
    DEFAULT_DELTA,
    BreakpointComparison,
    BreakpointResult,
    NounCorrelationSummary,
    TrajectorySeries,
    VerbTestRow,
    abstraction_curve,
    breakpoint_detect,
    build_minimal_pairs,
    class_breakpoint_compare,
    class_fraction_curve,
    class_fraction_rows,
    condition_class_metric,
    item_learning_curve,
    minimal_pair_curve,
    noun_trajectory_correlations,
)
from .exemplar import (
    BaselineConfig,
    BaselineCurves,
    BaselineSnapshot,
    TokenStream,
    baseline_divergence_curves,
    default_snapshot_schedule,
    load_default_stopword_ids,
    merge_counts,
    smooth_normalize,
    stream_count,
)
from .corpus import (
    EMBEDDING_VERBS,
    PREPOSITION_BY_CLASS,
    BenchmarkResult,
    FrameFilterResult,
    FramePattern,
    ParsedSentence,
    ParsedToken,
    RcPairResult,
    ReviewItem,
    VerbEntry,
    VerbLexicon,
    filter_frames,
    find_token_matches,
    generate_rc_pairs,
    iter_conllu,
    load_benchmark_pairs,
    load_conllu,
    merge_reviewed,
    read_review_decisions,
    read_review_queue,
    write_review_queue,
)
from .output import (
    read_series_csv,
    validate_output_dir,
    validate_series_csv,
    write_run_manifest,
    write_series_csv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

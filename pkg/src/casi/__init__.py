"""Cluster-count estimation by fusing four independent estimators."""

__version__ = "0.1.0"

from .baselines import (  # noqa: E402
    MethodCurve,
    davies_bouldin,
    dbi_select,
    silhouette_condensed,
    silhouette_full,
    silhouette_select,
    wcss_select,
)
from .bench import BenchConfig, BenchReport, BlobSpec, emit_report, generate_blobs, run_comparison  # noqa: E402
from .dataset import DataError, ZScoreScaler, load_csv, process_in_batches, standardize  # noqa: E402
from .estimators import (  # noqa: E402
    CASI,
    CasiResult,
    FusionConfig,
    GapReport,
    KEstimate,
    compute_ccr,
    compute_coi,
    compute_gap_statistics,
    estimate_ccr_coi,
    estimate_density_based,
    estimate_gap,
    estimate_k,
    estimate_local_structure,
    fuse_estimates,
    select_k_gap,
)
from .kmeans import ClusteringResult, KMeans, KMeansConfig, fit_kmeans  # noqa: E402
from .numerics import count_distances  # noqa: E402

__all__ = [
    "CASI",
    "BenchConfig",
    "BenchReport",
    "BlobSpec",
    "CasiResult",
    "ClusteringResult",
    "DataError",
    "FusionConfig",
    "GapReport",
    "KEstimate",
    "KMeans",
    "KMeansConfig",
    "MethodCurve",
    "ZScoreScaler",
    "compute_ccr",
    "compute_coi",
    "compute_gap_statistics",
    "count_distances",
    "davies_bouldin",
    "dbi_select",
    "emit_report",
    "estimate_ccr_coi",
    "estimate_density_based",
    "estimate_gap",
    "estimate_k",
    "estimate_local_structure",
    "fit_kmeans",
    "fuse_estimates",
    "generate_blobs",
    "load_csv",
    "process_in_batches",
    "run_comparison",
    "select_k_gap",
    "silhouette_condensed",
    "silhouette_full",
    "silhouette_select",
    "standardize",
    "wcss_select",
]

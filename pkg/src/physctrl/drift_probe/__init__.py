"""Fast drift monitoring: single-step probes, SSF / SS-FD, drift rate, SVP tables."""

from .embed import CATEGORIES, EmbeddingProvider, EmbeddingSet, StatsProvider, default_prompts, embed_frame_sets, read_prompts
from .fep import (
    REPORT_COLUMNS,
    DriftPoint,
    DriftSeries,
    ProbeConfig,
    default_provider,
    drift_rate,
    fep_baseline,
    fep_generate,
    probe_embeddings,
    probe_latent,
    read_report,
    ssf_details,
    ssf_score,
    ssfd_score,
    write_report,
)
from .frechet import GaussianStats, frechet_distance, gaussian_fit, trace_sqrt_product
from .svp import METRIC_GROUPS, SvpTable, canonical_metric, svp_ingest

"""Density-valued VAR with latent factors and Granger-predictive networks."""

from .em import DirichletPrior, EmReport, fit_map, fit_mle, log_likelihood
from .factor_var import (
    FactorVarConfig,
    FactorVarFit,
    TransformedPanel,
    build_regressor,
    fit,
    fwl_step,
    pca_step,
)
from .inference import (
    CovarianceEstimate,
    Edge,
    EdgeNetwork,
    by_fdr,
    covariance,
    network_to_dict,
    one_sided_pvalues,
    projected_scores,
    select_edges,
    write_network,
)
from .pipeline import (
    PipelineConfig,
    PipelineError,
    RegionAssignment,
    cluster_regions,
    load_config,
    load_observations,
    run_analysis,
    week_index,
    weekly_densities,
)
from .simulation import (
    DgpParams,
    GroundTruth,
    MetricsRow,
    build_loadings,
    build_v_true,
    generate,
    run_sweep,
    spectral_radius,
    write_metrics_csv,
)
from .spline import SplineBasis, build_basis, eval_density, raw_gram
from .transform import (
    MetricPack,
    TransformConfig,
    build_metric,
    logit_delta,
    metric_inner,
    oplus,
    otimes,
    softmax_delta,
)

__version__ = "0.1.0"

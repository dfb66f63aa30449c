"""Low-rank affinity estimation for bipartite matching data.

Affinities enter a bilinear surplus ``x^T A y``; the observed couples are
modelled as a draw from the entropic optimal transport coupling at ``A``,
and ``A`` is estimated by nuclear-norm penalized maximum likelihood.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .data import (
    ColumnSpec,
    EncodedData,
    SchemaSpec,
    encode_features,
    load_table,
    simulate_market,
)
from .estimator import (
    EstimationResult,
    EstimatorConfig,
    KktReport,
    fit,
    kkt_audit,
    lambda_max,
    svd_soft_threshold,
)
from .likelihood import (
    FeaturePair,
    likelihood_gradient,
    model_cross_cov,
    neg_log_likelihood,
    observed_cross_cov,
)
from .model_selection import CvCurve, CvPlan, cv_evaluate, make_folds, select_lambda
from .ot_core import (
    Coupling,
    DiscreteMarginal,
    IPFPConvergenceError,
    IPFPSettings,
    Potentials,
    SurplusMatrix,
    build_surplus,
    coupling_from,
    ipfp,
    welfare,
    welfare_direct,
)
from .reporting import loadings_report, rank_and_shares

"""sketchcv: control-variate and maximum-likelihood estimation for sketches.

The package covers three layers:

* :mod:`sketchcv.efamily` -- covariance-model algebra: optimal
  control-variate weights and the equality of the control-variate and
  maximum-likelihood variances.
* :mod:`sketchcv.sketch` / :mod:`sketchcv.inner_product` -- feature-hashing
  and random-projection sketches, and six estimators of an inner product
  from a sketch pair with known norms, including the fixed-point iteration
  that converges to the maximum-likelihood estimate.
* :mod:`sketchcv.trace` -- stochastic trace estimation with scalar and
  per-slot control variates, including the per-slot ratio estimator.

:mod:`sketchcv.bench` drives reproducible Monte-Carlo experiments over all of
these; the ``sketchcv`` command line serializes the results.
"""

from .efamily import (
    BivariateNormalParams,
    CovarianceModel,
    CvWeights,
    InvalidParams,
    SingularMatrix,
    SingularSystem,
    bivariate_normal_cov,
    cv_weights,
    cve_variance,
    mle_variance,
    partition,
    reparametrize,
    sigma12_model,
)
from .inner_product import (
    CubicPoly,
    EstimatorResult,
    NotConverged,
    SolverConfig,
    SuffStats,
    baseline,
    classify_roots,
    cv_em,
    cv_emp,
    cv_init,
    mle_cubic,
    mle_newton,
    mle_secant,
)
from .sketch import (
    HashPair,
    InvalidAngle,
    SeededRng,
    SketchPair,
    draw_sketch_pair,
    feature_hash,
    generate_vector_pair,
    hash64,
    random_projection,
    suff_stats,
)
from .trace import (
    ProbeBatch,
    TraceEstimate,
    TraceProblem,
    ZeroDenominator,
    adams_cv,
    bekas,
    bekas_diag,
    diag_cv,
    hutchinson,
    trace_variance_oracles,
)

__version__ = "0.1.0"

__all__ = [
    "BivariateNormalParams",
    "CovarianceModel",
    "CubicPoly",
    "CvWeights",
    "EstimatorResult",
    "HashPair",
    "InvalidAngle",
    "InvalidParams",
    "NotConverged",
    "ProbeBatch",
    "SeededRng",
    "SingularMatrix",
    "SingularSystem",
    "SketchPair",
    "SolverConfig",
    "SuffStats",
    "TraceEstimate",
    "TraceProblem",
    "ZeroDenominator",
    "adams_cv",
    "baseline",
    "bekas",
    "bekas_diag",
    "bivariate_normal_cov",
    "classify_roots",
    "cv_em",
    "cv_emp",
    "cv_init",
    "cv_weights",
    "cve_variance",
    "diag_cv",
    "draw_sketch_pair",
    "feature_hash",
    "generate_vector_pair",
    "hash64",
    "hutchinson",
    "mle_cubic",
    "mle_newton",
    "mle_secant",
    "mle_variance",
    "partition",
    "random_projection",
    "reparametrize",
    "sigma12_model",
    "suff_stats",
    "trace_variance_oracles",
]

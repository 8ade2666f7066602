"""Distributionally robust subspace clustering of variables.

Nodewise regression regularized by a spectral norm (the worst case over a
Wasserstein ball of radius ``delta``), solved by ADMM, feeds a spectral
clustering of the variables.  Baseline clusterers, a data-driven choice of
``delta`` and a cluster-based portfolio backtest are included.
"""

__version__ = "0.1.0"

from .baselines import (
    DissimilarityMatrix,
    LassoConfig,
    acc_cluster,
    cord_dissimilarity,
    kmedoids,
    lasso_cv,
    lasso_nodewise,
    one_minus_rho_squared,
)
from .clustering import SimilarityMatrix, ami, spectral_cluster, symmetrize
from .datamodel import (
    BlockModelSpec,
    CoefficientMatrix,
    CovarianceEstimate,
    Partition,
    StandardizedPanel,
    generate_block_model,
    population_covariance,
    population_nodewise,
    standardize,
)
from .delta import DeltaEstimate, select_delta
from .estimators import (
    ACCClustering,
    ColumnStandardizer,
    DROSubspaceClustering,
    HierarchicalDROACC,
    KMedoidsClustering,
    LassoSubspaceClustering,
    MinVariancePortfolio,
)
from .exceptions import DroClusterError, NumericalError, ValidationError
from .solver import SolverOptions, admm_fit, dro_objective, spectral_prox

__all__ = [
    "ACCClustering", "BlockModelSpec", "CoefficientMatrix", "ColumnStandardizer",
    "CovarianceEstimate", "DROSubspaceClustering", "DeltaEstimate",
    "DissimilarityMatrix", "DroClusterError", "HierarchicalDROACC",
    "KMedoidsClustering", "LassoConfig", "LassoSubspaceClustering",
    "MinVariancePortfolio", "NumericalError", "Partition", "SimilarityMatrix",
    "SolverOptions", "StandardizedPanel", "ValidationError", "acc_cluster",
    "admm_fit", "ami", "cord_dissimilarity", "dro_objective",
    "generate_block_model", "kmedoids", "lasso_cv", "lasso_nodewise",
    "one_minus_rho_squared", "population_covariance", "population_nodewise",
    "select_delta", "spectral_cluster", "spectral_prox", "standardize",
    "symmetrize",
]

"""Assumption-free conditional randomization tests for forced-choice
conjoint experiments, with hierarchical-interaction-lasso test statistics,
AMCE baselines, regularity-assumption tests, and a simulation harness."""

__version__ = "0.1.0"

from .data import (ConjointDataset, CoarseningSpec, FactorSpec, Schema,
                   ValidationError, apply_coarsening, load_dataset,
                   save_dataset)
from .randomization import (RandomizationScheme, ResamplePlan, Restriction,
                            sample_carryover, sample_coarsened,
                            sample_fatigue_permutation, sample_order_swap,
                            sample_x_given_z)
from .encoding import (DesignMatrix, build_carryover_augmented, build_design,
                       build_symmetry_augmented)
from .hiernet import HierNetConfig, HierNetFit, cross_validate
from .hiernet import fit as hiernet_fit
from .glm import (AmceResult, ClusteredOlsFit, amce_test, fit_lasso_logistic,
                  fit_logistic, fit_ols_clustered)
from .statistics import StatisticSpec
from .engine import CrtResult, EngineError, crt_p_value, run_crt, run_validity_suite
from .simulation import (ForcedChoiceDgp, generate, heterogeneous_coefficients,
                         logistic_inflation_study, power_study,
                         variance_decomposition)

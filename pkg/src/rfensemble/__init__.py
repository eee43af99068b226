"""Solver and simulation lab for ensembles of random-feature GLMs.

Solves the self-consistent equations for the asymptotic overlap statistics
of K ridge-regularized generalized linear learners trained on correlated
random features, evaluates the derived observables (test error and its
bias/fluctuation split, disagreement probability, confidence densities), and
cross-validates against finite-size empirical risk minimization.
"""

from .channels import (
    ChannelSpec,
    ConjugateParams,
    OrderParams,
    channel_update,
    channel_update_hinge_closed_form,
    prox_hinge,
    prox_logistic,
    prox_square,
    teacher_dz0,
    teacher_z0,
    training_loss,
)
from .erm_lab import (
    ExperimentResult,
    Overlaps,
    SyntheticDataset,
    TrainedEnsemble,
    empirical_overlaps,
    featurize,
    generate_dataset,
    run_experiment,
    train_logistic,
    train_ridge,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    NumericalError,
    ResourceError,
    RfensembleError,
)
from .observables import (
    EnsembleCovariance,
    classification_error_avg,
    classification_error_bar,
    confidence_density,
    disagreement_probability,
    error_decomposition_classification,
    generic_gen_error,
    majority_vote_error,
    mse_test_error,
)
from .priors import (
    FeatureEnsemble,
    kernel_channel_update,
    kernel_prior_update,
    kernel_ridge_closed_form,
    kernel_ridge_closed_form_derived,
    prior_update_matrix_oracle,
    prior_update_spectral,
    sample_feature_ensemble,
)
from .quadrature import QuadratureRule, QuadratureSet, expect_1d, expect_2d_correlated, gauss_hermite_rule
from .solver import (
    FixedPoint,
    ModelConfig,
    SolveOptions,
    solve_fixed_point,
    solve_kernel_limit,
    warm_options,
)
from .spectrum import (
    ActivationCoeffs,
    SpectralModel,
    activation_coeffs,
    empirical_spectral_model,
    mp_spectral_model,
    spectral_integral,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationCoeffs",
    "ChannelSpec",
    "ConfigError",
    "ConjugateParams",
    "ConvergenceError",
    "DomainError",
    "EnsembleCovariance",
    "ExperimentResult",
    "FeatureEnsemble",
    "FixedPoint",
    "ModelConfig",
    "NumericalError",
    "OrderParams",
    "Overlaps",
    "QuadratureRule",
    "QuadratureSet",
    "ResourceError",
    "RfensembleError",
    "SolveOptions",
    "SpectralModel",
    "SyntheticDataset",
    "TrainedEnsemble",
    "activation_coeffs",
    "channel_update",
    "channel_update_hinge_closed_form",
    "classification_error_avg",
    "classification_error_bar",
    "confidence_density",
    "disagreement_probability",
    "empirical_overlaps",
    "empirical_spectral_model",
    "error_decomposition_classification",
    "expect_1d",
    "expect_2d_correlated",
    "featurize",
    "gauss_hermite_rule",
    "generate_dataset",
    "generic_gen_error",
    "kernel_channel_update",
    "kernel_prior_update",
    "kernel_ridge_closed_form",
    "kernel_ridge_closed_form_derived",
    "majority_vote_error",
    "mp_spectral_model",
    "mse_test_error",
    "prior_update_matrix_oracle",
    "prior_update_spectral",
    "prox_hinge",
    "prox_logistic",
    "prox_square",
    "run_experiment",
    "sample_feature_ensemble",
    "solve_fixed_point",
    "solve_kernel_limit",
    "spectral_integral",
    "teacher_dz0",
    "teacher_z0",
    "train_logistic",
    "train_ridge",
    "training_loss",
    "warm_options",
]

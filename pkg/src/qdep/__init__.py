"""Kernel-based quadratic dependence: measure, estimator, test, Monte Carlo lab."""

__version__ = "0.1.0"

from .errors import (
    DegenerateNullError,
    GapZeroError,
    GridTooCoarseError,
    QdepError,
    SampleTooSmallError,
    TruncationTooTightError,
    ZeroVarianceError,
)
from .kernels import (
    FAMILIES,
    KernelSpec,
    eval_fourier,
    eval_fourier_scaled,
    eval_k2,
    eval_k2_derivative,
    kernel_mass,
    l2_norm_squared,
)
from .estimator import (
    QEstimate,
    QuadratureSettings,
    Sample,
    ScaleFactors,
    estimate_q,
    estimate_q_cf,
    pi_hat_joint,
    pi_hat_marginal,
    q_gradient,
    scale_factors,
    user_scale_factors,
)
from .asymptotics import (
    GammaChiSquare,
    NullApprox,
    Permutation,
    TestResult,
    UStatDecomposition,
    VarianceExpansion,
    asymptotic_power,
    gamma_chi2_cdf,
    gamma_chi2_quantile,
    gamma_chi2_sf,
    null_moments,
    power_lower_bound,
    run_test,
    unbiased_q,
    ustat_decompose,
    variance_expansion,
)
from .oracle import (
    DensityPair,
    DiscreteJoint,
    bivariate_gaussian_density_limit,
    bivariate_gaussian_q,
    density_limit_q,
    exact_q_discrete,
    naive_q,
)
from .simlab import (
    BivariateGaussian,
    CopyPlusNoise,
    DiscreteJointSampler,
    NullLawResult,
    ProductOfMarginals,
    RotatedUniform,
    Scenario,
    SweepPlan,
    SweepResult,
    compare_calibrations,
    estimate_null_law,
    fit_loglog_slope,
    generate,
    monotone_within_bands,
    run_sweep,
)

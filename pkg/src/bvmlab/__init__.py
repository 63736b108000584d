"""Finite-sample Bernstein-von Mises diagnostics for quasi-likelihood models."""

from .bracketing import (BracketErrors, ErrorBudget, RestrictedMgfBounds,
                         TailMassRecord, UpperFunctionReport, bracket_spread,
                         error_budget, estimate_bracket_errors,
                         locality_exponent, posterior_tail_bound,
                         restricted_gauss_mgf_bounds, restricted_moment_bound,
                         tail_mass_check, upper_function_audit)
from .chisq import chi2_cdf, chi2_quantile, chi2_sf, noncentral_chi2_cdf
from .conditions import (AdmissibleRd, ConditionProfile, ExpMomentResult,
                         IidRateSummary, admissible_rd, audit_conditions,
                         estimate_delta_profile, estimate_identification_profile,
                         estimate_omega_profile, exp_moment_check,
                         gaussian_prior_check, iid_rate_summary,
                         prior_regularity_check)
from .credible import (CoverageResult, CredibleSet, SandwichSpec,
                       build_credible_set, coverage_mc, oracle_set,
                       plugin_fisher_set, posterior_mass, posterior_moment_set,
                       sandwich_coverage, sandwich_matrix, set_membership)
from .errors import (BvmLabError, ConfigError, DomainViolation, SamplingError,
                     SpdFactorizationError, UnsupportedCapability)
from .geometry import (BracketPair, LocalGeometry, MleResult, ScoreState,
                       bracket_pair, bracket_quadratic, geometry_from_matrices,
                       identifiability_bound, info_matrices, local_geometry,
                       mle_expansion_gap, score_state, solve_mle,
                       solve_theta_star)
from .metrics import (BvmReport, ConcentrationRecord, GaussCompare,
                      SandwichRecord, bvm_report, cov_discrepancy,
                      default_probe_sets, gaussian_kl_tv, mean_discrepancy,
                      mgf_discrepancy, prob_sandwich_check, random_lambda_set,
                      shell_concentration_check)
from .models import (BinaryProcess, CountProcess, DatasetHandle, GaussianLinearModel,
                     GaussianMeanModel, GaussianNoise, LogisticModel,
                     PoissonModel, QuasiModel, StudentTNoise, LocationProcess,
                     mc_expected_loglik)
from .posterior import (ChainConfig, ExactGaussianPosterior, PosteriorSample,
                        PosteriorSummary, Prior, SetSpec, dump_draws,
                        exact_gaussian_posterior, ess_per_coordinate,
                        flat_prior_propriety_probe, posterior_log_mgf,
                        posterior_moments, rwm_sample, set_probability,
                        standard_gaussian_probability)
from .rng import RngStream
from .shells import ShellPlan, sphere_directions

__version__ = "0.1.0"

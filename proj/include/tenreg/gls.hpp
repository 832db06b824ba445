#pragma once

#include "tenreg/als.hpp"
#include "tenreg/rng.hpp"

namespace tenreg {

/// Separable noise model: the vectorized error covariance is
/// tau2 * Sigma_K (x) ... (x) Sigma_1. Replication modes carry a fixed
/// identity. Free Sigmas are kept at trace(Sigma_k) = m_k, with absorbed
/// scale pushed into tau2.
struct SeparableCovariance {
  std::vector<FactorMatrix> sigmas;
  double tau2 = 1.0;

  int order() const { return static_cast<int>(sigmas.size()); }
  void validate() const;

  /// Identity covariances for the given mode dims, replication mode fixed.
  static SeparableCovariance identity(const std::vector<Index>& dims,
                                      int replication_mode);
};

/// Symmetric square root and inverse square root via eigendecomposition.
/// Errors if the matrix is not positive definite.
Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& spd);
Eigen::MatrixXd inv_sqrt(const Eigen::MatrixXd& spd);

struct GlsOptions {
  double tol = 1e-8;  // relative change in the objective
  int max_sweeps = 500;
  std::uint64_t seed = 0;
  double ridge = 1e-8;
  FitOptions::Init init = FitOptions::Init::random;
  const KroneckerFactorSet* init_factors = nullptr;
};

struct GlsReport {
  KroneckerFactorSet factors;
  SeparableCovariance covariance;
  std::vector<double> nll_trace;  // negative log-likelihood per sweep
  int sweeps = 0;
  bool converged = false;
};

/// Exact generalized least squares update of factor `mode`: both sides are
/// standardized along the other modes by Sigma^{-1/2} before the block
/// solve. With identity covariances this is conditional_minimizer.
void gls_conditional_update(const RegressionDataset& data,
                            KroneckerFactorSet& factors,
                            const SeparableCovariance& cov, int mode,
                            double ridge);

/// Conditional maximum likelihood update of Sigma_mode from the current
/// residual, standardized along the other modes and divided by tau. A rank
/// deficient cross product gets a ridge (warning on stderr). The result is
/// trace-normalized with the scale pushed into tau2.
void sigma_mle_update(const RegressionDataset& data,
                      const KroneckerFactorSet& factors,
                      SeparableCovariance& cov, int mode, double ridge);

double negative_log_likelihood(const RegressionDataset& data,
                               const KroneckerFactorSet& factors,
                               const SeparableCovariance& cov);

/// Alternates factor updates, covariance updates, and the tau2 maximum
/// likelihood step. The NLL trace is nonincreasing up to roundoff.
GlsReport fit_gls(const RegressionDataset& data, const GlsOptions& opts = {});

/// Draws one tensor with the given separable covariance (mean zero).
DenseTensor sample_array_normal(const std::vector<Index>& dims,
                                const SeparableCovariance& cov, Rng& rng);

/// Correlation of the rows of the mode-k unfolding of a residual tensor,
/// with its eigendecomposition (descending). Zero-variance rows get zero
/// correlations (diagonal stays 1) and a warning.
struct ModeCorrelationDiagnostic {
  Eigen::MatrixXd correlation;
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;  // column j pairs with eigenvalues[j]
};
ModeCorrelationDiagnostic mode_residual_correlation(const DenseTensor& residual,
                                                    int mode);

}  // namespace tenreg

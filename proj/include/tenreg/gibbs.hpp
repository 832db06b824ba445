#pragma once

#include <optional>
#include <string>

#include "tenreg/gls.hpp"

namespace tenreg {

/// Conjugate prior for one mode's regression: B_k | Sigma_k is matrix
/// normal around `mean`, Sigma_k is inverse-Wishart with the given scale
/// and degrees of freedom (parameterized so E[Sigma^-1] = dof * scale^-1).
struct ModePrior {
  Eigen::MatrixXd mean;   // m_k x p_k
  Eigen::MatrixXd scale;  // m_k x m_k, SPD
  double dof = 0.0;
};

/// Mode priors default to mean 0, scale I, dof m_k + 1 when unset.
/// eta0/tau02 parameterize the inverse-gamma prior on tau2.
struct PriorSpec {
  std::vector<std::optional<ModePrior>> modes;
  double eta0 = 1.0;
  double tau02 = 1.0;
};
ModePrior default_mode_prior(Index m_k, Index p_k);

struct GibbsOptions {
  int iterations = 5500;  // total, burn-in included
  int burnin = 500;
  int chains = 4;
  int thin = 1;
  std::uint64_t seed = 0;
  bool warm_start = true;  // chain 0 starts at the least squares fit
  int threads = 0;
  std::string store_dir;  // when set, records stream to disk as they appear
};

struct GibbsState {
  KroneckerFactorSet factors;
  SeparableCovariance covariance;
};

/// Saved draws, one vector per chain (post burn-in, thinned, normalized).
struct ChainStore {
  std::vector<std::vector<GibbsState>> draws;
  int iterations = 0;
  int burnin = 0;
  int thin = 1;
  std::uint64_t seed = 0;
};

/// Sigma with E[Sigma^-1] = dof * scale_inv; Bartlett construction.
Eigen::MatrixXd sample_inverse_wishart(const Eigen::MatrixXd& scale_inv,
                                       double dof, Rng& rng);

/// mean + RowCov^{1/2} Z ColCov^{1/2} with Z i.i.d. standard normal.
Eigen::MatrixXd sample_matrix_normal(const Eigen::MatrixXd& mean,
                                     const Eigen::MatrixXd& row_cov,
                                     const Eigen::MatrixXd& col_cov, Rng& rng);

/// Inverse-gamma draw for the global scale given the fully standardized
/// residual norm and the total element count.
double sample_tau2(double resid_norm_sq, Index total_elems, double eta0,
                   double tau02, Rng& rng);

/// Posterior pieces for one standardized mode regression y = B x + E.
/// sn is built without ever forming an n x n inverse:
/// sn = S0 + y y^T - (y x^T) (I_p + x x^T)^{-1} (x y^T).
struct ModePosterior {
  Eigen::MatrixXd sn;       // inverse-Wishart scale
  double dof = 0.0;         // nu0 + n
  Eigen::MatrixXd mn;       // posterior mean of B
  Eigen::MatrixXd col_cov;  // (I_p + x x^T)^{-1}
};
ModePosterior mode_posterior(const Eigen::MatrixXd& y, const Eigen::MatrixXd& x,
                             const ModePrior& prior);

/// Gauge fix applied to every stored draw: factors to equal Frobenius norm
/// with signs canonicalized (largest-magnitude entry of each free factor
/// made positive, flips absorbed into the last free factor; no-op for a
/// single free mode), covariances to trace m_k with scale pushed into
/// tau2. Chain products are unchanged.
void normalize_factors(GibbsState& state);

ChainStore gibbs_run(const RegressionDataset& data, const PriorSpec& prior,
                     const GibbsOptions& opts);

ChainStore load_chain_store(const std::string& dir);

/// Per-entry posterior summaries of the factor matrices, pooled across
/// chains. flag encodes significance: +-2 when the one-sided 99% rule
/// fires (q01 > 0 or q99 < 0), else +-1 under the two-sided 95% rule,
/// else 0. chain_sd is the spread of per-chain means for that entry.
struct SummaryEntry {
  int mode = 0;  // 1-based free mode index
  Index row = 0, col = 0;  // 1-based
  double mean = 0, sd = 0, q01 = 0, q025 = 0, q975 = 0, q99 = 0;
  int flag = 0;
  double chain_sd = 0;
};
struct PosteriorSummary {
  std::vector<SummaryEntry> entries;
  double max_chain_sd = 0.0;
};
PosteriorSummary summarize(const ChainStore& store);

}  // namespace tenreg

#pragma once

#include <cstdint>
#include <vector>

#include "tenreg/dataset.hpp"

namespace tenreg {

struct FitOptions {
  double tol = 1e-8;   // relative RSS change that declares convergence
  int max_sweeps = 500;
  std::uint64_t seed = 0;
  double ridge = 1e-8;  // Gram ridge, scaled by trace/dim; 0 disables
  enum class Init { random, identity, given } init = Init::random;
  const KroneckerFactorSet* init_factors = nullptr;  // used when init==given
};

struct FitReport {
  KroneckerFactorSet factors;
  std::vector<double> objective_trace;  // RSS at init, then after each sweep
  int sweeps = 0;
  bool converged = false;
};

/// Exact block update of factor `mode` holding the others fixed. Solves the
/// (masked) least squares problem for that mode, so the RSS never goes up.
/// With ridge == 0 a singular Gram matrix is an error naming the mode.
void conditional_minimizer(const RegressionDataset& data,
                           KroneckerFactorSet& factors, int mode,
                           double ridge);

/// Starting factors for the alternating fitters under the given policy:
/// random unit-norm, rectangular identity, or a caller-provided set.
KroneckerFactorSet make_initial_factors(const RegressionDataset& data,
                                        const FitOptions& opts);

/// Block coordinate descent over the free modes. Factors come back
/// normalized to equal Frobenius norm (see normalize_scale).
FitReport fit_als(const RegressionDataset& data, const FitOptions& opts = {});

DenseTensor predict(const KroneckerFactorSet& factors, const DenseTensor& x);
DenseTensor residual_tensor(const RegressionDataset& data,
                            const KroneckerFactorSet& factors);
/// Masked entries contribute zero.
double rss(const RegressionDataset& data, const KroneckerFactorSet& factors);

/// Rescales free factors to a common Frobenius norm, leaving the implied
/// chain (and all predictions) unchanged. Errors on a zero-norm factor.
void normalize_scale(KroneckerFactorSet& factors);

/// Row-plus-column effects model for square relational slices:
/// yhat[i1,i2,t] = (A r_t)[i1] + (B c_t)[i2] with r_t, c_t the row and
/// column sums of X_t. Solved by least squares with the minimum-norm rule;
/// the level ambiguity is fixed by shifting sum(B) to zero.
struct AdditiveFit {
  Eigen::MatrixXd row_effects;  // A
  Eigen::MatrixXd col_effects;  // B
};
AdditiveFit fit_additive(const RegressionDataset& data);
DenseTensor predict_additive(const AdditiveFit& fit, const DenseTensor& x);

/// Independent bilinear forms, one per cell of the relational matrix:
/// yhat[i1,i2,t] = c^T X_t d. Fully masked cells are skipped. Fits come
/// back in column-major cell order (row varies fastest).
struct DyadFit {
  Index row = 0, col = 0;
  Eigen::VectorXd c, d;
  double rss = 0.0;
  int sweeps = 0;
  bool converged = false;
  bool skipped = false;
};
std::vector<DyadFit> fit_rank_one_per_dyad(const RegressionDataset& data,
                                           const FitOptions& opts = {},
                                           int threads = 0);
DenseTensor predict_rank_one(const std::vector<DyadFit>& fits,
                             const DenseTensor& x);

}  // namespace tenreg

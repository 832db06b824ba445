#pragma once

#include <optional>

#include "tenreg/tensor.hpp"

namespace tenreg {

/// Predictor/response pair stacked along a trailing replication mode:
/// X is p_1 x ... x p_K x n, Y is m_1 x ... x m_K x n. The optional mask
/// matches Y; entries with mask 0 (undefined cells, e.g. self-relations)
/// are excluded from every objective and score.
struct RegressionDataset {
  DenseTensor X;
  DenseTensor Y;
  std::optional<DenseTensor> mask;

  int order() const { return Y.order(); }
  int replication_mode() const { return Y.order() - 1; }
  Index num_replicates() const { return Y.dim(Y.order() - 1); }

  void validate() const;
};

/// Subset of replicates, in the order given. Used for train/test splits.
RegressionDataset slice_replicates(const RegressionDataset& data,
                                   std::span<const Index> keep);

/// Vectorized second moments across replicates: sxx = sum x x^T / n and
/// sxy = sum x y^T / n with x = vec(X_r), y = vec(Y_r). Masked response
/// entries contribute zero. Materializes (prod p_k)^2 numbers, so this is
/// for small problems and diagnostics.
struct CrossMomentPair {
  Eigen::MatrixXd sxx;
  Eigen::MatrixXd sxy;
};
CrossMomentPair cross_moments(const RegressionDataset& data);

}  // namespace tenreg

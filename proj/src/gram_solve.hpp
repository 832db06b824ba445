#pragma once

// Gram assembly and solve helpers shared by the alternating fitters. Gram
// matrices in these code paths only carry a valid lower triangle; LDLT reads
// just that part.

#include <string>

#include <Eigen/Dense>

#include "tenreg/errors.hpp"

namespace tenreg::detail {

inline void apply_ridge(Eigen::MatrixXd& gram, double ridge) {
  if (ridge <= 0) return;
  const double tr = gram.trace();
  const double eps =
      tr > 0 ? ridge * tr / static_cast<double>(gram.rows()) : ridge;
  gram.diagonal().array() += eps;
}

inline Eigen::LDLT<Eigen::MatrixXd> factor_gram(const Eigen::MatrixXd& gram,
                                                const std::string& label) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
  const double dmax = d.size() ? d.maxCoeff() : 0.0;
  if (ldlt.info() != Eigen::Success || !(dmax > 0) ||
      d.minCoeff() <= 1e-12 * dmax) {
    throw NumericError(label +
                       ": singular Gram matrix; add a ridge or drop "
                       "collinear predictors");
  }
  return ldlt;
}

}  // namespace tenreg::detail

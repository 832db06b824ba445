#pragma once

// Standardization helpers shared by the generalized least squares fitter
// and the posterior sampler.

#include <vector>

#include "tenreg/dataset.hpp"
#include "tenreg/gls.hpp"

namespace tenreg::detail {

// Y with masked entries zeroed; masked cells are treated as zeros
// throughout the generalized fits and the sampler.
inline DenseTensor zero_filled_response(const RegressionDataset& data) {
  DenseTensor y = data.Y;
  if (data.mask) {
    const DenseTensor& m = *data.mask;
    for (Index i = 0; i < y.size(); ++i)
      if (m[i] == 0.0) y[i] = 0.0;
  }
  return y;
}

// Sigma^{-1/2} for every free mode except `skip` (pass -1 to standardize
// all of them), as a factor set ready for tucker_product.
inline KroneckerFactorSet standardizers(const SeparableCovariance& cov,
                                        const std::vector<Index>& dims,
                                        int skip) {
  KroneckerFactorSet f;
  f.factors.reserve(cov.sigmas.size());
  for (int k = 0; k < cov.order(); ++k) {
    if (k == skip || cov.sigmas[k].fixed_identity)
      f.factors.push_back(FactorMatrix::identity(dims[k]));
    else
      f.factors.push_back(
          FactorMatrix::dense(inv_sqrt(cov.sigmas[k].entries)));
  }
  return f;
}

}  // namespace tenreg::detail

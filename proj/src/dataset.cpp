#include "tenreg/dataset.hpp"

#include <string>

#include "tenreg/errors.hpp"

namespace tenreg {

void RegressionDataset::validate() const {
  if (X.order() < 2 || Y.order() < 2)
    throw InvalidError("dataset needs at least one free mode plus replication");
  if (X.order() != Y.order())
    throw InvalidError("X and Y must have the same order");
  const int rep = replication_mode();
  if (X.dim(rep) != Y.dim(rep))
    throw InvalidError("X and Y disagree on the replicate count");
  if (Y.dim(rep) < 1) throw InvalidError("dataset has no replicates");
  if (mask) {
    if (mask->dims() != Y.dims())
      throw InvalidError("mask dims must match Y");
    for (Index i = 0; i < mask->size(); ++i) {
      const double v = (*mask)[i];
      if (v != 0.0 && v != 1.0)
        throw InvalidError("mask entries must be 0 or 1");
    }
  }
}

RegressionDataset slice_replicates(const RegressionDataset& data,
                                   std::span<const Index> keep) {
  const Index n = data.num_replicates();
  const Index xblock = data.X.size() / n;
  const Index yblock = data.Y.size() / n;

  std::vector<Index> xdims = data.X.dims();
  std::vector<Index> ydims = data.Y.dims();
  xdims.back() = static_cast<Index>(keep.size());
  ydims.back() = static_cast<Index>(keep.size());
  RegressionDataset out;
  out.X = DenseTensor(xdims);
  out.Y = DenseTensor(ydims);
  if (data.mask) out.mask = DenseTensor(ydims);

  for (std::size_t j = 0; j < keep.size(); ++j) {
    const Index r = keep[j];
    if (r < 0 || r >= n) throw InvalidError("replicate index out of range");
    std::copy_n(data.X.data() + xblock * r, xblock,
                out.X.data() + xblock * static_cast<Index>(j));
    std::copy_n(data.Y.data() + yblock * r, yblock,
                out.Y.data() + yblock * static_cast<Index>(j));
    if (data.mask)
      std::copy_n(data.mask->data() + yblock * r, yblock,
                  out.mask->data() + yblock * static_cast<Index>(j));
  }
  return out;
}

CrossMomentPair cross_moments(const RegressionDataset& data) {
  data.validate();
  const Index n = data.num_replicates();
  const Index px = data.X.size() / n;
  const Index my = data.Y.size() / n;
  CrossMomentPair out;
  out.sxx = Eigen::MatrixXd::Zero(px, px);
  out.sxy = Eigen::MatrixXd::Zero(px, my);
  Eigen::VectorXd y(my);
  for (Index r = 0; r < n; ++r) {
    Eigen::Map<const Eigen::VectorXd> x(data.X.data() + px * r, px);
    Eigen::Map<const Eigen::VectorXd> yraw(data.Y.data() + my * r, my);
    if (data.mask) {
      Eigen::Map<const Eigen::VectorXd> m(data.mask->data() + my * r, my);
      y = yraw.cwiseProduct(m);
    } else {
      y = yraw;
    }
    out.sxx.selfadjointView<Eigen::Lower>().rankUpdate(x);
    out.sxy.noalias() += x * y.transpose();
  }
  out.sxx = out.sxx.selfadjointView<Eigen::Lower>();
  out.sxx /= static_cast<double>(n);
  out.sxy /= static_cast<double>(n);
  return out;
}

}  // namespace tenreg

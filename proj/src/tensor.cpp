#include "tenreg/tensor.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "tenreg/errors.hpp"

namespace tenreg {

namespace {

Index checked_product(const std::vector<Index>& dims) {
  Index n = 1;
  for (Index d : dims) {
    if (d < 1) throw InvalidError("tensor dims must be positive");
    if (n > std::numeric_limits<Index>::max() / d)
      throw InvalidError("tensor size overflows");
    n *= d;
  }
  return n;
}

void check_mode(const DenseTensor& t, int mode) {
  if (mode < 0 || mode >= t.order())
    throw InvalidError("mode " + std::to_string(mode) +
                       " out of range for order " + std::to_string(t.order()));
}

// Sizes of the index blocks below and above the given mode. Everything in
// this file reduces to the (pre, dims[mode], post) view of the layout.
void split_at_mode(const std::vector<Index>& dims, int mode, Index* pre,
                   Index* post) {
  *pre = 1;
  *post = 1;
  for (int k = 0; k < static_cast<int>(dims.size()); ++k) {
    if (k < mode) *pre *= dims[k];
    if (k > mode) *post *= dims[k];
  }
}

}  // namespace

DenseTensor::DenseTensor(std::vector<Index> dims)
    : dims_(std::move(dims)), data_(checked_product(dims_), 0.0) {}

DenseTensor::DenseTensor(std::vector<Index> dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (checked_product(dims_) != static_cast<Index>(data_.size()))
    throw InvalidError("tensor data length does not match dims");
}

Index DenseTensor::dim(int mode) const {
  check_mode(*this, mode);
  return dims_[mode];
}

double DenseTensor::at(std::span<const Index> idx) const {
  return data_[flat_offset(dims_, idx)];
}

double& DenseTensor::at(std::span<const Index> idx) {
  return data_[flat_offset(dims_, idx)];
}

bool DenseTensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Index flat_offset(std::span<const Index> dims, std::span<const Index> idx) {
  if (dims.size() != idx.size())
    throw InvalidError("index order does not match tensor order");
  Index off = 0, stride = 1;
  for (size_t k = 0; k < dims.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= dims[k]) throw InvalidError("index out of range");
    off += idx[k] * stride;
    stride *= dims[k];
  }
  return off;
}

Eigen::Map<const Eigen::VectorXd> vec_view(const DenseTensor& t) {
  return {t.data(), t.size()};
}

Eigen::MatrixXd matricize(const DenseTensor& t, int mode) {
  check_mode(t, mode);
  Index pre, post;
  split_at_mode(t.dims(), mode, &pre, &post);
  const Index m = t.dims()[mode];
  Eigen::MatrixXd out(m, pre * post);
  const double* src = t.data();
  for (Index q = 0; q < post; ++q)
    for (Index j = 0; j < m; ++j)
      for (Index p = 0; p < pre; ++p)
        out(j, p + pre * q) = src[p + pre * (j + m * q)];
  return out;
}

DenseTensor unmatricize(const Eigen::MatrixXd& m, int mode,
                        std::vector<Index> dims) {
  if (mode < 0 || mode >= static_cast<int>(dims.size()))
    throw InvalidError("unmatricize: mode out of range");
  Index pre, post;
  split_at_mode(dims, mode, &pre, &post);
  const Index mk = dims[mode];
  if (m.rows() != mk || m.cols() != pre * post)
    throw InvalidError("unmatricize: matrix shape does not match dims");
  DenseTensor out(std::move(dims));
  double* dst = out.data();
  for (Index q = 0; q < post; ++q)
    for (Index j = 0; j < mk; ++j)
      for (Index p = 0; p < pre; ++p)
        dst[p + pre * (j + mk * q)] = m(j, p + pre * q);
  return out;
}

Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

DenseTensor mode_multiply(const DenseTensor& t, const Eigen::MatrixXd& b,
                          int mode) {
  check_mode(t, mode);
  const Index m = t.dims()[mode];
  if (b.cols() != m)
    throw InvalidError("mode_multiply: factor has " + std::to_string(b.cols()) +
                       " cols, mode " + std::to_string(mode) + " has size " +
                       std::to_string(m));
  Index pre, post;
  split_at_mode(t.dims(), mode, &pre, &post);
  std::vector<Index> out_dims = t.dims();
  out_dims[mode] = b.rows();
  DenseTensor out(out_dims);
  // Per trailing block this is a plain (pre x m) * (m x rows) product, so
  // the whole contraction runs as GEMMs on contiguous memory.
  for (Index q = 0; q < post; ++q) {
    Eigen::Map<const Eigen::MatrixXd> in(t.data() + pre * m * q, pre, m);
    Eigen::Map<Eigen::MatrixXd> dst(out.data() + pre * b.rows() * q, pre,
                                    b.rows());
    dst.noalias() = in * b.transpose();
  }
  return out;
}

double frobenius_norm_sq(const DenseTensor& t) {
  double s = 0;
  for (Index i = 0; i < t.size(); ++i) s += t[i] * t[i];
  return s;
}

FactorMatrix FactorMatrix::identity(Index dim) {
  FactorMatrix f;
  f.fixed_identity = true;
  f.identity_dim = dim;
  return f;
}

FactorMatrix FactorMatrix::dense(Eigen::MatrixXd m) {
  FactorMatrix f;
  f.entries = std::move(m);
  return f;
}

Eigen::MatrixXd FactorMatrix::matrix() const {
  if (fixed_identity) return Eigen::MatrixXd::Identity(identity_dim, identity_dim);
  return entries;
}

std::vector<int> KroneckerFactorSet::free_modes() const {
  std::vector<int> out;
  for (int k = 0; k < order(); ++k)
    if (!factors[k].fixed_identity) out.push_back(k);
  return out;
}

Eigen::MatrixXd KroneckerFactorSet::chain() const {
  Eigen::MatrixXd c = Eigen::MatrixXd::Ones(1, 1);
  for (const auto& f : factors) c = kronecker(f.matrix(), c);
  return c;
}

DenseTensor tucker_product(const DenseTensor& t, const KroneckerFactorSet& f) {
  if (f.order() != t.order())
    throw InvalidError("tucker_product: " + std::to_string(f.order()) +
                       " factors for an order-" + std::to_string(t.order()) +
                       " tensor");
  DenseTensor cur = t;
  for (int k = 0; k < f.order(); ++k) {
    if (f.factors[k].fixed_identity) continue;  // mode passes through
    cur = mode_multiply(cur, f.factors[k].entries, k);
  }
  return cur;
}

}  // namespace tenreg

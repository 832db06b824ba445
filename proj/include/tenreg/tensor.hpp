#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace tenreg {

using Index = std::int64_t;

/// Dense multiway array. Entries are stored in generalized column-major
/// order: the first mode varies fastest, so for dims (m1,...,mK) the entry
/// (i1,...,iK) sits at flat offset i1 + i2*m1 + i3*m1*m2 + ...
class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(std::vector<Index> dims);  // zero filled
  DenseTensor(std::vector<Index> dims, std::vector<double> data);

  int order() const { return static_cast<int>(dims_.size()); }
  Index dim(int mode) const;
  const std::vector<Index>& dims() const { return dims_; }
  Index size() const { return static_cast<Index>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double operator[](Index flat) const { return data_[flat]; }
  double& operator[](Index flat) { return data_[flat]; }

  double at(std::span<const Index> idx) const;
  double& at(std::span<const Index> idx);

  bool all_finite() const;

 private:
  std::vector<Index> dims_;
  std::vector<double> data_;
};

Index flat_offset(std::span<const Index> dims, std::span<const Index> idx);

/// vec(X): the column-major flattening. A view, no copy.
Eigen::Map<const Eigen::VectorXd> vec_view(const DenseTensor& t);

/// Mode-k unfolding: rows index mode k, columns run over the remaining
/// modes in ascending order with earlier modes fastest.
Eigen::MatrixXd matricize(const DenseTensor& t, int mode);

/// Inverse of matricize for the given target dims.
DenseTensor unmatricize(const Eigen::MatrixXd& m, int mode,
                        std::vector<Index> dims);

Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// X x_k B: contracts mode k of the tensor with the columns of B.
DenseTensor mode_multiply(const DenseTensor& t, const Eigen::MatrixXd& b,
                          int mode);

double frobenius_norm_sq(const DenseTensor& t);

/// One coefficient matrix per mode. A factor flagged fixed_identity is an
/// identity that is never updated or materialized (used for replication
/// modes); its entries stay empty.
struct FactorMatrix {
  Eigen::MatrixXd entries;
  bool fixed_identity = false;
  Index identity_dim = 0;

  static FactorMatrix identity(Index dim);
  static FactorMatrix dense(Eigen::MatrixXd m);

  Index rows() const { return fixed_identity ? identity_dim : entries.rows(); }
  Index cols() const { return fixed_identity ? identity_dim : entries.cols(); }
  Eigen::MatrixXd matrix() const;  // materializes identities
};

struct KroneckerFactorSet {
  std::vector<FactorMatrix> factors;

  int order() const { return static_cast<int>(factors.size()); }
  std::vector<int> free_modes() const;

  /// B_K (x) ... (x) B_1, materialized. Small problems and tests only;
  /// everything else goes mode by mode.
  Eigen::MatrixXd chain() const;
};

/// X x {B_1,...,B_K}: applies every non-fixed factor mode by mode. Fixed
/// identity factors pass their mode through untouched, whatever its size.
DenseTensor tucker_product(const DenseTensor& t, const KroneckerFactorSet& f);

}  // namespace tenreg

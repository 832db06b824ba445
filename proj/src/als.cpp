#include "tenreg/als.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gram_solve.hpp"
#include "tenreg/errors.hpp"
#include "tenreg/parallel.hpp"
#include "tenreg/rng.hpp"

namespace tenreg {

using detail::apply_ridge;
using detail::factor_gram;

namespace {

// Applies every free factor except `mode` to X. The skipped mode and the
// replication mode pass through at their original size.
DenseTensor partial_design(const DenseTensor& x, const KroneckerFactorSet& f,
                           int mode) {
  KroneckerFactorSet others = f;
  others.factors[mode] = FactorMatrix::identity(x.dim(mode));
  return tucker_product(x, others);
}

// Least squares coefficients row by row when a mask is present. Rows with
// few masked columns reuse the shared Gram via rank-one downdates.
Eigen::MatrixXd masked_coefficients(const Eigen::MatrixXd& xmat,
                                    const Eigen::MatrixXd& ymat,
                                    const Eigen::MatrixXd& mmat, double ridge,
                                    const std::string& label) {
  const Index p = xmat.rows();
  const Index m = ymat.rows();
  const Index cols = xmat.cols();

  Eigen::MatrixXd yz =
      (mmat.array() != 0.0).select(ymat.array(), 0.0).matrix();
  Eigen::MatrixXd cross = yz * xmat.transpose();

  Eigen::MatrixXd gram_full = Eigen::MatrixXd::Zero(p, p);
  gram_full.selfadjointView<Eigen::Lower>().rankUpdate(xmat);

  Eigen::MatrixXd out(m, p);
  Eigen::LDLT<Eigen::MatrixXd> shared;
  bool shared_ready = false;
  Eigen::MatrixXd gram_i(p, p);
  for (Index i = 0; i < m; ++i) {
    Index masked = 0;
    for (Index c = 0; c < cols; ++c)
      if (mmat(i, c) == 0.0) ++masked;

    if (masked == 0) {
      if (!shared_ready) {
        gram_i = gram_full;
        apply_ridge(gram_i, ridge);
        shared = factor_gram(gram_i, label);
        shared_ready = true;
      }
      out.row(i) = shared.solve(cross.row(i).transpose()).transpose();
      continue;
    }

    if (2 * masked <= cols) {
      gram_i = gram_full;
      for (Index c = 0; c < cols; ++c)
        if (mmat(i, c) == 0.0)
          gram_i.selfadjointView<Eigen::Lower>().rankUpdate(xmat.col(c), -1.0);
    } else {
      gram_i.setZero();
      for (Index c = 0; c < cols; ++c)
        if (mmat(i, c) != 0.0)
          gram_i.selfadjointView<Eigen::Lower>().rankUpdate(xmat.col(c));
    }
    apply_ridge(gram_i, ridge);
    out.row(i) =
        factor_gram(gram_i, label).solve(cross.row(i).transpose()).transpose();
  }
  return out;
}

void check_response_shape(const RegressionDataset& data,
                          const DenseTensor& yhat) {
  if (yhat.dims() != data.Y.dims())
    throw InvalidError("prediction shape does not match the response");
  if (data.mask && data.mask->dims() != data.Y.dims())
    throw InvalidError("mask shape does not match the response");
}

}  // namespace

KroneckerFactorSet make_initial_factors(const RegressionDataset& data,
                                        const FitOptions& opts) {
  const int order = data.order();
  const int rep = data.replication_mode();

  if (opts.init == FitOptions::Init::given) {
    if (!opts.init_factors)
      throw InvalidError("init == given needs init_factors");
    const KroneckerFactorSet& given = *opts.init_factors;
    if (given.order() != order)
      throw InvalidError("initial factor set order does not match the data");
    for (int k = 0; k < order; ++k) {
      if (given.factors[k].rows() != data.Y.dim(k) ||
          given.factors[k].cols() != data.X.dim(k))
        throw InvalidError("initial factor shape mismatch at mode " +
                           std::to_string(k));
    }
    if (!given.factors[rep].fixed_identity)
      throw InvalidError("the replication factor must be a fixed identity");
    return given;
  }

  KroneckerFactorSet f;
  f.factors.reserve(order);
  for (int k = 0; k < order; ++k) {
    if (k == rep) {
      f.factors.push_back(FactorMatrix::identity(data.Y.dim(k)));
      continue;
    }
    const Index m = data.Y.dim(k);
    const Index p = data.X.dim(k);
    if (opts.init == FitOptions::Init::identity) {
      f.factors.push_back(FactorMatrix::dense(Eigen::MatrixXd::Identity(m, p)));
    } else {
      Rng rng = make_rng(opts.seed, static_cast<std::uint64_t>(k));
      Eigen::MatrixXd e(m, p);
      fill_normal(rng, e.data(), e.size());
      const double nrm = e.norm();
      if (nrm > 0) e /= nrm;
      f.factors.push_back(FactorMatrix::dense(std::move(e)));
    }
  }
  return f;
}

void conditional_minimizer(const RegressionDataset& data,
                           KroneckerFactorSet& factors, int mode,
                           double ridge) {
  const int order = data.order();
  if (factors.order() != order)
    throw InvalidError("factor set order does not match the data");
  if (mode < 0 || mode >= order)
    throw InvalidError("mode out of range");
  FactorMatrix& target = factors.factors[mode];
  if (target.fixed_identity)
    throw InvalidError("mode " + std::to_string(mode) +
                       " is a fixed identity factor");
  if (ridge < 0) throw InvalidError("ridge must be nonnegative");

  DenseTensor xt = partial_design(data.X, factors, mode);
  for (int k = 0; k < order; ++k) {
    if (k != mode && xt.dim(k) != data.Y.dim(k))
      throw InvalidError("factor rows at mode " + std::to_string(k) +
                         " do not match the response");
  }

  const std::string label = "mode " + std::to_string(mode);
  Eigen::MatrixXd xmat = matricize(xt, mode);
  Eigen::MatrixXd ymat = matricize(data.Y, mode);

  if (data.mask) {
    Eigen::MatrixXd mmat = matricize(*data.mask, mode);
    target.entries = masked_coefficients(xmat, ymat, mmat, ridge, label);
    return;
  }

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(xmat.rows(), xmat.rows());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(xmat);
  apply_ridge(gram, ridge);
  Eigen::MatrixXd cross = ymat * xmat.transpose();
  target.entries =
      factor_gram(gram, label).solve(cross.transpose()).transpose();
}

FitReport fit_als(const RegressionDataset& data, const FitOptions& opts) {
  data.validate();
  if (!(opts.tol > 0)) throw InvalidError("tol must be positive");
  if (opts.max_sweeps < 1) throw InvalidError("max_sweeps must be at least 1");
  if (opts.ridge < 0) throw InvalidError("ridge must be nonnegative");

  FitReport report;
  report.factors = make_initial_factors(data, opts);
  const std::vector<int> free = report.factors.free_modes();
  if (free.empty()) throw InvalidError("no free modes to fit");

  const double ynorm2 = frobenius_norm_sq(data.Y);
  // realizable problems bottom out near machine precision; stop there
  const double floor = 1e-25 * (ynorm2 > 0 ? ynorm2 : 1.0);

  double prev = rss(data, report.factors);
  report.objective_trace.push_back(prev);
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    for (int k : free) conditional_minimizer(data, report.factors, k, opts.ridge);
    const double cur = rss(data, report.factors);
    report.objective_trace.push_back(cur);
    ++report.sweeps;
    if (!std::isfinite(cur))
      throw NumericError("fit objective diverged");
    if (cur <= floor || prev - cur <= opts.tol * prev) {
      report.converged = true;
      break;
    }
    prev = cur;
  }

  bool normalizable = true;
  for (int k : free)
    if (!(report.factors.factors[k].entries.norm() > 0)) normalizable = false;
  if (normalizable) normalize_scale(report.factors);
  return report;
}

DenseTensor predict(const KroneckerFactorSet& factors, const DenseTensor& x) {
  return tucker_product(x, factors);
}

DenseTensor residual_tensor(const RegressionDataset& data,
                            const KroneckerFactorSet& factors) {
  DenseTensor r = predict(factors, data.X);
  check_response_shape(data, r);
  const Index n = r.size();
  for (Index i = 0; i < n; ++i) r[i] = data.Y[i] - r[i];
  if (data.mask) {
    const DenseTensor& m = *data.mask;
    for (Index i = 0; i < n; ++i)
      if (m[i] == 0.0) r[i] = 0.0;
  }
  return r;
}

double rss(const RegressionDataset& data, const KroneckerFactorSet& factors) {
  DenseTensor yhat = predict(factors, data.X);
  check_response_shape(data, yhat);
  const Index n = yhat.size();
  double total = 0.0;
  if (data.mask) {
    const DenseTensor& m = *data.mask;
    for (Index i = 0; i < n; ++i) {
      if (m[i] == 0.0) continue;
      const double d = data.Y[i] - yhat[i];
      total += d * d;
    }
  } else {
    for (Index i = 0; i < n; ++i) {
      const double d = data.Y[i] - yhat[i];
      total += d * d;
    }
  }
  return total;
}

void normalize_scale(KroneckerFactorSet& factors) {
  const std::vector<int> free = factors.free_modes();
  if (free.empty()) return;
  std::vector<double> norms;
  norms.reserve(free.size());
  double prod = 1.0;
  for (int k : free) {
    const double n = factors.factors[k].entries.norm();
    if (!(n > 0) || !std::isfinite(n))
      throw NumericError("cannot normalize mode " + std::to_string(k) +
                         ": factor norm is zero or not finite");
    norms.push_back(n);
    prod *= n;
  }
  const double g = std::pow(prod, 1.0 / static_cast<double>(free.size()));
  for (size_t i = 0; i < free.size(); ++i)
    factors.factors[free[i]].entries *= g / norms[i];
}

AdditiveFit fit_additive(const RegressionDataset& data) {
  data.validate();
  if (data.order() != 3)
    throw InvalidError("the additive model expects m1 x m2 x n data");
  const Index m1 = data.Y.dim(0);
  const Index m2 = data.Y.dim(1);
  const Index p1 = data.X.dim(0);
  const Index p2 = data.X.dim(1);
  const Index n = data.num_replicates();
  const Index pa = m1 * p1;
  const Index pb = m2 * p2;

  // row and column sums of each predictor slice
  Eigen::MatrixXd rsum(p1, n), csum(p2, n);
  for (Index t = 0; t < n; ++t) {
    Eigen::Map<const Eigen::MatrixXd> xt(data.X.data() + p1 * p2 * t, p1, p2);
    rsum.col(t) = xt.rowwise().sum();
    csum.col(t) = xt.colwise().sum().transpose();
  }

  // per-cell weights (1 when unmasked) and mask-zeroed response sums
  Eigen::MatrixXd w1 = Eigen::MatrixXd::Constant(m1, n, static_cast<double>(m2));
  Eigen::MatrixXd w2 = Eigen::MatrixXd::Constant(m2, n, static_cast<double>(m1));
  Eigen::MatrixXd ysum1(m1, n), ysum2(m2, n);
  for (Index t = 0; t < n; ++t) {
    Eigen::Map<const Eigen::MatrixXd> yt(data.Y.data() + m1 * m2 * t, m1, m2);
    if (data.mask) {
      Eigen::Map<const Eigen::MatrixXd> mt(data.mask->data() + m1 * m2 * t, m1,
                                           m2);
      Eigen::MatrixXd yz =
          (mt.array() != 0.0).select(yt.array(), 0.0).matrix();
      ysum1.col(t) = yz.rowwise().sum();
      ysum2.col(t) = yz.colwise().sum().transpose();
      w1.col(t) = mt.rowwise().sum();
      w2.col(t) = mt.colwise().sum().transpose();
    } else {
      ysum1.col(t) = yt.rowwise().sum();
      ysum2.col(t) = yt.colwise().sum().transpose();
    }
  }

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(pa + pb, pa + pb);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(pa + pb);
  for (Index i1 = 0; i1 < m1; ++i1) {
    gram.block(i1 * p1, i1 * p1, p1, p1) =
        rsum * w1.row(i1).transpose().asDiagonal() * rsum.transpose();
    rhs.segment(i1 * p1, p1) = rsum * ysum1.row(i1).transpose();
  }
  for (Index i2 = 0; i2 < m2; ++i2) {
    gram.block(pa + i2 * p2, pa + i2 * p2, p2, p2) =
        csum * w2.row(i2).transpose().asDiagonal() * csum.transpose();
    rhs.segment(pa + i2 * p2, p2) = csum * ysum2.row(i2).transpose();
  }
  Eigen::MatrixXd unmasked_cross = rsum * csum.transpose();
  Eigen::VectorXd cellw(n);
  for (Index i2 = 0; i2 < m2; ++i2)
    for (Index i1 = 0; i1 < m1; ++i1) {
      Eigen::MatrixXd cross;
      if (data.mask) {
        for (Index t = 0; t < n; ++t)
          cellw(t) = (*data.mask)[i1 + m1 * i2 + m1 * m2 * t];
        cross = rsum * cellw.asDiagonal() * csum.transpose();
      } else {
        cross = unmasked_cross;
      }
      gram.block(i1 * p1, pa + i2 * p2, p1, p2) += cross;
      gram.block(pa + i2 * p2, i1 * p1, p2, p1) += cross.transpose();
    }

  // minimum-norm solve; the level gauge makes the system rank deficient
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  if (es.info() != Eigen::Success)
    throw NumericError("additive normal equations failed to decompose");
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double lmax = ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
  const double cut = lmax > 0 ? 1e-12 * lmax : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  for (Index i = 0; i < ev.size(); ++i)
    if (ev(i) > cut) inv(i) = 1.0 / ev(i);
  Eigen::VectorXd theta =
      es.eigenvectors() *
      (inv.asDiagonal() * (es.eigenvectors().transpose() * rhs));

  // pin the gauge: shift so the column effects sum to zero
  const double alpha = theta.tail(pb).sum() / static_cast<double>(pb);
  theta.head(pa).array() += alpha;
  theta.tail(pb).array() -= alpha;

  AdditiveFit fit;
  fit.row_effects.resize(m1, p1);
  fit.col_effects.resize(m2, p2);
  for (Index i1 = 0; i1 < m1; ++i1)
    fit.row_effects.row(i1) = theta.segment(i1 * p1, p1).transpose();
  for (Index i2 = 0; i2 < m2; ++i2)
    fit.col_effects.row(i2) = theta.segment(pa + i2 * p2, p2).transpose();
  return fit;
}

DenseTensor predict_additive(const AdditiveFit& fit, const DenseTensor& x) {
  if (x.order() != 3)
    throw InvalidError("the additive model expects p1 x p2 x n predictors");
  if (fit.row_effects.cols() != x.dim(0) || fit.col_effects.cols() != x.dim(1))
    throw InvalidError("additive coefficients do not match the predictors");
  const Index p1 = x.dim(0);
  const Index p2 = x.dim(1);
  const Index n = x.dim(2);
  const Index m1 = fit.row_effects.rows();
  const Index m2 = fit.col_effects.rows();
  DenseTensor out({m1, m2, n});
  for (Index t = 0; t < n; ++t) {
    Eigen::Map<const Eigen::MatrixXd> xt(x.data() + p1 * p2 * t, p1, p2);
    Eigen::VectorXd a = fit.row_effects * xt.rowwise().sum();
    Eigen::VectorXd b = fit.col_effects * xt.colwise().sum().transpose();
    double* dst = out.data() + m1 * m2 * t;
    for (Index i2 = 0; i2 < m2; ++i2)
      for (Index i1 = 0; i1 < m1; ++i1) *dst++ = a(i1) + b(i2);
  }
  return out;
}

std::vector<DyadFit> fit_rank_one_per_dyad(const RegressionDataset& data,
                                           const FitOptions& opts,
                                           int threads) {
  data.validate();
  if (data.order() != 3)
    throw InvalidError("per-cell fits expect m1 x m2 x n data");
  if (!(opts.tol > 0)) throw InvalidError("tol must be positive");
  if (opts.max_sweeps < 1) throw InvalidError("max_sweeps must be at least 1");
  if (opts.ridge < 0) throw InvalidError("ridge must be nonnegative");

  const Index m1 = data.Y.dim(0);
  const Index m2 = data.Y.dim(1);
  const Index p1 = data.X.dim(0);
  const Index p2 = data.X.dim(1);
  const Index n = data.num_replicates();
  const Index cells = m1 * m2;

  std::vector<DyadFit> fits(static_cast<size_t>(cells));
  parallel_for(cells, resolve_threads(threads), [&](Index cell) {
    DyadFit& fit = fits[static_cast<size_t>(cell)];
    fit.row = cell % m1;
    fit.col = cell / m1;

    std::vector<Index> reps;
    std::vector<double> yv;
    reps.reserve(static_cast<size_t>(n));
    for (Index t = 0; t < n; ++t) {
      const Index at = fit.row + m1 * fit.col + m1 * m2 * t;
      if (data.mask && (*data.mask)[at] == 0.0) continue;
      reps.push_back(t);
      yv.push_back(data.Y[at]);
    }
    if (reps.empty()) {
      fit.skipped = true;
      return;
    }
    const Index nr = static_cast<Index>(reps.size());
    Eigen::Map<const Eigen::VectorXd> y(yv.data(), nr);

    Rng rng = make_rng(opts.seed, static_cast<std::uint64_t>(cell));
    fit.c.resize(p1);
    fit.d.resize(p2);
    fill_normal(rng, fit.c.data(), p1);
    fill_normal(rng, fit.d.data(), p2);
    if (fit.c.norm() > 0) fit.c /= fit.c.norm();
    if (fit.d.norm() > 0) fit.d /= fit.d.norm();

    const std::string label =
        "cell (" + std::to_string(fit.row) + "," + std::to_string(fit.col) + ")";
    Eigen::MatrixXd u(p1, nr), v(p2, nr);
    auto solve_side = [&](const Eigen::MatrixXd& basis) {
      Eigen::MatrixXd gram =
          Eigen::MatrixXd::Zero(basis.rows(), basis.rows());
      gram.selfadjointView<Eigen::Lower>().rankUpdate(basis);
      apply_ridge(gram, opts.ridge);
      return Eigen::VectorXd(factor_gram(gram, label).solve(basis * y));
    };

    double prev = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
      for (Index j = 0; j < nr; ++j) {
        Eigen::Map<const Eigen::MatrixXd> xt(data.X.data() + p1 * p2 * reps[j],
                                             p1, p2);
        u.col(j) = xt * fit.d;
      }
      fit.c = solve_side(u);
      for (Index j = 0; j < nr; ++j) {
        Eigen::Map<const Eigen::MatrixXd> xt(data.X.data() + p1 * p2 * reps[j],
                                             p1, p2);
        v.col(j) = xt.transpose() * fit.c;
      }
      fit.d = solve_side(v);

      const double cur = (y - v.transpose() * fit.d).squaredNorm();
      ++fit.sweeps;
      if (!std::isfinite(cur)) throw NumericError(label + ": fit diverged");
      fit.rss = cur;
      if (cur <= 1e-25 * std::max(y.squaredNorm(), 1.0) ||
          (std::isfinite(prev) && prev - cur <= opts.tol * prev)) {
        fit.converged = true;
        break;
      }
      prev = cur;
    }
  });
  return fits;
}

DenseTensor predict_rank_one(const std::vector<DyadFit>& fits,
                             const DenseTensor& x) {
  if (x.order() != 3)
    throw InvalidError("per-cell predictions expect p1 x p2 x n predictors");
  Index m1 = 0, m2 = 0;
  for (const DyadFit& f : fits) {
    m1 = std::max(m1, f.row + 1);
    m2 = std::max(m2, f.col + 1);
  }
  if (static_cast<Index>(fits.size()) != m1 * m2)
    throw InvalidError("per-cell fit list does not cover a full grid");
  const Index p1 = x.dim(0);
  const Index p2 = x.dim(1);
  const Index n = x.dim(2);
  DenseTensor out({m1, m2, n});
  for (const DyadFit& f : fits) {
    if (f.skipped) continue;
    if (f.c.size() != p1 || f.d.size() != p2)
      throw InvalidError("per-cell coefficients do not match the predictors");
    for (Index t = 0; t < n; ++t) {
      Eigen::Map<const Eigen::MatrixXd> xt(x.data() + p1 * p2 * t, p1, p2);
      out[f.row + m1 * f.col + m1 * m2 * t] = f.c.dot(xt * f.d);
    }
  }
  return out;
}

}  // namespace tenreg

#include "tenreg/gls.hpp"

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

#include "gram_solve.hpp"
#include "standardize.hpp"
#include "tenreg/errors.hpp"

namespace tenreg {

using detail::apply_ridge;
using detail::factor_gram;
using detail::standardizers;
using detail::zero_filled_response;

namespace {

// likelihood floor so exactly-interpolated data cannot push tau2 to zero
constexpr double kTau2Floor = 1e-300;

Eigen::MatrixXd checked_symmetric(const Eigen::MatrixXd& m,
                                  const std::string& who) {
  if (m.rows() != m.cols())
    throw InvalidError(who + ": matrix must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw InvalidError(who + ": matrix must be symmetric");
  return 0.5 * (m + m.transpose());
}

Eigen::MatrixXd spd_power(const Eigen::MatrixXd& m, double expo,
                          const std::string& who) {
  Eigen::MatrixXd s = checked_symmetric(m, who);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  if (es.info() != Eigen::Success)
    throw NumericError(who + ": eigendecomposition failed");
  if (!(es.eigenvalues().minCoeff() > 0))
    throw NumericError(who + ": matrix is not positive definite");
  return es.eigenvectors() *
         es.eigenvalues().array().pow(expo).matrix().asDiagonal() *
         es.eigenvectors().transpose();
}

void check_aligned(const RegressionDataset& data,
                   const KroneckerFactorSet& factors,
                   const SeparableCovariance& cov) {
  if (factors.order() != data.order() || cov.order() != data.order())
    throw InvalidError("factor set and covariance must match the data order");
  for (int k = 0; k < data.order(); ++k) {
    if (factors.factors[k].fixed_identity != cov.sigmas[k].fixed_identity)
      throw InvalidError("fixed modes of the factors and covariance disagree");
    if (!cov.sigmas[k].fixed_identity &&
        cov.sigmas[k].entries.rows() != data.Y.dim(k))
      throw InvalidError("covariance size mismatch at mode " +
                         std::to_string(k));
  }
}

// The generalized fit treats masked cells as observed zeros: the factor
// update regresses the zero-filled response on the full design, so the
// likelihood and the covariance statistics must see that same residual.
// Mixing in the masked residual (prediction error excised at masked cells)
// makes the factor step minimize a different objective than the one being
// traced, and the trace can rise.
DenseTensor gls_residual(const RegressionDataset& data,
                         const KroneckerFactorSet& factors) {
  if (!data.mask) return residual_tensor(data, factors);
  DenseTensor r = zero_filled_response(data);
  DenseTensor yhat = predict(factors, data.X);
  for (Index i = 0; i < r.size(); ++i) r[i] -= yhat[i];
  return r;
}

double tau2_mle(const RegressionDataset& data,
                const KroneckerFactorSet& factors,
                const SeparableCovariance& cov) {
  DenseTensor r = gls_residual(data, factors);
  DenseTensor rt = tucker_product(r, standardizers(cov, r.dims(), -1));
  const double m_total = static_cast<double>(r.size());
  return std::max(frobenius_norm_sq(rt) / m_total, kTau2Floor);
}

}  // namespace

void SeparableCovariance::validate() const {
  if (sigmas.empty()) throw InvalidError("covariance has no modes");
  if (!(tau2 > 0) || !std::isfinite(tau2))
    throw InvalidError("tau2 must be positive and finite");
  for (size_t k = 0; k < sigmas.size(); ++k) {
    const FactorMatrix& s = sigmas[k];
    const std::string who = "sigma " + std::to_string(k);
    if (s.fixed_identity) {
      if (s.identity_dim <= 0)
        throw InvalidError(who + ": identity dimension must be positive");
      continue;
    }
    if (s.entries.rows() == 0 || s.entries.rows() != s.entries.cols())
      throw InvalidError(who + ": must be square and nonempty");
    checked_symmetric(s.entries, who);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        s.entries, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0))
      throw InvalidError(who + ": must be positive definite");
  }
}

SeparableCovariance SeparableCovariance::identity(
    const std::vector<Index>& dims, int replication_mode) {
  SeparableCovariance cov;
  cov.sigmas.reserve(dims.size());
  for (int k = 0; k < static_cast<int>(dims.size()); ++k) {
    if (k == replication_mode)
      cov.sigmas.push_back(FactorMatrix::identity(dims[k]));
    else
      cov.sigmas.push_back(
          FactorMatrix::dense(Eigen::MatrixXd::Identity(dims[k], dims[k])));
  }
  return cov;
}

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& spd) {
  return spd_power(spd, 0.5, "sym_sqrt");
}

Eigen::MatrixXd inv_sqrt(const Eigen::MatrixXd& spd) {
  return spd_power(spd, -0.5, "inv_sqrt");
}

void gls_conditional_update(const RegressionDataset& data,
                            KroneckerFactorSet& factors,
                            const SeparableCovariance& cov, int mode,
                            double ridge) {
  check_aligned(data, factors, cov);
  if (mode < 0 || mode >= data.order()) throw InvalidError("mode out of range");
  FactorMatrix& target = factors.factors[mode];
  if (target.fixed_identity)
    throw InvalidError("mode " + std::to_string(mode) +
                       " is a fixed identity factor");
  if (ridge < 0) throw InvalidError("ridge must be nonnegative");

  // standardize the response along the other modes, and fold the same
  // standardization into the design through the current factors
  KroneckerFactorSet ystd = standardizers(cov, data.Y.dims(), mode);
  KroneckerFactorSet xstd;
  xstd.factors.reserve(factors.factors.size());
  for (int k = 0; k < data.order(); ++k) {
    if (k == mode || factors.factors[k].fixed_identity)
      xstd.factors.push_back(FactorMatrix::identity(data.X.dim(k)));
    else
      xstd.factors.push_back(FactorMatrix::dense(
          ystd.factors[k].entries * factors.factors[k].entries));
  }

  DenseTensor yt = tucker_product(zero_filled_response(data), ystd);
  DenseTensor xt = tucker_product(data.X, xstd);
  for (int k = 0; k < data.order(); ++k) {
    if (k != mode && xt.dim(k) != yt.dim(k))
      throw InvalidError("factor rows at mode " + std::to_string(k) +
                         " do not match the response");
  }

  Eigen::MatrixXd xmat = matricize(xt, mode);
  Eigen::MatrixXd ymat = matricize(yt, mode);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(xmat.rows(), xmat.rows());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(xmat);
  apply_ridge(gram, ridge);
  Eigen::MatrixXd cross = ymat * xmat.transpose();
  target.entries = factor_gram(gram, "mode " + std::to_string(mode))
                       .solve(cross.transpose())
                       .transpose();
}

void sigma_mle_update(const RegressionDataset& data,
                      const KroneckerFactorSet& factors,
                      SeparableCovariance& cov, int mode, double ridge) {
  check_aligned(data, factors, cov);
  if (mode < 0 || mode >= data.order()) throw InvalidError("mode out of range");
  if (cov.sigmas[mode].fixed_identity)
    throw InvalidError("mode " + std::to_string(mode) +
                       " has a fixed identity covariance");
  if (ridge < 0) throw InvalidError("ridge must be nonnegative");
  if (!(cov.tau2 > 0)) throw InvalidError("tau2 must be positive");

  DenseTensor r = gls_residual(data, factors);
  DenseTensor rt = tucker_product(r, standardizers(cov, r.dims(), mode));
  Eigen::MatrixXd e = matricize(rt, mode);
  e /= std::sqrt(cov.tau2);

  const Index m = e.rows();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(m, m);
  s.selfadjointView<Eigen::Lower>().rankUpdate(e);
  s = s.selfadjointView<Eigen::Lower>();
  s /= static_cast<double>(e.cols());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(es.eigenvalues().minCoeff() > 1e-12 * lmax)) {
    if (ridge <= 0)
      throw NumericError("mode " + std::to_string(mode) +
                         ": covariance update is rank deficient");
    std::cerr << "warning: covariance update at mode " << mode
              << " is rank deficient; adding a ridge\n";
    const double tr = s.trace();
    s.diagonal().array() +=
        tr > 0 ? ridge * tr / static_cast<double>(m) : ridge;
  }

  // trace gauge: keep trace(sigma) = m and push the scale into tau2
  const double tr = s.trace();
  cov.sigmas[mode].entries = s * (static_cast<double>(m) / tr);
  cov.tau2 *= tr / static_cast<double>(m);
}

double negative_log_likelihood(const RegressionDataset& data,
                               const KroneckerFactorSet& factors,
                               const SeparableCovariance& cov) {
  check_aligned(data, factors, cov);
  cov.validate();
  DenseTensor r = residual_tensor(data, factors);
  DenseTensor rt = tucker_product(r, standardizers(cov, r.dims(), -1));
  const double m_total = static_cast<double>(r.size());
  double nll = m_total * std::log(2 * M_PI * cov.tau2) +
               frobenius_norm_sq(rt) / cov.tau2;
  for (int k = 0; k < cov.order(); ++k) {
    const FactorMatrix& s = cov.sigmas[k];
    if (s.fixed_identity) continue;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(s.entries);
    nll += (m_total / static_cast<double>(s.entries.rows())) *
           ldlt.vectorD().array().log().sum();
  }
  return 0.5 * nll;
}

GlsReport fit_gls(const RegressionDataset& data, const GlsOptions& opts) {
  data.validate();
  if (!(opts.tol > 0)) throw InvalidError("tol must be positive");
  if (opts.max_sweeps < 1) throw InvalidError("max_sweeps must be at least 1");
  if (opts.ridge < 0) throw InvalidError("ridge must be nonnegative");

  FitOptions finit;
  finit.tol = opts.tol;
  finit.max_sweeps = opts.max_sweeps;
  finit.seed = opts.seed;
  finit.ridge = opts.ridge;
  finit.init = opts.init;
  finit.init_factors = opts.init_factors;

  GlsReport report;
  report.factors = make_initial_factors(data, finit);
  report.covariance =
      SeparableCovariance::identity(data.Y.dims(), data.replication_mode());
  const std::vector<int> free = report.factors.free_modes();
  if (free.empty()) throw InvalidError("no free modes to fit");

  double prev = negative_log_likelihood(data, report.factors, report.covariance);
  report.nll_trace.push_back(prev);
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    for (int k : free)
      gls_conditional_update(data, report.factors, report.covariance, k,
                             opts.ridge);
    for (int k : free)
      sigma_mle_update(data, report.factors, report.covariance, k, opts.ridge);
    report.covariance.tau2 = tau2_mle(data, report.factors, report.covariance);

    const double cur =
        negative_log_likelihood(data, report.factors, report.covariance);
    report.nll_trace.push_back(cur);
    ++report.sweeps;
    if (!std::isfinite(cur)) throw NumericError("fit objective diverged");
    if (std::abs(prev - cur) <= opts.tol * (1 + std::abs(prev))) {
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

DenseTensor sample_array_normal(const std::vector<Index>& dims,
                                const SeparableCovariance& cov, Rng& rng) {
  cov.validate();
  if (static_cast<int>(dims.size()) != cov.order())
    throw InvalidError("dims do not match the covariance order");
  for (int k = 0; k < cov.order(); ++k) {
    if (!cov.sigmas[k].fixed_identity &&
        cov.sigmas[k].entries.rows() != dims[k])
      throw InvalidError("covariance size mismatch at mode " +
                         std::to_string(k));
  }

  DenseTensor z(dims);
  fill_normal(rng, z.data(), z.size());
  KroneckerFactorSet roots;
  roots.factors.reserve(dims.size());
  for (int k = 0; k < cov.order(); ++k) {
    if (cov.sigmas[k].fixed_identity)
      roots.factors.push_back(FactorMatrix::identity(dims[k]));
    else
      roots.factors.push_back(FactorMatrix::dense(
          spd_power(cov.sigmas[k].entries, 0.5, "covariance")));
  }
  DenseTensor out = tucker_product(z, roots);
  const double tau = std::sqrt(cov.tau2);
  for (Index i = 0; i < out.size(); ++i) out[i] *= tau;
  return out;
}

ModeCorrelationDiagnostic mode_residual_correlation(const DenseTensor& residual,
                                                    int mode) {
  if (mode < 0 || mode >= residual.order())
    throw InvalidError("mode out of range");
  Eigen::MatrixXd e = matricize(residual, mode);
  const Index m = e.rows();
  const Index q = e.cols();
  if (q < 2)
    throw InvalidError("need at least two columns to correlate rows");

  e.colwise() -= e.rowwise().mean();
  Eigen::VectorXd sd =
      (e.rowwise().squaredNorm() / static_cast<double>(q)).cwiseSqrt();

  Eigen::MatrixXd cov = e * e.transpose() / static_cast<double>(q);
  ModeCorrelationDiagnostic out;
  out.correlation.resize(m, m);
  bool degenerate = false;
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) {
      if (i == j) {
        out.correlation(i, j) = 1.0;
      } else if (sd(i) == 0.0 || sd(j) == 0.0) {
        out.correlation(i, j) = 0.0;
        degenerate = true;
      } else {
        out.correlation(i, j) = cov(i, j) / (sd(i) * sd(j));
      }
    }
  }
  if (degenerate)
    std::cerr << "warning: zero-variance rows in the mode " << mode
              << " unfolding; their correlations are reported as zero\n";

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.correlation);
  if (es.info() != Eigen::Success)
    throw NumericError("correlation eigendecomposition failed");
  out.eigenvalues = es.eigenvalues().reverse();
  out.eigenvectors = es.eigenvectors().rowwise().reverse();
  return out;
}

}  // namespace tenreg

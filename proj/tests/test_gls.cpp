#include <doctest.h>

#include <cmath>

#include "tenreg/errors.hpp"
#include "tenreg/gls.hpp"
#include "testutil.hpp"

using namespace tenreg;
using testutil::kron_ref;
using testutil::max_abs_diff;
using testutil::random_matrix;
using testutil::random_tensor;

namespace {

Eigen::MatrixXd random_spd(Index m, Rng& rng) {
  Eigen::MatrixXd a = random_matrix(m, m, rng);
  Eigen::MatrixXd s = a * a.transpose();
  s.diagonal().array() += 0.5;
  return s;
}

SeparableCovariance two_mode_cov(const Eigen::MatrixXd& s1,
                                 const Eigen::MatrixXd& s2, Index n,
                                 double tau2) {
  SeparableCovariance cov;
  cov.sigmas.push_back(FactorMatrix::dense(s1));
  cov.sigmas.push_back(FactorMatrix::dense(s2));
  cov.sigmas.push_back(FactorMatrix::identity(n));
  cov.tau2 = tau2;
  return cov;
}

KroneckerFactorSet two_mode_factors(const Eigen::MatrixXd& a,
                                    const Eigen::MatrixXd& b, Index n) {
  KroneckerFactorSet f;
  f.factors.push_back(FactorMatrix::dense(a));
  f.factors.push_back(FactorMatrix::dense(b));
  f.factors.push_back(FactorMatrix::identity(n));
  return f;
}

}  // namespace

TEST_CASE("matrix square roots invert and multiply back") {
  auto rng = testutil::test_rng(201);
  Eigen::MatrixXd s = random_spd(5, rng);
  Eigen::MatrixXd h = sym_sqrt(s);
  CHECK((h * h - s).cwiseAbs().maxCoeff() < 1e-10);
  Eigen::MatrixXd hi = inv_sqrt(s);
  CHECK((hi * s * hi - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() <
        1e-10);

  SUBCASE("indefinite input is rejected") {
    Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(3, 3);
    bad(2, 2) = -1.0;
    CHECK_THROWS_AS(sym_sqrt(bad), NumericError);
    CHECK_THROWS_AS(inv_sqrt(bad), NumericError);
  }
  SUBCASE("asymmetric input is rejected") {
    Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(3, 3);
    bad(0, 2) = 1.0;
    CHECK_THROWS_AS(sym_sqrt(bad), InvalidError);
  }
}

TEST_CASE("identity covariance reduces the update to plain least squares") {
  auto rng = testutil::test_rng(203);
  RegressionDataset data;
  data.X = random_tensor({2, 3, 12}, rng);
  data.Y = random_tensor({3, 2, 12}, rng);
  KroneckerFactorSet start = two_mode_factors(random_matrix(3, 2, rng),
                                              random_matrix(2, 3, rng), 12);
  SeparableCovariance cov = SeparableCovariance::identity(data.Y.dims(), 2);

  KroneckerFactorSet by_gls = start;
  gls_conditional_update(data, by_gls, cov, 0, 1e-8);
  KroneckerFactorSet by_ols = start;
  conditional_minimizer(data, by_ols, 0, 1e-8);
  CHECK((by_gls.factors[0].entries - by_ols.factors[0].entries)
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("the factor update ignores overall covariance scale") {
  auto rng = testutil::test_rng(207);
  RegressionDataset data;
  data.X = random_tensor({2, 2, 15}, rng);
  data.Y = random_tensor({3, 4, 15}, rng);
  KroneckerFactorSet start = two_mode_factors(random_matrix(3, 2, rng),
                                              random_matrix(4, 2, rng), 15);
  Eigen::MatrixXd s1 = random_spd(3, rng);
  Eigen::MatrixXd s2 = random_spd(4, rng);

  SeparableCovariance base = two_mode_cov(s1, s2, 15, 1.0);
  SeparableCovariance scaled = two_mode_cov(s1, 3.7 * s2, 15, 5.0);

  KroneckerFactorSet f1 = start;
  gls_conditional_update(data, f1, base, 0, 0.0);
  KroneckerFactorSet f2 = start;
  gls_conditional_update(data, f2, scaled, 0, 0.0);
  CHECK((f1.factors[0].entries - f2.factors[0].entries).cwiseAbs().maxCoeff() <
        1e-11);
}

TEST_CASE("noiseless data is recovered under the full alternating fit") {
  auto rng = testutil::test_rng(211);
  Eigen::MatrixXd a0 = random_matrix(3, 3, rng);
  Eigen::MatrixXd b0 = random_matrix(3, 3, rng);
  RegressionDataset data = testutil::bilinear_data(a0, b0, 50, 0.0, rng);
  GlsOptions opts;
  opts.seed = 2;
  GlsReport rep = fit_gls(data, opts);
  DenseTensor yhat = predict(rep.factors, data.X);
  const double scale = std::sqrt(frobenius_norm_sq(data.Y));
  CHECK(max_abs_diff(yhat, data.Y) < 1e-8 * scale);
}

TEST_CASE("covariance update absorbs scale and hits simple cases exactly") {
  SUBCASE("orthogonal equal-norm residual rows give the identity") {
    // X is zero and the factors are zero, so the residual is Y itself:
    // the 4x4 identity slice has orthonormal rows.
    RegressionDataset data;
    data.X = DenseTensor({1, 1, 1});
    data.Y = DenseTensor({4, 4, 1});
    for (Index i = 0; i < 4; ++i) data.Y[i + 4 * i] = 1.0;
    KroneckerFactorSet f = two_mode_factors(Eigen::MatrixXd::Zero(4, 1),
                                            Eigen::MatrixXd::Zero(4, 1), 1);
    SeparableCovariance cov = SeparableCovariance::identity(data.Y.dims(), 2);
    sigma_mle_update(data, f, cov, 0, 1e-8);
    CHECK((cov.sigmas[0].entries - Eigen::MatrixXd::Identity(4, 4))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    CHECK(cov.tau2 == doctest::Approx(0.25).epsilon(1e-10));
  }

  SUBCASE("a planted row covariance is recovered from a large sample") {
    auto rng = testutil::test_rng(213);
    Eigen::MatrixXd s1 = random_spd(4, rng);
    s1 *= 4.0 / s1.trace();  // already in the trace gauge
    SeparableCovariance truth;
    truth.sigmas.push_back(FactorMatrix::dense(s1));
    truth.sigmas.push_back(
        FactorMatrix::dense(Eigen::MatrixXd::Identity(3, 3)));
    truth.sigmas.push_back(FactorMatrix::identity(3000));
    truth.tau2 = 1.0;
    RegressionDataset data;
    data.X = DenseTensor({1, 1, 3000});
    data.Y = sample_array_normal({4, 3, 3000}, truth, rng);
    KroneckerFactorSet f = two_mode_factors(Eigen::MatrixXd::Zero(4, 1),
                                            Eigen::MatrixXd::Zero(3, 1), 3000);
    SeparableCovariance cov = SeparableCovariance::identity(data.Y.dims(), 2);
    sigma_mle_update(data, f, cov, 0, 1e-8);
    CHECK((cov.sigmas[0].entries - s1).cwiseAbs().maxCoeff() < 0.1);
  }

  SUBCASE("zero residual falls back to a ridge identity") {
    RegressionDataset data;
    data.X = DenseTensor({1, 1, 2});
    data.Y = DenseTensor({3, 2, 2});
    KroneckerFactorSet f = two_mode_factors(Eigen::MatrixXd::Zero(3, 1),
                                            Eigen::MatrixXd::Zero(2, 1), 2);
    SeparableCovariance cov = SeparableCovariance::identity(data.Y.dims(), 2);
    sigma_mle_update(data, f, cov, 0, 1e-8);
    CHECK((cov.sigmas[0].entries - Eigen::MatrixXd::Identity(3, 3))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    CHECK(cov.tau2 > 0.0);
    CHECK(cov.tau2 < 1e-6);
  }
}

TEST_CASE("the likelihood matches a dense multivariate normal") {
  auto rng = testutil::test_rng(217);
  const Index n = 4;
  Eigen::MatrixXd a = random_matrix(2, 2, rng);
  Eigen::MatrixXd b = random_matrix(3, 2, rng);
  RegressionDataset data;
  data.X = random_tensor({2, 2, n}, rng);
  data.Y = random_tensor({2, 3, n}, rng);
  KroneckerFactorSet f = two_mode_factors(a, b, n);

  Eigen::MatrixXd s1 = random_spd(2, rng);
  Eigen::MatrixXd s2 = random_spd(3, rng);
  SeparableCovariance cov = two_mode_cov(s1, s2, n, 0.7);

  const double nll = negative_log_likelihood(data, f, cov);

  // residual computed slice by slice, independent of the library tensor ops
  Eigen::VectorXd r(2 * 3 * n);
  for (Index t = 0; t < n; ++t) {
    Eigen::Map<const Eigen::MatrixXd> xt(data.X.data() + 4 * t, 2, 2);
    Eigen::Map<const Eigen::MatrixXd> yt(data.Y.data() + 6 * t, 2, 3);
    Eigen::MatrixXd res = yt - a * xt * b.transpose();
    r.segment(6 * t, 6) = Eigen::Map<const Eigen::VectorXd>(res.data(), 6);
  }
  Eigen::MatrixXd c =
      0.7 * kron_ref(kron_ref(Eigen::MatrixXd::Identity(n, n), s2), s1);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(c);
  const double logdet = ldlt.vectorD().array().log().sum();
  const double quad = r.dot(ldlt.solve(r));
  const double want =
      0.5 * (static_cast<double>(r.size()) * std::log(2 * M_PI) + logdet +
             quad);
  CHECK(nll == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("alternating fit: objective never increases, noise is recovered") {
  auto rng = testutil::test_rng(219);
  // correlated noise: strong equicorrelation on the first mode
  Eigen::MatrixXd s1 = Eigen::MatrixXd::Constant(4, 4, 0.7);
  s1.diagonal().setConstant(1.0);
  SeparableCovariance noise = two_mode_cov(
      s1, Eigen::MatrixXd::Identity(3, 3), 200, 0.25);
  Eigen::MatrixXd a0 = random_matrix(4, 2, rng);
  Eigen::MatrixXd b0 = random_matrix(3, 2, rng);
  RegressionDataset data;
  data.X = random_tensor({2, 2, 200}, rng);
  data.Y = DenseTensor({4, 3, 200});
  {
    DenseTensor eps = sample_array_normal({4, 3, 200}, noise, rng);
    for (Index t = 0; t < 200; ++t) {
      Eigen::Map<const Eigen::MatrixXd> xt(data.X.data() + 4 * t, 2, 2);
      Eigen::Map<Eigen::MatrixXd> yt(data.Y.data() + 12 * t, 4, 3);
      yt = a0 * xt * b0.transpose();
    }
    for (Index i = 0; i < data.Y.size(); ++i) data.Y[i] += eps[i];
  }

  GlsOptions opts;
  opts.seed = 17;
  GlsReport rep = fit_gls(data, opts);
  CHECK(rep.converged);
  for (size_t i = 1; i < rep.nll_trace.size(); ++i)
    CHECK(rep.nll_trace[i] <=
          rep.nll_trace[i - 1] + 1e-9 * (1 + std::abs(rep.nll_trace[i - 1])));

  // estimated row covariance should show the strong equicorrelation
  const Eigen::MatrixXd& est = rep.covariance.sigmas[0].entries;
  CHECK(est.trace() == doctest::Approx(4.0).epsilon(1e-9));
  double off = 0;
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j)
      if (i != j) off += est(i, j) / est(i, i);
  CHECK(off / 12.0 > 0.4);  // true value 0.7
}

TEST_CASE("array normal draws reproduce the separable covariance") {
  auto rng = testutil::test_rng(223);
  Eigen::MatrixXd s1 = random_spd(2, rng);
  Eigen::MatrixXd s2 = random_spd(3, rng);
  SeparableCovariance cov;
  cov.sigmas.push_back(FactorMatrix::dense(s1));
  cov.sigmas.push_back(FactorMatrix::dense(s2));
  cov.tau2 = 2.0;

  const int draws = 20000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(6, 6);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(6);
  for (int i = 0; i < draws; ++i) {
    DenseTensor z = sample_array_normal({2, 3}, cov, rng);
    Eigen::Map<const Eigen::VectorXd> v(z.data(), 6);
    acc += v * v.transpose();
    mean += v;
  }
  acc /= draws;
  mean /= draws;
  Eigen::MatrixXd want = 2.0 * kron_ref(s2, s1);
  const double scale = want.cwiseAbs().maxCoeff();
  CHECK((acc - want).cwiseAbs().maxCoeff() < 0.05 * scale);
  CHECK(mean.cwiseAbs().maxCoeff() < 0.05 * std::sqrt(scale));
}

TEST_CASE("residual row correlation diagnostics") {
  auto rng = testutil::test_rng(227);

  SUBCASE("independent rows stay near zero off the diagonal") {
    DenseTensor r = random_tensor({5, 2000}, rng);
    ModeCorrelationDiagnostic d = mode_residual_correlation(r, 0);
    for (Index i = 0; i < 5; ++i) CHECK(d.correlation(i, i) == 1.0);
    double worst = 0;
    for (Index i = 0; i < 5; ++i)
      for (Index j = 0; j < 5; ++j)
        if (i != j) worst = std::max(worst, std::abs(d.correlation(i, j)));
    CHECK(worst < 4.0 / std::sqrt(2000.0));
  }

  SUBCASE("a duplicated row shows up as perfect correlation") {
    DenseTensor r = random_tensor({4, 300}, rng);
    for (Index c = 0; c < 300; ++c) r[1 + 4 * c] = r[0 + 4 * c];
    ModeCorrelationDiagnostic d = mode_residual_correlation(r, 0);
    CHECK(d.correlation(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.eigenvalues(0) >= d.eigenvalues(1));  // descending
    CHECK(d.eigenvalues.sum() == doctest::Approx(4.0).epsilon(1e-9));
    CHECK((d.eigenvectors.transpose() * d.eigenvectors -
           Eigen::MatrixXd::Identity(4, 4))
              .cwiseAbs()
              .maxCoeff() < 1e-9);
  }

  SUBCASE("a constant row gets zero correlations") {
    DenseTensor r = random_tensor({3, 50}, rng);
    for (Index c = 0; c < 50; ++c) r[2 + 3 * c] = 5.0;
    ModeCorrelationDiagnostic d = mode_residual_correlation(r, 0);
    CHECK(d.correlation(2, 2) == 1.0);
    CHECK(d.correlation(2, 0) == 0.0);
    CHECK(d.correlation(0, 2) == 0.0);
    CHECK(d.correlation(2, 1) == 0.0);
  }

  SUBCASE("a second-mode unfolding is what gets correlated") {
    // rows of the mode-1 unfolding: build a perfectly correlated pair
    DenseTensor r({2, 3, 40});
    auto rnd = testutil::test_rng(229);
    std::normal_distribution<double> g;
    for (Index t = 0; t < 40; ++t)
      for (Index i = 0; i < 2; ++i) {
        const double v = g(rnd);
        r[i + 2 * 0 + 6 * t] = v;
        r[i + 2 * 1 + 6 * t] = -v;
        r[i + 2 * 2 + 6 * t] = g(rnd);
      }
    ModeCorrelationDiagnostic d = mode_residual_correlation(r, 1);
    CHECK(d.correlation(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));
  }
}

TEST_CASE("covariance container validation") {
  SUBCASE("identity factory fixes the replication mode") {
    SeparableCovariance cov = SeparableCovariance::identity({3, 4, 7}, 2);
    cov.validate();
    CHECK(cov.order() == 3);
    CHECK_FALSE(cov.sigmas[0].fixed_identity);
    CHECK(cov.sigmas[2].fixed_identity);
    CHECK(cov.sigmas[2].identity_dim == 7);
    CHECK(cov.sigmas[1].entries.isIdentity(0.0));
  }
  SUBCASE("bad tau2 is rejected") {
    SeparableCovariance cov = SeparableCovariance::identity({2, 5}, 1);
    cov.tau2 = 0.0;
    CHECK_THROWS_AS(cov.validate(), InvalidError);
  }
  SUBCASE("asymmetric sigma is rejected") {
    SeparableCovariance cov = SeparableCovariance::identity({2, 5}, 1);
    cov.sigmas[0].entries(0, 1) = 0.5;
    CHECK_THROWS_AS(cov.validate(), InvalidError);
  }
  SUBCASE("indefinite sigma is rejected") {
    SeparableCovariance cov = SeparableCovariance::identity({2, 5}, 1);
    cov.sigmas[0].entries(0, 0) = -1.0;
    CHECK_THROWS_AS(cov.validate(), InvalidError);
  }
  SUBCASE("nonsquare sigma is rejected") {
    SeparableCovariance cov = SeparableCovariance::identity({2, 5}, 1);
    cov.sigmas[0].entries.resize(2, 3);
    cov.sigmas[0].entries.setZero();
    CHECK_THROWS_AS(cov.validate(), InvalidError);
  }
}

#include <doctest.h>
#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "tenreg/errors.hpp"
#include "tenreg/gibbs.hpp"
#include "tenreg/io.hpp"
#include "testutil.hpp"

using namespace tenreg;
using testutil::kron_ref;
using testutil::random_matrix;
using testutil::random_tensor;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("tenreg_gibbs_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string str() const { return path.string(); }
};

Eigen::MatrixXd random_spd(Index m, Rng& rng) {
  Eigen::MatrixXd a = random_matrix(m, m, rng);
  Eigen::MatrixXd s = a * a.transpose();
  s.diagonal().array() += 0.5;
  return s;
}

GibbsState two_mode_state(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          Index n, double tau2, Rng& rng) {
  GibbsState st;
  st.factors.factors.push_back(FactorMatrix::dense(a));
  st.factors.factors.push_back(FactorMatrix::dense(b));
  st.factors.factors.push_back(FactorMatrix::identity(n));
  st.covariance = SeparableCovariance::identity({a.rows(), b.rows(), n}, 2);
  st.covariance.sigmas[0].entries = random_spd(a.rows(), rng);
  st.covariance.tau2 = tau2;
  return st;
}

bool states_equal(const GibbsState& a, const GibbsState& b) {
  if (a.factors.order() != b.factors.order()) return false;
  for (int k = 0; k < a.factors.order(); ++k) {
    const FactorMatrix& fa = a.factors.factors[k];
    const FactorMatrix& fb = b.factors.factors[k];
    if (fa.fixed_identity != fb.fixed_identity) return false;
    if (fa.fixed_identity) continue;
    if (fa.entries.rows() != fb.entries.rows() ||
        fa.entries.cols() != fb.entries.cols())
      return false;
    if (std::memcmp(fa.entries.data(), fb.entries.data(),
                    sizeof(double) * fa.entries.size()) != 0)
      return false;
  }
  if (a.covariance.tau2 != b.covariance.tau2) return false;
  for (int k = 0; k < a.covariance.order(); ++k) {
    const FactorMatrix& sa = a.covariance.sigmas[k];
    const FactorMatrix& sb = b.covariance.sigmas[k];
    if (sa.fixed_identity != sb.fixed_identity) return false;
    if (sa.fixed_identity) continue;
    if (std::memcmp(sa.entries.data(), sb.entries.data(),
                    sizeof(double) * sa.entries.size()) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("inverse Wishart draws have the advertised moments") {
  auto rng = testutil::test_rng(301);
  const Index m = 3;
  Eigen::MatrixXd s = random_spd(m, rng);
  const double dof = 9.0;
  Eigen::MatrixXd s_inv = s.inverse();

  const int draws = 6000;
  Eigen::MatrixXd prec_mean = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd sigma_mean = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < draws; ++i) {
    Eigen::MatrixXd sigma = sample_inverse_wishart(s_inv, dof, rng);
    if (i < 50) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma,
                                                        Eigen::EigenvaluesOnly);
      CHECK(es.eigenvalues().minCoeff() > 0);
    }
    prec_mean += sigma.inverse();
    sigma_mean += sigma;
  }
  prec_mean /= draws;
  sigma_mean /= draws;

  // E[Sigma^-1] = dof * S^-1 and E[Sigma] = S / (dof - m - 1)
  Eigen::MatrixXd want_prec = dof * s_inv;
  CHECK((prec_mean - want_prec).cwiseAbs().maxCoeff() <
        0.1 * want_prec.cwiseAbs().maxCoeff());
  Eigen::MatrixXd want_sigma = s / (dof - m - 1);
  CHECK((sigma_mean - want_sigma).cwiseAbs().maxCoeff() <
        0.1 * want_sigma.cwiseAbs().maxCoeff());
}

TEST_CASE("matrix normal draws reproduce the Kronecker covariance") {
  auto rng = testutil::test_rng(307);
  Eigen::MatrixXd mean = random_matrix(2, 3, rng);
  Eigen::MatrixXd rowc = random_spd(2, rng);
  Eigen::MatrixXd colc = random_spd(3, rng);

  const int draws = 20000;
  Eigen::VectorXd acc_mean = Eigen::VectorXd::Zero(6);
  Eigen::MatrixXd acc_cov = Eigen::MatrixXd::Zero(6, 6);
  for (int i = 0; i < draws; ++i) {
    Eigen::MatrixXd d = sample_matrix_normal(mean, rowc, colc, rng);
    Eigen::Map<const Eigen::VectorXd> v(d.data(), 6);
    Eigen::VectorXd centered =
        v - Eigen::Map<const Eigen::VectorXd>(mean.data(), 6);
    acc_mean += v;
    acc_cov += centered * centered.transpose();
  }
  acc_mean /= draws;
  acc_cov /= draws;

  Eigen::MatrixXd want = kron_ref(colc, rowc);
  CHECK((acc_cov - want).cwiseAbs().maxCoeff() <
        0.07 * want.cwiseAbs().maxCoeff());
  CHECK((acc_mean - Eigen::Map<const Eigen::VectorXd>(mean.data(), 6))
            .cwiseAbs()
            .maxCoeff() < 0.05);
}

TEST_CASE("the global scale draw follows its inverse gamma posterior") {
  auto rng = testutil::test_rng(311);
  const double eta0 = 3.0, tau02 = 2.0, rss = 40.0;
  const Index m = 25;
  const int draws = 20000;
  double mean = 0;
  for (int i = 0; i < draws; ++i)
    mean += sample_tau2(rss, m, eta0, tau02, rng);
  mean /= draws;
  // IG((eta0+m)/2, (eta0*tau02+rss)/2) has mean b/(a-1)
  const double a = 0.5 * (eta0 + m), b = 0.5 * (eta0 * tau02 + rss);
  CHECK(mean == doctest::Approx(b / (a - 1)).epsilon(0.05));
}

TEST_CASE("posterior pieces avoid the big inverse but match it") {
  auto rng = testutil::test_rng(313);
  const Index m = 4, p = 3, q = 20;
  Eigen::MatrixXd y = random_matrix(m, q, rng);
  Eigen::MatrixXd x = random_matrix(p, q, rng);
  ModePrior prior = default_mode_prior(m, p);
  ModePosterior post = mode_posterior(y, x, prior);

  CHECK(post.dof == doctest::Approx(prior.dof + q));

  // naive forms with the q x q inverse
  Eigen::MatrixXd iq =
      Eigen::MatrixXd::Identity(q, q) + x.transpose() * x;
  Eigen::MatrixXd sn_naive =
      prior.scale + y * iq.inverse() * y.transpose();
  CHECK((post.sn - sn_naive).cwiseAbs().maxCoeff() < 1e-9);

  Eigen::MatrixXd c = Eigen::MatrixXd::Identity(p, p) + x * x.transpose();
  Eigen::MatrixXd mn_naive = y * x.transpose() * c.inverse();
  CHECK((post.mn - mn_naive).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((post.col_cov - c.inverse()).cwiseAbs().maxCoeff() < 1e-10);

  SUBCASE("no predictors collapses the regression to its prior") {
    Eigen::MatrixXd x0 = Eigen::MatrixXd::Zero(p, q);
    ModePrior pr = default_mode_prior(m, p);
    pr.mean = random_matrix(m, p, rng);
    ModePosterior flat = mode_posterior(y, x0, pr);
    CHECK((flat.mn - pr.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((flat.col_cov - Eigen::MatrixXd::Identity(p, p))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    Eigen::MatrixXd want =
        pr.scale + y * y.transpose();
    CHECK((flat.sn - want).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("normalization maps rescaled states to the same representative") {
  auto rng = testutil::test_rng(317);
  Eigen::MatrixXd a = random_matrix(3, 2, rng);
  Eigen::MatrixXd b = random_matrix(4, 2, rng);

  GibbsState s1 = two_mode_state(a, b, 6, 0.8, rng);
  GibbsState s2 = two_mode_state(-2.0 * a, b / -2.0, 6, 0.8, rng);
  s2.covariance = s1.covariance;
  normalize_factors(s1);
  normalize_factors(s2);
  CHECK(states_equal(s1, s2));

  SUBCASE("chain products are preserved") {
    GibbsState raw = two_mode_state(3.0 * a, b / 7.0, 6, 0.8, rng);
    Eigen::MatrixXd chain_before = raw.factors.chain();
    Eigen::MatrixXd cov_before =
        raw.covariance.tau2 * kron_ref(raw.covariance.sigmas[1].entries,
                                       raw.covariance.sigmas[0].entries);
    GibbsState gauged = raw;
    normalize_factors(gauged);
    CHECK((gauged.factors.chain() - chain_before).cwiseAbs().maxCoeff() <
          1e-10 * chain_before.cwiseAbs().maxCoeff());
    Eigen::MatrixXd cov_after =
        gauged.covariance.tau2 * kron_ref(gauged.covariance.sigmas[1].entries,
                                          gauged.covariance.sigmas[0].entries);
    CHECK((cov_after - cov_before).cwiseAbs().maxCoeff() <
          1e-10 * cov_before.cwiseAbs().maxCoeff());
    // gauge invariants hold afterwards
    CHECK(gauged.factors.factors[0].entries.norm() ==
          doctest::Approx(gauged.factors.factors[1].entries.norm())
              .epsilon(1e-12));
    CHECK(gauged.covariance.sigmas[0].entries.trace() ==
          doctest::Approx(3.0).epsilon(1e-12));
  }

  SUBCASE("applying it twice changes nothing") {
    GibbsState st = two_mode_state(5.0 * a, b, 9, 2.5, rng);
    normalize_factors(st);
    GibbsState again = st;
    normalize_factors(again);
    for (int k : {0, 1})
      CHECK((again.factors.factors[k].entries - st.factors.factors[k].entries)
                .cwiseAbs()
                .maxCoeff() < 1e-14);
    CHECK(again.covariance.tau2 ==
          doctest::Approx(st.covariance.tau2).epsilon(1e-14));
  }

  SUBCASE("a single free mode keeps its factor untouched") {
    GibbsState st;
    Eigen::MatrixXd only = random_matrix(2, 3, rng);
    st.factors.factors.push_back(FactorMatrix::dense(only));
    st.factors.factors.push_back(FactorMatrix::identity(5));
    st.covariance = SeparableCovariance::identity({2, 5}, 1);
    st.covariance.tau2 = 0.5;
    normalize_factors(st);
    CHECK(std::memcmp(st.factors.factors[0].entries.data(), only.data(),
                      sizeof(double) * only.size()) == 0);
  }
}

TEST_CASE("single-mode sampler agrees with the closed-form posterior mean") {
  auto rng = testutil::test_rng(331);
  const Index m = 2, p = 3, n = 40;
  Eigen::MatrixXd b0 = random_matrix(m, p, rng);
  RegressionDataset data;
  data.X = random_tensor({p, n}, rng);
  data.Y = DenseTensor({m, n});
  {
    Eigen::Map<const Eigen::MatrixXd> x(data.X.data(), p, n);
    Eigen::Map<Eigen::MatrixXd> y(data.Y.data(), m, n);
    y = b0 * x;
    Eigen::MatrixXd noise = random_matrix(m, n, rng);
    y += 0.5 * noise;
  }

  PriorSpec prior;
  prior.eta0 = 1e10;  // pins tau2 at tau02
  prior.tau02 = 1.0;

  GibbsOptions opts;
  opts.iterations = 3200;
  opts.burnin = 200;
  opts.chains = 1;
  opts.seed = 99;
  opts.warm_start = false;
  ChainStore store = gibbs_run(data, prior, opts);
  REQUIRE(store.draws.size() == 1);
  REQUIRE(store.draws[0].size() == 3000);

  // with tau2 = 1 the posterior mean of B is available in closed form
  Eigen::Map<const Eigen::MatrixXd> x(data.X.data(), p, n);
  Eigen::Map<const Eigen::MatrixXd> y(data.Y.data(), m, n);
  ModePosterior post = mode_posterior(y, x, default_mode_prior(m, p));

  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(m, p);
  for (const GibbsState& st : store.draws[0])
    mean += st.factors.factors[0].entries;
  mean /= static_cast<double>(store.draws[0].size());

  Eigen::MatrixXd sd = Eigen::MatrixXd::Zero(m, p);
  for (const GibbsState& st : store.draws[0]) {
    Eigen::MatrixXd d = st.factors.factors[0].entries - mean;
    sd += d.cwiseProduct(d);
  }
  sd = (sd / static_cast<double>(store.draws[0].size())).cwiseSqrt();

  const double root_n = std::sqrt(3000.0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < p; ++j)
      CHECK(std::abs(mean(i, j) - post.mn(i, j)) <
            5 * sd(i, j) / root_n + 1e-6);
}

TEST_CASE("runs are reproducible and chains are distinct") {
  auto rng = testutil::test_rng(337);
  Eigen::MatrixXd a0 = random_matrix(3, 2, rng);
  Eigen::MatrixXd b0 = random_matrix(3, 2, rng);
  RegressionDataset data = testutil::bilinear_data(a0, b0, 30, 0.4, rng);

  GibbsOptions opts;
  opts.iterations = 24;
  opts.burnin = 4;
  opts.thin = 2;
  opts.chains = 2;
  opts.seed = 11;
  ChainStore s1 = gibbs_run(data, {}, opts);
  ChainStore s2 = gibbs_run(data, {}, opts);

  REQUIRE(s1.draws.size() == 2);
  REQUIRE(s1.draws[0].size() == 10);  // (24 - 4) / 2
  for (size_t c = 0; c < 2; ++c)
    for (size_t i = 0; i < s1.draws[c].size(); ++i)
      CHECK(states_equal(s1.draws[c][i], s2.draws[c][i]));
  // warm and cold chains start from different places
  CHECK_FALSE(states_equal(s1.draws[0][0], s1.draws[1][0]));
}

TEST_CASE("the on-disk chain store round-trips") {
  auto rng = testutil::test_rng(347);
  Eigen::MatrixXd a0 = random_matrix(2, 2, rng);
  Eigen::MatrixXd b0 = random_matrix(2, 2, rng);
  RegressionDataset data = testutil::bilinear_data(a0, b0, 15, 0.3, rng);

  TempDir dir;
  GibbsOptions opts;
  opts.iterations = 12;
  opts.burnin = 2;
  opts.chains = 2;
  opts.seed = 5;
  opts.store_dir = dir.str();
  ChainStore run = gibbs_run(data, {}, opts);

  ChainStore loaded = load_chain_store(dir.str());
  CHECK(loaded.iterations == 12);
  CHECK(loaded.burnin == 2);
  CHECK(loaded.thin == 1);
  CHECK(loaded.seed == 5);
  REQUIRE(loaded.draws.size() == run.draws.size());
  for (size_t c = 0; c < run.draws.size(); ++c) {
    REQUIRE(loaded.draws[c].size() == run.draws[c].size());
    for (size_t i = 0; i < run.draws[c].size(); ++i)
      CHECK(states_equal(loaded.draws[c][i], run.draws[c][i]));
  }
}

TEST_CASE("a truncated chain directory still loads the complete draws") {
  auto rng = testutil::test_rng(349);
  TempDir dir;
  const std::filesystem::path chain = dir.path / "chain-000";
  std::filesystem::create_directories(chain);
  {
    std::ofstream manifest(chain / "manifest.json");
    manifest << R"({"burnin":0,"chain":0,"iterations":3,"seed":7,"thin":1})"
             << "\n";
  }
  GibbsState st = two_mode_state(random_matrix(2, 2, rng),
                                 random_matrix(2, 2, rng), 4, 1.0, rng);
  {
    std::ofstream f(chain / "factors.mltrf", std::ios::binary);
    std::ofstream c(chain / "covariances.mltrc", std::ios::binary);
    for (int i = 0; i < 3; ++i) write_mltrf_record(f, st.factors);
    for (int i = 0; i < 2; ++i) write_mltrc_record(c, st.covariance);
  }
  ChainStore loaded = load_chain_store(dir.str());
  REQUIRE(loaded.draws.size() == 1);
  CHECK(loaded.draws[0].size() == 2);  // pairs up to the shorter file
}

TEST_CASE("posterior summaries: frozen small cases") {
  SUBCASE("three draws of a scalar factor") {
    ChainStore store;
    store.draws.resize(1);
    for (double v : {1.0, 2.0, 3.0}) {
      GibbsState st;
      st.factors.factors.push_back(
          FactorMatrix::dense(Eigen::MatrixXd::Constant(1, 1, v)));
      st.factors.factors.push_back(FactorMatrix::identity(4));
      st.covariance = SeparableCovariance::identity({1, 4}, 1);
      store.draws[0].push_back(st);
    }
    PosteriorSummary s = summarize(store);
    REQUIRE(s.entries.size() == 1);
    const SummaryEntry& e = s.entries[0];
    CHECK(e.mode == 1);
    CHECK(e.row == 1);
    CHECK(e.col == 1);
    CHECK(e.mean == doctest::Approx(2.0));
    CHECK(e.sd == doctest::Approx(1.0));  // sample sd of {1,2,3}
    CHECK(e.q01 == doctest::Approx(1.02));
    CHECK(e.q025 == doctest::Approx(1.05));
    CHECK(e.q975 == doctest::Approx(2.95));
    CHECK(e.q99 == doctest::Approx(2.98));
    CHECK(e.flag == 2);
    CHECK(e.chain_sd == 0.0);
  }

  SUBCASE("standard normal draws hit the reference quantiles") {
    auto rng = testutil::test_rng(353);
    ChainStore store;
    store.draws.resize(2);
    std::normal_distribution<double> g;
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 20000; ++i) {
        GibbsState st;
        st.factors.factors.push_back(
            FactorMatrix::dense(Eigen::MatrixXd::Constant(1, 1, g(rng))));
        st.factors.factors.push_back(FactorMatrix::identity(2));
        st.covariance = SeparableCovariance::identity({1, 2}, 1);
        store.draws[c].push_back(st);
      }
    PosteriorSummary s = summarize(store);
    REQUIRE(s.entries.size() == 1);
    const SummaryEntry& e = s.entries[0];
    CHECK(std::abs(e.mean) < 0.02);
    CHECK(e.sd == doctest::Approx(1.0).epsilon(0.02));
    CHECK(e.q99 == doctest::Approx(2.3263).epsilon(0.03));
    CHECK(e.q025 == doctest::Approx(-1.9600).epsilon(0.03));
    CHECK(e.flag == 0);
    CHECK(s.max_chain_sd < 0.05);
  }

  SUBCASE("chain disagreement is exposed") {
    ChainStore store;
    store.draws.resize(2);
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 3; ++i) {
        GibbsState st;
        st.factors.factors.push_back(FactorMatrix::dense(
            Eigen::MatrixXd::Constant(1, 1, c == 0 ? 1.0 : 3.0)));
        st.factors.factors.push_back(FactorMatrix::identity(2));
        st.covariance = SeparableCovariance::identity({1, 2}, 1);
        store.draws[c].push_back(st);
      }
    PosteriorSummary s = summarize(store);
    CHECK(s.entries[0].mean == doctest::Approx(2.0));
    // sd of the per-chain means {1, 3}
    CHECK(s.entries[0].chain_sd == doctest::Approx(std::sqrt(2.0)));
    CHECK(s.max_chain_sd == doctest::Approx(std::sqrt(2.0)));
  }
}

TEST_CASE("the sampler finds a planted signal") {
  auto rng = testutil::test_rng(359);
  Eigen::MatrixXd a0 = random_matrix(3, 3, rng);
  Eigen::MatrixXd b0 = random_matrix(3, 3, rng);
  RegressionDataset data = testutil::bilinear_data(a0, b0, 150, 0.3, rng);

  GibbsOptions opts;
  opts.iterations = 400;
  opts.burnin = 100;
  opts.chains = 1;
  opts.seed = 21;
  ChainStore store = gibbs_run(data, {}, opts);

  // posterior mean of the coefficient chain vs the truth
  Eigen::MatrixXd want = kron_ref(b0, a0);
  Eigen::MatrixXd got = Eigen::MatrixXd::Zero(9, 9);
  for (const GibbsState& st : store.draws[0])
    got += kron_ref(st.factors.factors[1].entries,
                    st.factors.factors[0].entries);
  got /= static_cast<double>(store.draws[0].size());
  CHECK((got - want).cwiseAbs().maxCoeff() <
        0.1 * want.cwiseAbs().maxCoeff());
}

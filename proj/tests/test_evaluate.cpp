#include <doctest.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "tenreg/errors.hpp"
#include "tenreg/evaluate.hpp"
#include "testutil.hpp"

using namespace tenreg;
using testutil::random_matrix;
using testutil::random_tensor;

namespace {

DenseTensor tensor_of(std::vector<Index> dims, std::vector<double> vals) {
  DenseTensor t(dims);
  REQUIRE(t.size() == static_cast<Index>(vals.size()));
  std::copy(vals.begin(), vals.end(), t.data());
  return t;
}

const ScoreRow& find_row(const ScoreTable& table, const std::string& model,
                         int fold, const std::string& type) {
  for (const ScoreRow& r : table.rows)
    if (r.model == model && r.fold == fold && r.type == type) return r;
  REQUIRE(false);
  static ScoreRow dummy;
  return dummy;
}

const ScoreSummary& find_summary(const ScoreTable& table,
                                 const std::string& model,
                                 const std::string& type) {
  for (const ScoreSummary& s : table.summary)
    if (s.model == model && s.type == type) return s;
  REQUIRE(false);
  static ScoreSummary dummy;
  return dummy;
}

// four-mode data where each action type has its own bilinear map; the
// shared model cannot represent it, the per-type one can
RegressionDataset typed_data(const std::vector<Eigen::MatrixXd>& as,
                             const std::vector<Eigen::MatrixXd>& bs, Index n,
                             double noise_sd, std::mt19937_64& rng) {
  const Index j = static_cast<Index>(as.size());
  const Index m = as[0].rows(), p = as[0].cols();
  RegressionDataset data;
  data.X = DenseTensor({p, p, j, n});
  data.Y = DenseTensor({m, m, j, n});
  std::normal_distribution<double> nd;
  for (Index r = 0; r < n; ++r)
    for (Index jj = 0; jj < j; ++jj) {
      Eigen::MatrixXd x(p, p);
      for (Index c = 0; c < p; ++c)
        for (Index i = 0; i < p; ++i) x(i, c) = nd(rng);
      Eigen::MatrixXd y = as[jj] * x * bs[jj].transpose();
      for (Index c = 0; c < p; ++c)
        for (Index i = 0; i < p; ++i)
          data.X[i + p * (c + p * (jj + j * r))] = x(i, c);
      for (Index c = 0; c < m; ++c)
        for (Index i = 0; i < m; ++i)
          data.Y[i + m * (c + m * (jj + j * r))] = y(i, c) + noise_sd * nd(rng);
    }
  return data;
}

}  // namespace

TEST_CASE("explained variation about zero") {
  DenseTensor y = tensor_of({3}, {1, 2, 10});

  SUBCASE("perfect and zero predictors sit at the endpoints") {
    CHECK(r_squared(y, y) == 1.0);
    DenseTensor zero({3});
    CHECK(r_squared(y, zero) == 0.0);
  }

  SUBCASE("bad predictors go negative") {
    DenseTensor triple = tensor_of({3}, {3, 6, 30});
    CHECK(r_squared(y, triple) == doctest::Approx(-3.0).epsilon(1e-12));
  }

  SUBCASE("masked entries are invisible") {
    DenseTensor yhat = tensor_of({3}, {1, 1, 0});
    DenseTensor mask = tensor_of({3}, {1, 1, 0});
    // residuals 0 and 1 against totals 1 and 4
    CHECK(r_squared(y, yhat, &mask) == doctest::Approx(0.8).epsilon(1e-12));
  }

  SUBCASE("degenerate inputs are rejected") {
    DenseTensor zero({3});
    CHECK_THROWS_AS(r_squared(zero, y), InvalidError);
    DenseTensor wrong({4});
    CHECK_THROWS_AS(r_squared(y, wrong), InvalidError);
    DenseTensor mask({3});  // masks everything away
    CHECK_THROWS_AS(r_squared(y, y, &mask), InvalidError);
  }
}

TEST_CASE("split plans") {
  SUBCASE("disjoint folds partition the replicates") {
    SplitPlan plan = make_splits(10, 5, 2, 7);
    CHECK(plan.disjoint);
    CHECK(plan.n == 10);
    REQUIRE(plan.test_folds.size() == 5);
    std::set<Index> all;
    for (const auto& fold : plan.test_folds) {
      REQUIRE(fold.size() == 2);
      CHECK(std::is_sorted(fold.begin(), fold.end()));
      for (Index i : fold) {
        CHECK(i >= 0);
        CHECK(i < 10);
        CHECK(all.insert(i).second);  // disjointness
      }
    }
    CHECK(all.size() == 10);
  }

  SUBCASE("oversubscribed folds fall back to independent draws") {
    SplitPlan plan = make_splits(5, 3, 2, 7);
    CHECK_FALSE(plan.disjoint);
    REQUIRE(plan.test_folds.size() == 3);
    for (const auto& fold : plan.test_folds) {
      REQUIRE(fold.size() == 2);
      CHECK(fold[0] != fold[1]);  // no replacement within a fold
      for (Index i : fold) CHECK(i < 5);
    }
  }

  SUBCASE("plans are reproducible and seed-sensitive") {
    SplitPlan a = make_splits(50, 10, 5, 3);
    SplitPlan b = make_splits(50, 10, 5, 3);
    CHECK(a.test_folds == b.test_folds);
    SplitPlan c = make_splits(50, 10, 5, 4);
    CHECK(a.test_folds != c.test_folds);
  }

  SUBCASE("impossible sizes are rejected") {
    CHECK_THROWS_AS(make_splits(5, 2, 6, 0), InvalidError);
    CHECK_THROWS_AS(make_splits(5, 0, 2, 0), InvalidError);
    CHECK_THROWS_AS(make_splits(5, 2, 0, 0), InvalidError);
    CHECK_THROWS_AS(make_splits(0, 2, 1, 0), InvalidError);
  }
}

TEST_CASE("cross validation scores models fold by fold") {
  auto rng = testutil::test_rng(501);
  Eigen::MatrixXd a0 = random_matrix(3, 3, rng);
  Eigen::MatrixXd b0 = random_matrix(3, 3, rng);
  RegressionDataset data = testutil::bilinear_data(a0, b0, 12, 0.0, rng);
  SplitPlan plan = make_splits(12, 3, 2, 11);

  KroneckerFactorSet truth;
  truth.factors.push_back(FactorMatrix::dense(a0));
  truth.factors.push_back(FactorMatrix::dense(b0));
  truth.factors.push_back(FactorMatrix::identity(12));

  CvModel oracle{"oracle", [&](const RegressionDataset& train, std::uint64_t) {
                   KroneckerFactorSet f = truth;
                   f.factors[2] = FactorMatrix::identity(train.num_replicates());
                   return [f](const DenseTensor& x) {
                     KroneckerFactorSet g = f;
                     g.factors[2] = FactorMatrix::identity(x.dim(2));
                     return predict(g, x);
                   };
                 }};
  CvModel half{"half", [&](const RegressionDataset& train, std::uint64_t) {
                 KroneckerFactorSet f = truth;
                 f.factors[2] = FactorMatrix::identity(train.num_replicates());
                 return [f](const DenseTensor& x) {
                   KroneckerFactorSet g = f;
                   g.factors[2] = FactorMatrix::identity(x.dim(2));
                   DenseTensor out = predict(g, x);
                   for (Index i = 0; i < out.size(); ++i) out[i] *= 0.5;
                   return out;
                 };
               }};

  SUBCASE("the oracle scores one and the half model three quarters") {
    ScoreTable table = cross_validate(data, {oracle, half}, plan);
    for (int fold = 0; fold < 3; ++fold) {
      CHECK(find_row(table, "oracle", fold, "overall").r2 ==
            doctest::Approx(1.0).epsilon(1e-9));
      // yhat = y/2 after demeaning, so 1 - 1/4 exactly
      CHECK(find_row(table, "half", fold, "overall").r2 ==
            doctest::Approx(0.75).epsilon(1e-6));
    }
    const ScoreSummary& s = find_summary(table, "half", "overall");
    CHECK(s.folds_used == 3);
    CHECK(s.mean == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(s.min <= s.mean);
    CHECK(s.max >= s.mean);
  }

  SUBCASE("tables are a pure function of their inputs") {
    ScoreTable t1 = cross_validate(data, {oracle}, plan);
    ScoreTable t2 = cross_validate(data, {oracle}, plan);
    REQUIRE(t1.rows.size() == t2.rows.size());
    for (std::size_t i = 0; i < t1.rows.size(); ++i) {
      CHECK(t1.rows[i].model == t2.rows[i].model);
      CHECK(t1.rows[i].fold == t2.rows[i].fold);
      CHECK(t1.rows[i].r2 == t2.rows[i].r2);
    }
  }

  SUBCASE("a model that cannot fit fails its folds but not the table") {
    CvModel flaky{"flaky",
                  [&](const RegressionDataset& train, std::uint64_t seed) {
                    if (seed % 2 == 1)
                      throw NumericError("synthetic failure");
                    return oracle.fit(train, seed);
                  }};
    CvOptions opts;
    opts.seed = 10;  // folds get seeds 11, 12, 13
    ScoreTable table = cross_validate(data, {flaky, oracle}, plan, opts);
    CHECK(find_row(table, "flaky", 0, "overall").failed);
    CHECK_FALSE(find_row(table, "flaky", 1, "overall").failed);
    CHECK(find_row(table, "flaky", 2, "overall").failed);
    CHECK(find_summary(table, "flaky", "overall").folds_used == 1);
    CHECK(find_summary(table, "oracle", "overall").folds_used == 3);
  }

  SUBCASE("in-sample rows carry fold -1 and skip the summary") {
    CvOptions opts;
    opts.in_sample = true;
    ScoreTable table = cross_validate(data, {half}, plan, opts);
    CHECK(find_row(table, "half", -1, "overall").r2 ==
          doctest::Approx(0.75).epsilon(1e-6));
    CHECK(find_summary(table, "half", "overall").folds_used == 3);
  }

  SUBCASE("full-data demeaning changes the scores on noisy data") {
    RegressionDataset noisy = testutil::bilinear_data(a0, b0, 12, 1.0, rng);
    CvOptions full_opts;
    full_opts.demean = DemeanMode::full;
    ScoreTable by_train = cross_validate(noisy, {oracle}, plan);
    ScoreTable by_full = cross_validate(noisy, {oracle}, plan, full_opts);
    bool any_diff = false;
    for (std::size_t i = 0; i < by_train.rows.size(); ++i)
      if (by_train.rows[i].r2 != by_full.rows[i].r2) any_diff = true;
    CHECK(any_diff);
  }
}

TEST_CASE("four-mode data gets per-type score rows") {
  auto rng = testutil::test_rng(509);
  std::vector<Eigen::MatrixXd> as = {random_matrix(3, 3, rng),
                                     random_matrix(3, 3, rng)};
  std::vector<Eigen::MatrixXd> bs = {random_matrix(3, 3, rng),
                                     random_matrix(3, 3, rng)};
  RegressionDataset data = typed_data(as, bs, 12, 0.0, rng);
  SplitPlan plan = make_splits(12, 2, 3, 5);

  CvModel scaled{"scaled", [&](const RegressionDataset&, std::uint64_t) {
                   return [](const DenseTensor& x) {
                     DenseTensor out = x;
                     for (Index i = 0; i < out.size(); ++i) out[i] *= 0.5;
                     return out;
                   };
                 }};
  // predictor: half of X itself; Y per type is a bilinear map of X, so the
  // per-type scores differ but are deterministic
  CvOptions opts;
  opts.type_labels = {"verbal", "material"};
  ScoreTable table = cross_validate(data, {scaled}, plan, opts);
  for (int fold = 0; fold < 2; ++fold) {
    CHECK_NOTHROW(find_row(table, "scaled", fold, "overall"));
    CHECK_NOTHROW(find_row(table, "scaled", fold, "verbal"));
    CHECK_NOTHROW(find_row(table, "scaled", fold, "material"));
  }
  // per-type rows decompose the overall residual: all three are finite
  // and the overall sits between the per-type extremes
  for (int fold = 0; fold < 2; ++fold) {
    const double v = find_row(table, "scaled", fold, "verbal").r2;
    const double m = find_row(table, "scaled", fold, "material").r2;
    const double o = find_row(table, "scaled", fold, "overall").r2;
    CHECK(o <= std::max(v, m) + 1e-12);
    CHECK(o >= std::min(v, m) - 1e-12);
  }
}

TEST_CASE("the standard model lineup") {
  auto rng = testutil::test_rng(521);

  SUBCASE("unknown names are rejected") {
    CHECK_THROWS_AS(standard_models({"multiplicative", "bogus"}, {}),
                    InvalidError);
  }

  SUBCASE("the zero model always scores zero") {
    Eigen::MatrixXd a0 = random_matrix(3, 2, rng);
    Eigen::MatrixXd b0 = random_matrix(3, 2, rng);
    RegressionDataset data = testutil::bilinear_data(a0, b0, 10, 0.5, rng);
    SplitPlan plan = make_splits(10, 2, 2, 1);
    ScoreTable t =
        cross_validate(data, standard_models({"zero"}, {}), plan);
    for (const ScoreRow& r : t.rows) CHECK(r.r2 == 0.0);
  }

  SUBCASE("the shared multilinear model recovers noiseless data") {
    Eigen::MatrixXd a0 = random_matrix(3, 3, rng);
    Eigen::MatrixXd b0 = random_matrix(3, 3, rng);
    RegressionDataset data = testutil::bilinear_data(a0, b0, 24, 0.0, rng);
    SplitPlan plan = make_splits(24, 2, 4, 3);
    FitOptions fopts;
    fopts.seed = 17;
    ScoreTable t =
        cross_validate(data, standard_models({"multiplicative"}, fopts), plan);
    const ScoreSummary& s = find_summary(t, "multiplicative", "overall");
    CHECK(s.folds_used == 2);
    CHECK(s.mean > 0.999);
  }

  SUBCASE("per-type fits beat the shared model on heterogeneous types") {
    std::vector<Eigen::MatrixXd> as = {random_matrix(3, 3, rng),
                                       random_matrix(3, 3, rng),
                                       random_matrix(3, 3, rng)};
    std::vector<Eigen::MatrixXd> bs = {random_matrix(3, 3, rng),
                                       random_matrix(3, 3, rng),
                                       random_matrix(3, 3, rng)};
    RegressionDataset data = typed_data(as, bs, 30, 0.1, rng);
    SplitPlan plan = make_splits(30, 3, 5, 9);
    FitOptions fopts;
    fopts.seed = 23;
    ScoreTable t = cross_validate(
        data, standard_models({"separate", "multiplicative"}, fopts), plan);
    const double sep = find_summary(t, "separate", "overall").mean;
    const double joint = find_summary(t, "multiplicative", "overall").mean;
    CHECK(sep > joint);
    CHECK(sep > 0.9);
  }

  SUBCASE("the shared model beats per-type fits when types share their maps") {
    // one map for every type: the joint fit pools all types to estimate it,
    // the separate fit sees a third of the data per type and overfits; the
    // gap scales with the noise level, so the noise here is heavy
    Eigen::MatrixXd a0 = random_matrix(4, 4, rng);
    Eigen::MatrixXd b0 = random_matrix(4, 4, rng);
    std::vector<Eigen::MatrixXd> as = {a0, a0, a0};
    std::vector<Eigen::MatrixXd> bs = {b0, b0, b0};
    RegressionDataset data = typed_data(as, bs, 30, 3.0, rng);
    SplitPlan plan = make_splits(30, 3, 6, 13);
    FitOptions fopts;
    fopts.seed = 29;
    fopts.init = FitOptions::Init::identity;
    ScoreTable t = cross_validate(
        data, standard_models({"separate", "multiplicative"}, fopts), plan);
    const double sep = find_summary(t, "separate", "overall").mean;
    const double joint = find_summary(t, "multiplicative", "overall").mean;
    CHECK(joint > sep);
  }
}

TEST_CASE("the additive versus multiplicative bake-off") {
  auto rng = testutil::test_rng(523);
  Eigen::MatrixXd a0 = random_matrix(4, 4, rng);
  Eigen::MatrixXd b0 = random_matrix(4, 4, rng);

  SUBCASE("noiseless multiplicative data separates the lineup") {
    RegressionDataset data = testutil::bilinear_data(a0, b0, 40, 0.0, rng);
    SplitPlan plan = make_splits(40, 2, 5, 19);
    FitOptions fopts;
    fopts.seed = 31;
    ScoreTable t = compare_additive_multiplicative(data, plan, fopts);
    CHECK(find_row(t, "multiplicative", -1, "overall").r2 > 0.999999);
    CHECK(find_row(t, "additive", -1, "overall").r2 <
          find_row(t, "multiplicative", -1, "overall").r2);
    // per-cell bilinear maps contain the shared one, so in sample the
    // per-dyad fit matches or beats it
    CHECK(find_row(t, "dyad", -1, "overall").r2 >
          find_row(t, "multiplicative", -1, "overall").r2 - 1e-6);
  }

  SUBCASE("row-plus-column data is the additive model's home turf") {
    const Index m = 4, n = 30;
    auto rng2 = testutil::test_rng(527);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd arow = random_matrix(m, m, rng2);
    Eigen::MatrixXd bcol = random_matrix(m, m, rng2);
    RegressionDataset data;
    data.X = random_tensor({m, m, n}, rng2);
    data.Y = DenseTensor({m, m, n});
    for (Index r = 0; r < n; ++r) {
      Eigen::Map<const Eigen::MatrixXd> x(data.X.data() + m * m * r, m, m);
      Eigen::VectorXd rsum = x.rowwise().sum();
      Eigen::VectorXd csum = x.colwise().sum();
      Eigen::VectorXd re = arow * rsum, ce = bcol * csum;
      for (Index j = 0; j < m; ++j)
        for (Index i = 0; i < m; ++i)
          data.Y[i + m * j + m * m * r] = re(i) + ce(j);
    }
    SplitPlan plan = make_splits(n, 2, 5, 23);
    ScoreTable t = compare_additive_multiplicative(data, plan);
    CHECK(find_row(t, "additive", -1, "overall").r2 > 0.999999);
  }

  SUBCASE("per-dyad fits overfit small samples of shared-model data") {
    RegressionDataset data = testutil::bilinear_data(a0, b0, 30, 1.0, rng);
    SplitPlan plan = make_splits(30, 3, 5, 29);
    FitOptions fopts;
    fopts.seed = 37;
    ScoreTable t = compare_additive_multiplicative(data, plan, fopts);
    const double shared = find_summary(t, "multiplicative", "overall").mean;
    const double dyad = find_summary(t, "dyad", "overall").mean;
    CHECK(shared > dyad);
  }
}

TEST_CASE("score tables serialize to csv") {
  ScoreTable table;
  table.rows.push_back({"mult", 0, "overall", 0.5, false});
  table.rows.push_back({"mult", 1, "overall", 0.25, false});
  table.rows.push_back({"mult", 2, "overall", 0.0, true});
  table.rows.push_back({"zero", -1, "overall", 0.0, false});
  table.finalize();

  REQUIRE(table.summary.size() == 1);
  CHECK(table.summary[0].model == "mult");
  CHECK(table.summary[0].mean == doctest::Approx(0.375));
  CHECK(table.summary[0].min == 0.25);
  CHECK(table.summary[0].max == 0.5);
  CHECK(table.summary[0].folds_used == 2);

  const std::string path = "/tmp/tenreg_scores_" +
                           std::to_string(::getpid()) + ".csv";
  write_scores_csv(table, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line == "model,fold,type,predictive_r2");
  std::getline(in, line);
  CHECK(line == "mult,0,overall,0.5");
  std::getline(in, line);
  CHECK(line == "mult,1,overall,0.25");
  std::getline(in, line);
  CHECK(line == "mult,2,overall,nan");
  std::getline(in, line);
  CHECK(line == "zero,-1,overall,0.0");
  std::getline(in, line);
  CHECK(line == "model,type,mean,min,max,folds_used");
  std::getline(in, line);
  CHECK(line == "mult,overall,0.375,0.25,0.5,2");
  std::remove(path.c_str());
}

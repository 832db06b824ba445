#include "tenreg/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "tenreg/errors.hpp"
#include "tenreg/parallel.hpp"
#include "tenreg/rng.hpp"

namespace tenreg {

namespace {

std::string fmt(double v) { return nlohmann::json(v).dump(); }

// slice along the type mode (mode 2), keeping the chosen extents in order
DenseTensor take_types(const DenseTensor& t, std::span<const Index> keep) {
  if (t.order() < 3) throw InvalidError("tensor has no type mode to slice");
  const std::vector<Index>& dims = t.dims();
  const Index inner = dims[0] * dims[1];
  const Index j = dims[2];
  Index outer = 1;
  for (int m = 3; m < t.order(); ++m) outer *= dims[m];
  std::vector<Index> odims = dims;
  odims[2] = static_cast<Index>(keep.size());
  DenseTensor out(odims);
  double* dst = out.data();
  for (Index o = 0; o < outer; ++o)
    for (Index type : keep) {
      if (type < 0 || type >= j) throw InvalidError("type index out of range");
      const double* src = t.data() + (o * j + type) * inner;
      std::copy(src, src + inner, dst);
      dst += inner;
    }
  return out;
}

// inverse of take_types for a single slice
void put_type(DenseTensor& dst, const DenseTensor& src, Index type) {
  const std::vector<Index>& dims = dst.dims();
  const Index inner = dims[0] * dims[1];
  const Index j = dims[2];
  Index outer = 1;
  for (int m = 3; m < dst.order(); ++m) outer *= dims[m];
  for (Index o = 0; o < outer; ++o)
    std::copy(src.data() + o * inner, src.data() + (o + 1) * inner,
              dst.data() + (o * j + type) * inner);
}

// per-cell mean of the leading block over the chosen replicates
std::vector<double> replicate_mean(const DenseTensor& t,
                                   std::span<const Index> reps) {
  const Index block = t.size() / t.dim(t.order() - 1);
  std::vector<double> mu(block, 0.0);
  for (Index r : reps) {
    const double* src = t.data() + r * block;
    for (Index i = 0; i < block; ++i) mu[i] += src[i];
  }
  for (double& v : mu) v /= static_cast<double>(reps.size());
  return mu;
}

// response means skip masked entries; a cell with no observed replicates
// gets mean zero
std::vector<double> masked_mean(const DenseTensor& y, const DenseTensor* mask,
                                std::span<const Index> reps) {
  if (!mask) return replicate_mean(y, reps);
  const Index block = y.size() / y.dim(y.order() - 1);
  std::vector<double> mu(block, 0.0);
  std::vector<Index> count(block, 0);
  for (Index r : reps) {
    const double* src = y.data() + r * block;
    const double* obs = mask->data() + r * block;
    for (Index i = 0; i < block; ++i)
      if (obs[i] != 0.0) {
        mu[i] += src[i];
        ++count[i];
      }
  }
  for (Index i = 0; i < block; ++i)
    mu[i] = count[i] ? mu[i] / static_cast<double>(count[i]) : 0.0;
  return mu;
}

void subtract_mean(DenseTensor& t, const std::vector<double>& mu) {
  const Index block = static_cast<Index>(mu.size());
  const Index reps = block ? t.size() / block : 0;
  for (Index r = 0; r < reps; ++r) {
    double* dst = t.data() + r * block;
    for (Index i = 0; i < block; ++i) dst[i] -= mu[i];
  }
}

struct FoldData {
  int fold = 0;  // -1 for the in-sample pass
  RegressionDataset train;
  RegressionDataset test;
};

FoldData prepare_fold(const RegressionDataset& data, const SplitPlan& plan,
                      int fold, DemeanMode demean) {
  const Index n = data.num_replicates();
  std::vector<Index> test_idx, train_idx;
  if (fold < 0) {
    test_idx.resize(static_cast<std::size_t>(n));
    std::iota(test_idx.begin(), test_idx.end(), Index{0});
    train_idx = test_idx;
  } else {
    test_idx = plan.test_folds[static_cast<std::size_t>(fold)];
    std::vector<char> is_test(static_cast<std::size_t>(n), 0);
    for (Index i : test_idx) {
      if (i < 0 || i >= n) throw InvalidError("split index out of range");
      is_test[static_cast<std::size_t>(i)] = 1;
    }
    for (Index i = 0; i < n; ++i)
      if (!is_test[static_cast<std::size_t>(i)]) train_idx.push_back(i);
    if (train_idx.empty())
      throw InvalidError("a test fold left no training replicates");
  }

  FoldData fd;
  fd.fold = fold;
  fd.train = slice_replicates(data, train_idx);
  fd.test = slice_replicates(data, test_idx);

  std::vector<Index> all;
  if (demean == DemeanMode::full) {
    all.resize(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Index{0});
  }
  std::span<const Index> mean_idx =
      demean == DemeanMode::full ? std::span<const Index>(all)
                                 : std::span<const Index>(train_idx);
  const DenseTensor* mask = data.mask ? &*data.mask : nullptr;
  const std::vector<double> mu_x = replicate_mean(data.X, mean_idx);
  const std::vector<double> mu_y = masked_mean(data.Y, mask, mean_idx);
  subtract_mean(fd.train.X, mu_x);
  subtract_mean(fd.train.Y, mu_y);
  subtract_mean(fd.test.X, mu_x);
  subtract_mean(fd.test.Y, mu_y);
  return fd;
}

// predictor that re-targets the trailing identity to the replicate count
// of whatever tensor it is handed
PredictFn kron_predictor(KroneckerFactorSet factors) {
  return [f = std::move(factors)](const DenseTensor& x) {
    KroneckerFactorSet g = f;
    g.factors.back() = FactorMatrix::identity(x.dim(x.order() - 1));
    return predict(g, x);
  };
}

// alternating fits only find local optima; a few seeded restarts keep one
// bad basin from misrepresenting a model in the comparison
KroneckerFactorSet best_als_fit(const RegressionDataset& data,
                                const FitOptions& base, std::uint64_t seed) {
  constexpr int kRestarts = 5;
  FitOptions opts = base;
  opts.seed = seed;
  FitReport best = fit_als(data, opts);
  if (base.init != FitOptions::Init::random) return std::move(best.factors);
  for (int r = 1; r < kRestarts; ++r) {
    opts.seed = seed + 7919ull * static_cast<std::uint64_t>(r);
    FitReport rep = fit_als(data, opts);
    if (rep.objective_trace.back() < best.objective_trace.back())
      best = std::move(rep);
  }
  return std::move(best.factors);
}

CvModel make_multiplicative(const FitOptions& base) {
  return {"multiplicative",
          [base](const RegressionDataset& train, std::uint64_t seed) {
            return kron_predictor(best_als_fit(train, base, seed));
          }};
}

CvModel make_additive() {
  return {"additive", [](const RegressionDataset& train, std::uint64_t) {
            AdditiveFit fit = fit_additive(train);
            return PredictFn([fit](const DenseTensor& x) {
              return predict_additive(fit, x);
            });
          }};
}

CvModel make_dyad(const FitOptions& base) {
  return {"dyad", [base](const RegressionDataset& train, std::uint64_t seed) {
            FitOptions opts = base;
            opts.seed = seed;
            std::vector<DyadFit> fits = fit_rank_one_per_dyad(train, opts, 1);
            return PredictFn([fits](const DenseTensor& x) {
              return predict_rank_one(fits, x);
            });
          }};
}

CvModel make_zero() {
  return {"zero", [](const RegressionDataset& train, std::uint64_t) {
            std::vector<Index> ydims = train.Y.dims();
            return PredictFn([ydims](const DenseTensor& x) {
              std::vector<Index> dims = ydims;
              dims.back() = x.dim(x.order() - 1);
              return DenseTensor(dims);
            });
          }};
}

// one multilinear fit per response type; predictor type slices are grouped
// as (predictor p, type t) -> mode-2 index p * J + t, so each type keeps
// its own copies of all predictors
CvModel make_separate(const FitOptions& base) {
  return {
      "separate", [base](const RegressionDataset& train, std::uint64_t seed) {
        if (train.order() < 4)
          throw InvalidError("per-type fits need a type mode in the response");
        const Index j = train.Y.dim(2);
        const Index xj = train.X.dim(2);
        if (xj % j != 0)
          throw InvalidError(
              "predictor type count must be a multiple of the response's");
        const Index groups = xj / j;
        std::vector<KroneckerFactorSet> fits;
        fits.reserve(static_cast<std::size_t>(j));
        for (Index t = 0; t < j; ++t) {
          RegressionDataset sub;
          sub.Y = take_types(train.Y, {&t, 1});
          std::vector<Index> xidx(static_cast<std::size_t>(groups));
          for (Index g = 0; g < groups; ++g)
            xidx[static_cast<std::size_t>(g)] = g * j + t;
          sub.X = take_types(train.X, xidx);
          if (train.mask) sub.mask = take_types(*train.mask, {&t, 1});
          fits.push_back(
              best_als_fit(sub, base, seed + static_cast<std::uint64_t>(t)));
        }
        return PredictFn([fits, j, groups](const DenseTensor& x) {
          if (x.order() < 4 || x.dim(2) != j * groups)
            throw InvalidError("predictor does not match the per-type fits");
          std::vector<Index> odims = {fits[0].factors[0].rows(),
                                      fits[0].factors[1].rows(), j,
                                      x.dim(x.order() - 1)};
          DenseTensor out(odims);
          for (Index t = 0; t < j; ++t) {
            std::vector<Index> xidx(static_cast<std::size_t>(groups));
            for (Index g = 0; g < groups; ++g)
              xidx[static_cast<std::size_t>(g)] = g * j + t;
            KroneckerFactorSet f = fits[static_cast<std::size_t>(t)];
            f.factors.back() = FactorMatrix::identity(x.dim(x.order() - 1));
            put_type(out, predict(f, take_types(x, xidx)), t);
          }
          return out;
        });
      }};
}

}  // namespace

double r_squared(const DenseTensor& y, const DenseTensor& yhat,
                 const DenseTensor* mask) {
  if (yhat.dims() != y.dims())
    throw InvalidError("prediction shape does not match the response");
  if (mask && mask->dims() != y.dims())
    throw InvalidError("mask shape does not match the response");
  double ss_res = 0.0, ss_tot = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    if (mask && (*mask)[i] == 0.0) continue;
    const double r = y[i] - yhat[i];
    ss_res += r * r;
    ss_tot += y[i] * y[i];
  }
  if (!(ss_tot > 0.0))
    throw InvalidError("response has no variation to explain");
  return 1.0 - ss_res / ss_tot;
}

SplitPlan make_splits(Index n, int folds, Index test_size,
                      std::uint64_t seed) {
  if (n < 1) throw InvalidError("need at least one replicate to split");
  if (folds < 1) throw InvalidError("need at least one fold");
  if (test_size < 1 || test_size > n)
    throw InvalidError("fold size must be between 1 and the replicate count");

  SplitPlan plan;
  plan.n = n;
  plan.seed = seed;
  plan.disjoint = static_cast<Index>(folds) * test_size <= n;
  Rng rng = make_rng(seed);

  // hand-rolled Fisher-Yates so plans do not depend on the standard
  // library's shuffle implementation
  std::vector<Index> perm(static_cast<std::size_t>(n));
  if (plan.disjoint) {
    std::iota(perm.begin(), perm.end(), Index{0});
    for (Index i = n - 1; i > 0; --i) {
      const Index j =
          static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(perm[static_cast<std::size_t>(i)],
                perm[static_cast<std::size_t>(j)]);
    }
    for (int f = 0; f < folds; ++f) {
      auto first = perm.begin() + static_cast<std::ptrdiff_t>(f) * test_size;
      std::vector<Index> fold(first, first + test_size);
      std::sort(fold.begin(), fold.end());
      plan.test_folds.push_back(std::move(fold));
    }
  } else {
    // not enough replicates for disjoint folds: each fold is its own draw
    // without replacement
    for (int f = 0; f < folds; ++f) {
      std::iota(perm.begin(), perm.end(), Index{0});
      for (Index i = 0; i < test_size; ++i) {
        const Index j =
            i + static_cast<Index>(rng() % static_cast<std::uint64_t>(n - i));
        std::swap(perm[static_cast<std::size_t>(i)],
                  perm[static_cast<std::size_t>(j)]);
      }
      std::vector<Index> fold(perm.begin(), perm.begin() + test_size);
      std::sort(fold.begin(), fold.end());
      plan.test_folds.push_back(std::move(fold));
    }
  }
  return plan;
}

void ScoreTable::finalize() {
  summary.clear();
  for (const ScoreRow& row : rows) {
    if (row.fold < 0) continue;
    ScoreSummary* s = nullptr;
    for (ScoreSummary& cand : summary)
      if (cand.model == row.model && cand.type == row.type) {
        s = &cand;
        break;
      }
    if (!s) {
      summary.push_back({row.model, row.type, 0.0, 0.0, 0.0, 0});
      s = &summary.back();
    }
    if (row.failed) continue;
    if (s->folds_used == 0) {
      s->min = s->max = row.r2;
    } else {
      s->min = std::min(s->min, row.r2);
      s->max = std::max(s->max, row.r2);
    }
    s->mean += row.r2;
    s->folds_used += 1;
  }
  for (ScoreSummary& s : summary)
    if (s.folds_used > 0) s.mean /= static_cast<double>(s.folds_used);
}

ScoreTable cross_validate(const RegressionDataset& data,
                          const std::vector<CvModel>& models,
                          const SplitPlan& plan, const CvOptions& opts) {
  data.validate();
  if (plan.n != data.num_replicates())
    throw InvalidError("split plan was made for a different replicate count");
  if (plan.test_folds.empty()) throw InvalidError("split plan has no folds");

  std::vector<std::string> types;  // empty when there is no type mode
  if (data.order() >= 4) {
    const Index j = data.Y.dim(2);
    if (!opts.type_labels.empty()) {
      if (static_cast<Index>(opts.type_labels.size()) != j)
        throw InvalidError("expected one type label per response type");
      types = opts.type_labels;
    } else {
      for (Index t = 1; t <= j; ++t)
        types.push_back("type_" + std::to_string(t));
    }
  }

  std::vector<int> fold_ids;
  if (opts.in_sample) fold_ids.push_back(-1);
  for (int f = 0; f < static_cast<int>(plan.test_folds.size()); ++f)
    fold_ids.push_back(f);

  std::vector<FoldData> folds;
  folds.reserve(fold_ids.size());
  for (int f : fold_ids)
    folds.push_back(prepare_fold(data, plan, f, opts.demean));

  const std::size_t rows_per_cell = 1 + types.size();
  ScoreTable table;
  table.rows.resize(models.size() * fold_ids.size() * rows_per_cell);

  const auto tasks =
      static_cast<std::int64_t>(models.size() * fold_ids.size());
  parallel_for(tasks, opts.threads, [&](std::int64_t task) {
    const std::size_t mi = static_cast<std::size_t>(task) / fold_ids.size();
    const std::size_t fi = static_cast<std::size_t>(task) % fold_ids.size();
    const CvModel& model = models[mi];
    const FoldData& fd = folds[fi];
    ScoreRow* slot =
        table.rows.data() + (mi * fold_ids.size() + fi) * rows_per_cell;
    for (std::size_t r = 0; r < rows_per_cell; ++r) {
      slot[r].model = model.name;
      slot[r].fold = fd.fold;
      slot[r].type = r == 0 ? "overall" : types[r - 1];
    }

    const std::uint64_t seed =
        opts.seed + static_cast<std::uint64_t>(fd.fold + 1);
    DenseTensor yhat;
    try {
      yhat = model.fit(fd.train, seed)(fd.test.X);
      if (yhat.dims() != fd.test.Y.dims())
        throw InvalidError("prediction shape does not match the response");
    } catch (const std::exception& e) {
      for (std::size_t r = 0; r < rows_per_cell; ++r) slot[r].failed = true;
      std::fprintf(stderr, "warning: model %s failed on fold %d: %s\n",
                   model.name.c_str(), fd.fold, e.what());
      return;
    }

    const DenseTensor* mask = fd.test.mask ? &*fd.test.mask : nullptr;
    for (std::size_t r = 0; r < rows_per_cell; ++r) {
      try {
        if (r == 0) {
          slot[r].r2 = r_squared(fd.test.Y, yhat, mask);
        } else {
          const Index t = static_cast<Index>(r) - 1;
          const DenseTensor ys = take_types(fd.test.Y, {&t, 1});
          const DenseTensor ps = take_types(yhat, {&t, 1});
          DenseTensor ms;
          if (mask) ms = take_types(*mask, {&t, 1});
          slot[r].r2 = r_squared(ys, ps, mask ? &ms : nullptr);
        }
      } catch (const std::exception& e) {
        slot[r].failed = true;
        std::fprintf(stderr, "warning: scoring %s on fold %d (%s): %s\n",
                     model.name.c_str(), fd.fold, slot[r].type.c_str(),
                     e.what());
      }
    }
  });

  table.finalize();
  return table;
}

void write_scores_csv(const ScoreTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "model,fold,type,predictive_r2\n";
  for (const ScoreRow& r : table.rows)
    out << r.model << ',' << r.fold << ',' << r.type << ','
        << (r.failed ? "nan" : fmt(r.r2)) << '\n';
  out << "model,type,mean,min,max,folds_used\n";
  for (const ScoreSummary& s : table.summary)
    out << s.model << ',' << s.type << ',' << fmt(s.mean) << ',' << fmt(s.min)
        << ',' << fmt(s.max) << ',' << s.folds_used << '\n';
  if (!out) throw IoError("failed writing " + path);
}

std::vector<CvModel> standard_models(const std::vector<std::string>& names,
                                     const FitOptions& fit_opts) {
  std::vector<CvModel> models;
  models.reserve(names.size());
  for (const std::string& name : names) {
    if (name == "multiplicative")
      models.push_back(make_multiplicative(fit_opts));
    else if (name == "additive")
      models.push_back(make_additive());
    else if (name == "dyad")
      models.push_back(make_dyad(fit_opts));
    else if (name == "separate")
      models.push_back(make_separate(fit_opts));
    else if (name == "zero")
      models.push_back(make_zero());
    else
      throw InvalidError("unknown model name: " + name);
  }
  return models;
}

ScoreTable compare_additive_multiplicative(const RegressionDataset& data,
                                           const SplitPlan& plan,
                                           const FitOptions& fit_opts,
                                           const CvOptions& cv_opts) {
  CvOptions opts = cv_opts;
  opts.in_sample = true;
  return cross_validate(
      data, standard_models({"multiplicative", "additive", "dyad"}, fit_opts),
      plan, opts);
}

}  // namespace tenreg

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tenreg/als.hpp"

namespace tenreg {

/// 1 - SS_res / SS_tot with SS_tot taken about zero (callers demean first).
/// Can be negative. Masked entries are ignored; zero total variation is an
/// error.
double r_squared(const DenseTensor& y, const DenseTensor& yhat,
                 const DenseTensor* mask = nullptr);

/// Test replicates per fold, sampled uniformly without replacement.
/// Disjoint folds when folds * test_size <= n, otherwise each fold is an
/// independent draw and `disjoint` is false.
struct SplitPlan {
  Index n = 0;
  std::vector<std::vector<Index>> test_folds;
  bool disjoint = true;
  std::uint64_t seed = 0;
};
SplitPlan make_splits(Index n, int folds, Index test_size, std::uint64_t seed);

/// A model is anything that fits on a training set and returns a predictor
/// mapping a test X tensor to Yhat.
using PredictFn = std::function<DenseTensor(const DenseTensor&)>;
struct CvModel {
  std::string name;
  std::function<PredictFn(const RegressionDataset& train, std::uint64_t seed)>
      fit;
};

enum class DemeanMode { train, full };

struct ScoreRow {
  std::string model;
  int fold = 0;  // -1 marks in-sample rows
  std::string type;
  double r2 = 0.0;
  bool failed = false;
};
struct ScoreSummary {
  std::string model;
  std::string type;
  double mean = 0, min = 0, max = 0;
  int folds_used = 0;
};
struct ScoreTable {
  std::vector<ScoreRow> rows;
  std::vector<ScoreSummary> summary;

  void finalize();  // rebuilds the summary block from non-failed CV rows
};

struct CvOptions {
  DemeanMode demean = DemeanMode::train;
  int threads = 0;
  std::vector<std::string> type_labels;  // defaults to type_1..type_J
  bool in_sample = false;                // add fold = -1 full-data rows
  std::uint64_t seed = 0;
};

/// Per-type scores appear when Y has a type mode (order >= 4); an
/// "overall" row always does. A model that throws on some fold gets a
/// failed row and a warning, and that fold is left out of its summary.
ScoreTable cross_validate(const RegressionDataset& data,
                          const std::vector<CvModel>& models,
                          const SplitPlan& plan, const CvOptions& opts = {});

/// Rows `model,fold,type,predictive_r2`, then a summary block with mean
/// and min/max per model and type.
void write_scores_csv(const ScoreTable& table, const std::string& path);

/// Built-in model lookup: multiplicative (alternating least squares),
/// additive, dyad, separate (per-type bilinear), zero.
std::vector<CvModel> standard_models(const std::vector<std::string>& names,
                                     const FitOptions& fit_opts);

/// The shared-vs-cellwise bake-off: multiplicative, additive, and per-dyad
/// models under one split plan, with in-sample rows included.
ScoreTable compare_additive_multiplicative(const RegressionDataset& data,
                                           const SplitPlan& plan,
                                           const FitOptions& fit_opts = {},
                                           const CvOptions& cv_opts = {});

}  // namespace tenreg

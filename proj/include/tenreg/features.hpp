#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tenreg/dataset.hpp"

namespace tenreg {

/// Directed event counts y[i1,i2,j,t]: sender, receiver, action type,
/// period. When diagonal_defined is false the i1 == i2 cells are
/// meaningless and are masked out of everything downstream.
struct EventPanel {
  std::vector<std::string> nodes;
  std::vector<std::string> types;
  std::vector<std::string> periods;
  DenseTensor counts;  // m x m x J x T
  bool diagonal_defined = false;
};

struct IngestOptions {
  bool include_diagonal = false;
  // Explicit label orders (one label per line in the order files). Default
  // is lexicographic for nodes and types; periods sort numerically when
  // every label parses as an integer, lexicographically otherwise.
  std::vector<std::string> node_order, type_order, period_order;
};

/// Reads `source,target,type,period,count` CSV (header required, columns in
/// any order). Duplicate cells are summed with a warning; negative counts
/// and unknown columns are errors with the offending line number.
EventPanel ingest_events(std::istream& in, const IngestOptions& opts = {});
EventPanel ingest_events_file(const std::string& path,
                              const IngestOptions& opts = {});

/// Rank based map to normal scores: value with average rank r goes to
/// Phi^{-1}(r / (n + 1)). Constant series map to all zeros.
std::vector<double> quantile_transform(std::span<const double> series);

enum class DemeanStage { after, before, none };

struct PredictorSpec {
  bool lag1 = true;
  bool reciprocal = false;
  bool transitivity = false;
  bool monthly = false;
  int monthly_window = 4;
  bool quantile = true;  // normal-score transform of the panel
  DemeanStage demean = DemeanStage::after;  // relative to the transform

  void validate() const;  // needs at least one of lag1/reciprocal/transitivity
};

/// Per-series (fixed i1,i2,j) operations on an m x m x J x T panel.
/// skip_diagonal leaves i1 == i2 series untouched (they stay zero).
DenseTensor transform_panel(const DenseTensor& panel, bool skip_diagonal);
DenseTensor demean_panel(const DenseTensor& panel, bool skip_diagonal);

/// Lag-1 alignment: x takes periods 1..T-1, y takes 2..T.
struct LagPair {
  DenseTensor x, y;
};
LagPair build_lag1(const DenseTensor& panel);

/// Appends the transposed-dyad copy of every slice: slice F+j is slice j
/// with sender and receiver swapped.
DenseTensor append_reciprocal(const DenseTensor& x);

/// Appends two-path counts built from the lagged panel: for each type,
/// sum_{i3} (y[i1,i3] + y[i3,i1]) (y[i2,i3] + y[i3,i2]), with i3 skipping
/// i1 and i2 when the diagonal is undefined. The new slices are then
/// normal-score transformed so all predictors share a scale.
DenseTensor append_transitivity(const DenseTensor& x, const DenseTensor& lagged,
                                bool skip_diagonal);

/// Stacks a two-level timescale mode: level 1 is the aligned slice, level
/// 2 the trailing `window` average. Leading replicates without a full
/// window are dropped, so the replication length shrinks by `window`.
DenseTensor monthly_stack(const DenseTensor& x, int window);

/// Inserts a size-1 mode at `position` (0-based), keeping the data layout.
DenseTensor add_singleton_mode(const DenseTensor& t, int position);

/// Drops the first `drop` replicates (trailing mode).
DenseTensor drop_leading_replicates(const DenseTensor& t, Index drop);

/// Full predictor construction. With everything enabled on an
/// m x m x J x T panel: X is m x m x 3J x 2 x (T-1-window) and Y is
/// m x m x J x 1 x (T-1-window), with a diagonal mask when the panel's
/// diagonal is undefined.
RegressionDataset build_dataset(const EventPanel& panel,
                                const PredictorSpec& spec);

}  // namespace tenreg

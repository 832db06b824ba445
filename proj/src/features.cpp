#include "tenreg/features.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tenreg/errors.hpp"
#include "tenreg/rng.hpp"

namespace tenreg {

namespace {

void require_panel(const DenseTensor& t, const char* who) {
  if (t.order() != 4)
    throw InvalidError(std::string(who) + ": expected a 4-mode panel");
}

void require_square(const DenseTensor& t, const char* who) {
  if (t.dim(0) != t.dim(1))
    throw InvalidError(std::string(who) +
                       ": the relational modes must be square");
}

// applies fn to every (i1, i2, j) series of a 4-mode panel, in place
template <typename Fn>
void for_each_series(DenseTensor& panel, bool skip_diagonal, Fn&& fn) {
  const Index m1 = panel.dim(0), m2 = panel.dim(1), j = panel.dim(2),
              t = panel.dim(3);
  const Index step = m1 * m2 * j;
  std::vector<double> series(t);
  for (Index jj = 0; jj < j; ++jj)
    for (Index i2 = 0; i2 < m2; ++i2)
      for (Index i1 = 0; i1 < m1; ++i1) {
        if (skip_diagonal && i1 == i2) continue;
        const Index base = i1 + m1 * (i2 + m2 * jj);
        for (Index r = 0; r < t; ++r) series[r] = panel[base + step * r];
        fn(series);
        for (Index r = 0; r < t; ++r) panel[base + step * r] = series[r];
      }
}

std::string trimmed(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(trimmed(line.substr(start)));
      break;
    }
    out.push_back(trimmed(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

bool parse_integer(const std::string& s, long long& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+' || *first == '-') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) return false;
  if (s[0] == '-') out = -out;
  return true;
}

// label -> index map honoring an explicit order when one is given,
// otherwise sorted; periods get numeric order when every label is an
// integer
std::vector<std::string> ordered_labels(
    const std::map<std::string, Index>& seen,
    const std::vector<std::string>& explicit_order, bool numeric_fallback,
    const char* what) {
  if (!explicit_order.empty()) {
    std::map<std::string, Index> given;
    for (Index i = 0; i < static_cast<Index>(explicit_order.size()); ++i)
      if (!given.emplace(explicit_order[i], i).second)
        throw ParseError(std::string(what) + " order repeats \"" +
                         explicit_order[i] + "\"");
    for (const auto& [label, unused] : seen)
      if (!given.count(label))
        throw ParseError(std::string(what) + " \"" + label +
                         "\" is missing from the explicit order");
    return explicit_order;
  }
  std::vector<std::string> labels;
  labels.reserve(seen.size());
  for (const auto& [label, unused] : seen) labels.push_back(label);
  if (numeric_fallback) {
    std::vector<long long> nums(labels.size());
    bool all_numeric = true;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (!parse_integer(labels[i], nums[i])) {
        all_numeric = false;
        break;
      }
    if (all_numeric) {
      std::vector<std::size_t> idx(labels.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return nums[a] != nums[b] ? nums[a] < nums[b]
                                  : labels[a] < labels[b];
      });
      std::vector<std::string> out;
      out.reserve(labels.size());
      for (std::size_t i : idx) out.push_back(labels[i]);
      return out;
    }
  }
  return labels;  // std::map already yields lexicographic order
}

struct RawEvent {
  std::string source, target, type, period;
  double count = 0;
  int line = 0;
};

}  // namespace

void PredictorSpec::validate() const {
  if (!lag1 && !reciprocal && !transitivity)
    throw InvalidError(
        "at least one of the lag, reciprocal, or transitivity predictors "
        "must be enabled");
  if (monthly && monthly_window < 1)
    throw InvalidError("the trailing window must cover at least one period");
}

std::vector<double> quantile_transform(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n == 0) throw InvalidError("cannot transform an empty series");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return series[a] < series[b];
  });
  // average ranks across ties, then the inverse normal of r / (n + 1)
  std::vector<double> out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && series[idx[j + 1]] == series[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double score =
        normal_quantile(rank / static_cast<double>(n + 1));
    for (std::size_t k = i; k <= j; ++k) out[idx[k]] = score;
    i = j + 1;
  }
  return out;
}

DenseTensor transform_panel(const DenseTensor& panel, bool skip_diagonal) {
  require_panel(panel, "transform_panel");
  if (skip_diagonal) require_square(panel, "transform_panel");
  DenseTensor out = panel;
  for_each_series(out, skip_diagonal, [](std::vector<double>& s) {
    std::vector<double> scored = quantile_transform(s);
    s.swap(scored);
  });
  return out;
}

DenseTensor demean_panel(const DenseTensor& panel, bool skip_diagonal) {
  require_panel(panel, "demean_panel");
  if (skip_diagonal) require_square(panel, "demean_panel");
  DenseTensor out = panel;
  for_each_series(out, skip_diagonal, [](std::vector<double>& s) {
    double mean = 0;
    for (double v : s) mean += v;
    mean /= static_cast<double>(s.size());
    for (double& v : s) v -= mean;
  });
  return out;
}

LagPair build_lag1(const DenseTensor& panel) {
  require_panel(panel, "build_lag1");
  const Index t = panel.dim(3);
  if (t < 2)
    throw InvalidError("lagging needs at least two periods");
  const Index block = panel.dim(0) * panel.dim(1) * panel.dim(2);
  LagPair out;
  std::vector<Index> dims = panel.dims();
  dims[3] = t - 1;
  out.x = DenseTensor(dims);
  out.y = DenseTensor(dims);
  std::memcpy(out.x.data(), panel.data(),
              sizeof(double) * static_cast<std::size_t>(block * (t - 1)));
  std::memcpy(out.y.data(), panel.data() + block,
              sizeof(double) * static_cast<std::size_t>(block * (t - 1)));
  return out;
}

DenseTensor append_reciprocal(const DenseTensor& x) {
  require_panel(x, "append_reciprocal");
  require_square(x, "append_reciprocal");
  const Index m = x.dim(0), f = x.dim(2), t = x.dim(3);
  DenseTensor out({m, m, 2 * f, t});
  const Index in_block = m * m * f;
  const Index out_block = 2 * in_block;
  for (Index r = 0; r < t; ++r) {
    std::memcpy(out.data() + out_block * r, x.data() + in_block * r,
                sizeof(double) * static_cast<std::size_t>(in_block));
    for (Index j = 0; j < f; ++j)
      for (Index i2 = 0; i2 < m; ++i2)
        for (Index i1 = 0; i1 < m; ++i1)
          out[i1 + m * (i2 + m * (f + j)) + out_block * r] =
              x[i2 + m * (i1 + m * j) + in_block * r];
  }
  return out;
}

DenseTensor append_transitivity(const DenseTensor& x, const DenseTensor& lagged,
                                bool skip_diagonal) {
  require_panel(x, "append_transitivity");
  require_panel(lagged, "append_transitivity");
  require_square(x, "append_transitivity");
  require_square(lagged, "append_transitivity");
  const Index m = x.dim(0), f = x.dim(2), t = x.dim(3);
  const Index j = lagged.dim(2);
  if (lagged.dim(0) != m || lagged.dim(3) != t)
    throw InvalidError(
        "append_transitivity: the lagged panel does not line up with the "
        "predictor stack");

  DenseTensor out({m, m, f + j, t});
  const Index in_block = m * m * f;
  const Index out_block = m * m * (f + j);
  const Index lag_block = m * m * j;
  for (Index r = 0; r < t; ++r)
    std::memcpy(out.data() + out_block * r, x.data() + in_block * r,
                sizeof(double) * static_cast<std::size_t>(in_block));

  // two-path scores: z = S S with S = Y + Y^T, dropping the i3 = i1 and
  // i3 = i2 terms when self-relations are undefined
  for (Index jj = 0; jj < j; ++jj)
    for (Index r = 0; r < t; ++r) {
      Eigen::MatrixXd y(m, m);
      for (Index i2 = 0; i2 < m; ++i2)
        for (Index i1 = 0; i1 < m; ++i1)
          y(i1, i2) = lagged[i1 + m * (i2 + m * jj) + lag_block * r];
      Eigen::MatrixXd s = y + y.transpose();
      Eigen::MatrixXd z = s * s;
      if (skip_diagonal)
        for (Index i2 = 0; i2 < m; ++i2)
          for (Index i1 = 0; i1 < m; ++i1)
            z(i1, i2) -= s(i1, i1) * s(i2, i1) + s(i1, i2) * s(i2, i2);
      for (Index i2 = 0; i2 < m; ++i2)
        for (Index i1 = 0; i1 < m; ++i1)
          out[i1 + m * (i2 + m * (f + jj)) + out_block * r] =
              (skip_diagonal && i1 == i2) ? 0.0 : z(i1, i2);
    }

  // bring the new slices onto the same scale as the transformed panel
  const Index step = out_block;
  std::vector<double> series(t);
  for (Index jj = f; jj < f + j; ++jj)
    for (Index i2 = 0; i2 < m; ++i2)
      for (Index i1 = 0; i1 < m; ++i1) {
        if (skip_diagonal && i1 == i2) continue;
        const Index base = i1 + m * (i2 + m * jj);
        for (Index r = 0; r < t; ++r) series[r] = out[base + step * r];
        std::vector<double> scored = quantile_transform(series);
        for (Index r = 0; r < t; ++r) out[base + step * r] = scored[r];
      }
  return out;
}

DenseTensor monthly_stack(const DenseTensor& x, int window) {
  require_panel(x, "monthly_stack");
  if (window < 1)
    throw InvalidError("the trailing window must cover at least one period");
  const Index m1 = x.dim(0), m2 = x.dim(1), f = x.dim(2), t = x.dim(3);
  if (t <= window)
    throw InvalidError("the panel is shorter than the trailing window");
  const Index kept = t - window;
  DenseTensor out({m1, m2, f, 2, kept});
  const Index block = m1 * m2 * f;
  for (Index o = 0; o < kept; ++o) {
    const Index r = o + window;
    for (Index b = 0; b < block; ++b) {
      out[b + block * (0 + 2 * o)] = x[b + block * r];
      double acc = 0;
      for (Index w = 1; w <= window; ++w) acc += x[b + block * (r - w)];
      out[b + block * (1 + 2 * o)] = acc / static_cast<double>(window);
    }
  }
  return out;
}

DenseTensor add_singleton_mode(const DenseTensor& t, int position) {
  if (position < 0 || position > t.order())
    throw InvalidError("singleton position is out of range");
  std::vector<Index> dims = t.dims();
  dims.insert(dims.begin() + position, 1);
  DenseTensor out(dims);
  std::memcpy(out.data(), t.data(),
              sizeof(double) * static_cast<std::size_t>(t.size()));
  return out;
}

DenseTensor drop_leading_replicates(const DenseTensor& t, Index drop) {
  if (t.order() < 1) throw InvalidError("cannot drop from a scalar tensor");
  const Index reps = t.dim(t.order() - 1);
  if (drop < 0 || drop >= reps)
    throw InvalidError("cannot drop " + std::to_string(drop) + " of " +
                       std::to_string(reps) + " replicates");
  std::vector<Index> dims = t.dims();
  dims.back() = reps - drop;
  const Index block = t.size() / reps;
  DenseTensor out(dims);
  std::memcpy(out.data(), t.data() + block * drop,
              sizeof(double) * static_cast<std::size_t>(out.size()));
  return out;
}

EventPanel ingest_events(std::istream& in, const IngestOptions& opts) {
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("event stream is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  // header: the five named columns, any order
  const std::vector<std::string> header = split_csv(line);
  int col_source = -1, col_target = -1, col_type = -1, col_period = -1,
      col_count = -1;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string& name = header[c];
    int* slot = nullptr;
    if (name == "source") slot = &col_source;
    else if (name == "target") slot = &col_target;
    else if (name == "type") slot = &col_type;
    else if (name == "period") slot = &col_period;
    else if (name == "count") slot = &col_count;
    if (!slot)
      throw ParseError("line 1: unknown column \"" + name + "\"");
    if (*slot != -1)
      throw ParseError("line 1: column \"" + name + "\" repeats");
    *slot = c;
  }
  if (col_source < 0 || col_target < 0 || col_type < 0 || col_period < 0 ||
      col_count < 0)
    throw ParseError(
        "line 1: need the source, target, type, period, and count columns");

  std::vector<RawEvent> events;
  std::map<std::string, Index> nodes, types, periods;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trimmed(line).empty()) continue;
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != header.size())
      throw ParseError("line " + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(f.size()));
    RawEvent ev;
    ev.source = f[col_source];
    ev.target = f[col_target];
    ev.type = f[col_type];
    ev.period = f[col_period];
    ev.line = lineno;
    if (ev.source.empty() || ev.target.empty() || ev.type.empty() ||
        ev.period.empty())
      throw ParseError("line " + std::to_string(lineno) + ": empty label");
    if (!opts.include_diagonal && ev.source == ev.target)
      throw ParseError("line " + std::to_string(lineno) +
                       ": self event for \"" + ev.source +
                       "\" but the diagonal is excluded; pass "
                       "include_diagonal to keep it");
    try {
      std::size_t used = 0;
      ev.count = std::stod(f[col_count], &used);
      if (used != f[col_count].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(lineno) +
                       ": count \"" + f[col_count] + "\" is not a number");
    }
    if (!(ev.count >= 0) || !std::isfinite(ev.count))
      throw ParseError("line " + std::to_string(lineno) +
                       ": count must be nonnegative");
    nodes.emplace(ev.source, 0);
    nodes.emplace(ev.target, 0);
    types.emplace(ev.type, 0);
    periods.emplace(ev.period, 0);
    events.push_back(std::move(ev));
  }
  if (events.empty()) throw ParseError("event stream has no rows");

  EventPanel panel;
  panel.nodes = ordered_labels(nodes, opts.node_order, false, "node");
  panel.types = ordered_labels(types, opts.type_order, false, "type");
  panel.periods = ordered_labels(periods, opts.period_order, true, "period");
  panel.diagonal_defined = opts.include_diagonal;

  std::map<std::string, Index> node_at, type_at, period_at;
  for (Index i = 0; i < static_cast<Index>(panel.nodes.size()); ++i)
    node_at[panel.nodes[i]] = i;
  for (Index i = 0; i < static_cast<Index>(panel.types.size()); ++i)
    type_at[panel.types[i]] = i;
  for (Index i = 0; i < static_cast<Index>(panel.periods.size()); ++i)
    period_at[panel.periods[i]] = i;

  const Index m = static_cast<Index>(panel.nodes.size());
  const Index j = static_cast<Index>(panel.types.size());
  const Index t = static_cast<Index>(panel.periods.size());
  panel.counts = DenseTensor({m, m, j, t});
  std::vector<bool> filled(static_cast<std::size_t>(panel.counts.size()));
  Index duplicates = 0;
  int first_duplicate_line = 0;
  for (const RawEvent& ev : events) {
    const Index flat =
        node_at[ev.source] +
        m * (node_at[ev.target] +
             m * (type_at[ev.type] + j * period_at[ev.period]));
    if (filled[static_cast<std::size_t>(flat)]) {
      ++duplicates;
      if (first_duplicate_line == 0) first_duplicate_line = ev.line;
    }
    filled[static_cast<std::size_t>(flat)] = true;
    panel.counts[flat] += ev.count;
  }
  if (duplicates > 0)
    std::cerr << "warning: " << duplicates
              << " duplicate event cells were summed (first at line "
              << first_duplicate_line << ")\n";
  return panel;
}

EventPanel ingest_events_file(const std::string& path,
                              const IngestOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return ingest_events(in, opts);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

RegressionDataset build_dataset(const EventPanel& panel,
                                const PredictorSpec& spec) {
  spec.validate();
  require_panel(panel.counts, "build_dataset");
  require_square(panel.counts, "build_dataset");
  const Index m = panel.counts.dim(0), j = panel.counts.dim(2);
  const bool skip = !panel.diagonal_defined;

  DenseTensor work = panel.counts;
  if (skip) {
    // undefined cells must not leak into any predictor, whatever the
    // caller left in them
    const Index block = m * m;
    for (Index s = 0; s < work.size() / block; ++s)
      for (Index i = 0; i < m; ++i) work[i + m * i + block * s] = 0.0;
  }
  if (spec.demean == DemeanStage::before) work = demean_panel(work, skip);
  if (spec.quantile) work = transform_panel(work, skip);
  if (spec.demean == DemeanStage::after) work = demean_panel(work, skip);

  LagPair lag = build_lag1(work);
  DenseTensor x = lag.x;
  if (spec.reciprocal) x = append_reciprocal(x);
  if (spec.transitivity) x = append_transitivity(x, lag.x, skip);
  if (!spec.lag1) {
    // the lag block anchored the appends; cut it loose now
    const Index f = x.dim(2);
    DenseTensor cut({m, m, f - j, x.dim(3)});
    const Index in_block = m * m * f, out_block = m * m * (f - j);
    for (Index r = 0; r < x.dim(3); ++r)
      std::memcpy(cut.data() + out_block * r,
                  x.data() + in_block * r + m * m * j,
                  sizeof(double) * static_cast<std::size_t>(out_block));
    x = std::move(cut);
  }

  RegressionDataset data;
  if (spec.monthly) {
    data.X = monthly_stack(x, spec.monthly_window);
    data.Y = add_singleton_mode(
        drop_leading_replicates(lag.y, spec.monthly_window), 3);
  } else {
    data.X = std::move(x);
    data.Y = std::move(lag.y);
  }

  if (skip) {
    DenseTensor mask(data.Y.dims());
    const Index block = m * m;
    for (Index i = 0; i < mask.size(); ++i)
      mask[i] = (i % block % m == i % block / m) ? 0.0 : 1.0;
    data.mask = std::move(mask);
  }
  data.validate();
  return data;
}

}  // namespace tenreg

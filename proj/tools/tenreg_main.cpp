// Command line front end for the tensor regression library.
//
// Five subcommands (ingest, fit, gibbs, cv, diagnose) wrap the C API in
// include/tenreg.h. Every run creates its --out directory, echoes the
// resolved configuration to out/config.resolved (a key=value file that can
// be fed back through --config), and writes nothing anywhere else. Given
// the same configuration a rerun produces byte-identical outputs.
//
// Exit codes: 0 success, 2 I/O, 3 unusable input (bad flags, malformed
// files, shape mismatches), 4 numerical failure, 5 sampler failure.

#include <tenreg.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// unique_ptr aliases so early returns cannot leak C handles
template <typename T, void (*Free)(T*)>
struct FreeWith {
  void operator()(T* p) const { Free(p); }
};
template <typename T, void (*Free)(T*)>
using Handle = std::unique_ptr<T, FreeWith<T, Free>>;

using TensorPtr = Handle<tenreg_tensor, tenreg_tensor_free>;
using FactorsPtr = Handle<tenreg_factors, tenreg_factors_free>;
using CovariancePtr = Handle<tenreg_covariance, tenreg_covariance_free>;
using FitPtr = Handle<tenreg_fit_result, tenreg_fit_result_free>;
using SummaryPtr = Handle<tenreg_summary, tenreg_summary_free>;
using PanelPtr = Handle<tenreg_panel, tenreg_panel_free>;
using ScoresPtr = Handle<tenreg_scores, tenreg_scores_free>;
using DiagPtr = Handle<tenreg_diag, tenreg_diag_free>;

// The process exit table reserves 1 for the shell, so invalid-argument
// failures from the library exit 3 alongside parse errors.
int exit_code(tenreg_status s) {
  return s == TENREG_ERR_INVALID ? 3 : static_cast<int>(s);
}

int fail(tenreg_status s) {
  std::fprintf(stderr, "error: %s\n", tenreg_last_error());
  return exit_code(s);
}

int fail_io(const std::string& what) {
  std::fprintf(stderr, "error: %s\n", what.c_str());
  return 2;
}

int prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) return fail_io("cannot create " + out + ": " + ec.message());
  return 0;
}

// Required flags are checked here rather than by the parser so that a
// --config file can supply them after the first parse.
int require_arg(const std::string& value, const char* flag) {
  if (!value.empty()) return 0;
  std::fprintf(stderr, "error: %s is required\n", flag);
  return 3;
}

// Key=value lines in insertion order; empty string values are omitted so
// unset optional paths do not appear. Doubles print in shortest
// round-trip form.
class ResolvedConfig {
 public:
  void add(const char* key, const std::string& v) {
    if (!v.empty()) lines_.push_back(std::string(key) + "=" + v);
  }
  void add(const char* key, const char* v) { add(key, std::string(v)); }
  void add(const char* key, bool v) { add(key, std::string(v ? "true" : "false")); }
  void add(const char* key, int v) { add(key, std::to_string(v)); }
  void add(const char* key, std::int64_t v) { add(key, std::to_string(v)); }
  void add(const char* key, std::uint64_t v) { add(key, std::to_string(v)); }
  void add(const char* key, double v) { add(key, json(v).dump()); }

  int write(const fs::path& path) const {
    std::ofstream out(path);
    for (const std::string& line : lines_) out << line << '\n';
    if (!out.good()) return fail_io("cannot write " + path.string());
    return 0;
  }

 private:
  std::vector<std::string> lines_;
};

int write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out.good()) return fail_io("cannot write " + path.string());
  return 0;
}

int load_tensor(const std::string& path, TensorPtr* out) {
  tenreg_tensor* raw = nullptr;
  tenreg_status s = tenreg_tensor_read(path.c_str(), &raw);
  if (s != TENREG_OK) return fail(s);
  out->reset(raw);
  return 0;
}

// Optional input: empty path leaves *out null.
int load_optional_tensor(const std::string& path, TensorPtr* out) {
  if (path.empty()) return 0;
  return load_tensor(path, out);
}

int read_label_file(const std::string& path, std::vector<std::string>* out) {
  std::ifstream in(path);
  if (!in) return fail_io("cannot open " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out->push_back(line);
  }
  return 0;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

// key=value lines with blank lines and # comments; values may be quoted.
int read_config_pairs(const std::string& path,
                      std::vector<std::pair<std::string, std::string>>* out) {
  std::ifstream in(path);
  if (!in) return fail_io("cannot open config " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos || trim(t.substr(0, eq)).empty()) {
      std::fprintf(stderr, "error: %s line %d: expected key=value\n",
                   path.c_str(), lineno);
      return 3;
    }
    std::string val = trim(t.substr(eq + 1));
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
      val = val.substr(1, val.size() - 2);
    out->emplace_back(trim(t.substr(0, eq)), val);
  }
  return 0;
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  out.reserve(v.size());
  for (const std::string& s : v) out.push_back(s.c_str());
  return out;
}

// ---- ingest --------------------------------------------------------------

struct IngestArgs {
  std::string events;
  std::string out;
  bool include_diagonal = false;
  std::string node_order, type_order, period_order;  // label files, optional
  bool lag1 = true;
  bool reciprocal = false;
  bool transitivity = false;
  bool monthly = false;
  int monthly_window = 4;
  bool quantile = true;
  std::string demean = "after";
};

tenreg_demean_stage demean_stage(const std::string& name) {
  if (name == "before") return TENREG_DEMEAN_BEFORE;
  if (name == "none") return TENREG_DEMEAN_NONE;
  return TENREG_DEMEAN_AFTER;
}

int cmd_ingest(const IngestArgs& a) {
  if (int rc = require_arg(a.events, "--events")) return rc;
  if (int rc = require_arg(a.out, "--out")) return rc;
  if (int rc = prepare_out(a.out)) return rc;
  const fs::path outp(a.out);

  ResolvedConfig cfg;
  cfg.add("events", a.events);
  cfg.add("include-diagonal", a.include_diagonal);
  cfg.add("node-order", a.node_order);
  cfg.add("type-order", a.type_order);
  cfg.add("period-order", a.period_order);
  cfg.add("lag1", a.lag1);
  cfg.add("reciprocal", a.reciprocal);
  cfg.add("transitivity", a.transitivity);
  cfg.add("monthly", a.monthly);
  cfg.add("monthly-window", a.monthly_window);
  cfg.add("quantile", a.quantile);
  cfg.add("demean", a.demean);
  if (int rc = cfg.write(outp / "config.resolved")) return rc;

  std::vector<std::string> nodes, types, periods;
  if (!a.node_order.empty())
    if (int rc = read_label_file(a.node_order, &nodes)) return rc;
  if (!a.type_order.empty())
    if (int rc = read_label_file(a.type_order, &types)) return rc;
  if (!a.period_order.empty())
    if (int rc = read_label_file(a.period_order, &periods)) return rc;
  auto node_ptrs = c_strings(nodes);
  auto type_ptrs = c_strings(types);
  auto period_ptrs = c_strings(periods);

  tenreg_panel* praw = nullptr;
  tenreg_status s = tenreg_ingest_events(
      a.events.c_str(), a.include_diagonal ? 1 : 0,
      nodes.empty() ? nullptr : node_ptrs.data(), nodes.size(),
      types.empty() ? nullptr : type_ptrs.data(), types.size(),
      periods.empty() ? nullptr : period_ptrs.data(), periods.size(), &praw);
  if (s != TENREG_OK) return fail(s);
  PanelPtr panel(praw);

  tenreg_tensor* craw = nullptr;
  if ((s = tenreg_panel_counts(panel.get(), &craw)) != TENREG_OK)
    return fail(s);
  TensorPtr counts(craw);
  if ((s = tenreg_tensor_write(counts.get(),
                               (outp / "panel.tnsr").string().c_str())) !=
      TENREG_OK)
    return fail(s);

  tenreg_predictor_spec spec;
  tenreg_predictor_spec_default(&spec);
  spec.lag1 = a.lag1 ? 1 : 0;
  spec.reciprocal = a.reciprocal ? 1 : 0;
  spec.transitivity = a.transitivity ? 1 : 0;
  spec.monthly = a.monthly ? 1 : 0;
  spec.monthly_window = a.monthly_window;
  spec.quantile = a.quantile ? 1 : 0;
  spec.demean = demean_stage(a.demean);

  tenreg_tensor *xraw = nullptr, *yraw = nullptr, *mraw = nullptr;
  if ((s = tenreg_build_dataset(panel.get(), &spec, &xraw, &yraw, &mraw)) !=
      TENREG_OK)
    return fail(s);
  TensorPtr x(xraw), y(yraw), mask(mraw);
  if ((s = tenreg_tensor_write(x.get(), (outp / "X.tnsr").string().c_str())) !=
      TENREG_OK)
    return fail(s);
  if ((s = tenreg_tensor_write(y.get(), (outp / "Y.tnsr").string().c_str())) !=
      TENREG_OK)
    return fail(s);
  if (mask &&
      (s = tenreg_tensor_write(mask.get(),
                               (outp / "mask.tnsr").string().c_str())) !=
          TENREG_OK)
    return fail(s);

  std::int64_t dims[4] = {0, 0, 0, 0};
  if ((s = tenreg_panel_dims(panel.get(), dims)) != TENREG_OK) return fail(s);

  json manifest;
  manifest["diagonal_defined"] =
      tenreg_panel_diagonal_defined(panel.get()) != 0;
  manifest["dims"] = {{"nodes", dims[0]}, {"types", dims[2]},
                      {"periods", dims[3]}};
  json node_labels = json::array(), type_labels = json::array(),
       period_labels = json::array();
  for (std::int64_t i = 0; i < dims[0]; ++i)
    node_labels.push_back(tenreg_panel_node(panel.get(), i));
  for (std::int64_t i = 0; i < dims[2]; ++i)
    type_labels.push_back(tenreg_panel_type(panel.get(), i));
  for (std::int64_t i = 0; i < dims[3]; ++i)
    period_labels.push_back(tenreg_panel_period(panel.get(), i));
  manifest["nodes"] = node_labels;
  manifest["types"] = type_labels;
  manifest["periods"] = period_labels;
  manifest["spec"] = {{"lag1", a.lag1},
                      {"reciprocal", a.reciprocal},
                      {"transitivity", a.transitivity},
                      {"monthly", a.monthly},
                      {"monthly_window", a.monthly_window},
                      {"quantile", a.quantile},
                      {"demean", a.demean}};
  json files = {{"panel", "panel.tnsr"}, {"x", "X.tnsr"}, {"y", "Y.tnsr"}};
  if (mask) files["mask"] = "mask.tnsr";
  manifest["files"] = files;
  return write_json(outp / "manifest.json", manifest);
}

// ---- fit -------------------------------------------------------------------

struct FitArgs {
  std::string x, y, mask;
  std::string method = "als";
  std::string out;
  double tol = 1e-8;
  int max_sweeps = 500;
  std::uint64_t seed = 0;
  double ridge = 1e-8;
  bool identity_init = false;
};

int cmd_fit(const FitArgs& a) {
  if (int rc = require_arg(a.x, "--x")) return rc;
  if (int rc = require_arg(a.y, "--y")) return rc;
  if (int rc = require_arg(a.out, "--out")) return rc;
  if (int rc = prepare_out(a.out)) return rc;
  const fs::path outp(a.out);

  ResolvedConfig cfg;
  cfg.add("x", a.x);
  cfg.add("y", a.y);
  cfg.add("mask", a.mask);
  cfg.add("method", a.method);
  cfg.add("tol", a.tol);
  cfg.add("max-sweeps", a.max_sweeps);
  cfg.add("seed", a.seed);
  cfg.add("ridge", a.ridge);
  cfg.add("identity-init", a.identity_init);
  if (int rc = cfg.write(outp / "config.resolved")) return rc;

  TensorPtr x, y, mask;
  if (int rc = load_tensor(a.x, &x)) return rc;
  if (int rc = load_tensor(a.y, &y)) return rc;
  if (int rc = load_optional_tensor(a.mask, &mask)) return rc;

  tenreg_fit_options opts;
  tenreg_fit_options_default(&opts);
  opts.tol = a.tol;
  opts.max_sweeps = a.max_sweeps;
  opts.seed = a.seed;
  opts.ridge = a.ridge;
  opts.identity_init = a.identity_init ? 1 : 0;

  tenreg_fit_result* fraw = nullptr;
  tenreg_status s =
      a.method == "gls"
          ? tenreg_fit_gls(x.get(), y.get(), mask.get(), &opts, &fraw)
          : tenreg_fit_als(x.get(), y.get(), mask.get(), &opts, &fraw);
  if (s != TENREG_OK) return fail(s);
  FitPtr fit(fraw);

  tenreg_factors* factors_raw = nullptr;
  if ((s = tenreg_fit_result_factors(fit.get(), &factors_raw)) != TENREG_OK)
    return fail(s);
  FactorsPtr factors(factors_raw);
  if ((s = tenreg_factors_write(factors.get(),
                                (outp / "model.mltrf").string().c_str())) !=
      TENREG_OK)
    return fail(s);

  if (a.method == "gls") {
    tenreg_covariance* craw = nullptr;
    if ((s = tenreg_fit_result_covariance(fit.get(), &craw)) != TENREG_OK)
      return fail(s);
    CovariancePtr cov(craw);
    if ((s = tenreg_covariance_write(
             cov.get(), (outp / "noise.mltrc").string().c_str())) != TENREG_OK)
      return fail(s);
  }

  const std::int64_t trace_len = tenreg_fit_result_trace_len(fit.get());
  const double* trace = tenreg_fit_result_trace(fit.get());
  json report;
  report["method"] = a.method;
  report["objective"] = a.method == "gls" ? "negative log likelihood"
                                          : "residual sum of squares";
  report["objective_trace"] = std::vector<double>(trace, trace + trace_len);
  report["final_objective"] = trace_len > 0 ? trace[trace_len - 1] : 0.0;
  report["sweeps"] = tenreg_fit_result_sweeps(fit.get());
  report["converged"] = tenreg_fit_result_converged(fit.get()) != 0;
  if (int rc = write_json(outp / "report.json", report)) return rc;

  tenreg_tensor* rraw = nullptr;
  if ((s = tenreg_residual(factors.get(), x.get(), y.get(), mask.get(),
                           &rraw)) != TENREG_OK)
    return fail(s);
  TensorPtr resid(rraw);
  if ((s = tenreg_tensor_write(resid.get(),
                               (outp / "residual.tnsr").string().c_str())) !=
      TENREG_OK)
    return fail(s);
  return 0;
}

// ---- gibbs -----------------------------------------------------------------

struct GibbsArgs {
  std::string x, y, mask;
  std::string out;
  int iters = 5500;
  int burnin = 500;
  int chains = 4;
  int thin = 1;
  std::uint64_t seed = 0;
  bool warm_start = true;
  int threads = 0;
  double eta0 = 1.0;
  double tau02 = 1.0;
};

int cmd_gibbs(const GibbsArgs& a) {
  if (int rc = require_arg(a.x, "--x")) return rc;
  if (int rc = require_arg(a.y, "--y")) return rc;
  if (int rc = require_arg(a.out, "--out")) return rc;
  if (int rc = prepare_out(a.out)) return rc;
  const fs::path outp(a.out);

  ResolvedConfig cfg;
  cfg.add("x", a.x);
  cfg.add("y", a.y);
  cfg.add("mask", a.mask);
  cfg.add("iters", a.iters);
  cfg.add("burnin", a.burnin);
  cfg.add("chains", a.chains);
  cfg.add("thin", a.thin);
  cfg.add("seed", a.seed);
  cfg.add("warm-start", a.warm_start);
  cfg.add("threads", a.threads);
  cfg.add("eta0", a.eta0);
  cfg.add("tau02", a.tau02);
  if (int rc = cfg.write(outp / "config.resolved")) return rc;

  TensorPtr x, y, mask;
  if (int rc = load_tensor(a.x, &x)) return rc;
  if (int rc = load_tensor(a.y, &y)) return rc;
  if (int rc = load_optional_tensor(a.mask, &mask)) return rc;

  const std::string store = (outp / "chains").string();
  tenreg_gibbs_options opts;
  tenreg_gibbs_options_default(&opts);
  opts.iterations = a.iters;
  opts.burnin = a.burnin;
  opts.chains = a.chains;
  opts.thin = a.thin;
  opts.seed = a.seed;
  opts.warm_start = a.warm_start ? 1 : 0;
  opts.threads = a.threads;
  opts.store_dir = store.c_str();
  opts.eta0 = a.eta0;
  opts.tau02 = a.tau02;

  // On sampler failure the per-chain files already flushed under
  // out/chains survive for post-mortem inspection.
  tenreg_summary* sraw = nullptr;
  tenreg_status s = tenreg_gibbs(x.get(), y.get(), mask.get(), &opts, &sraw);
  if (s != TENREG_OK) return fail(s);
  SummaryPtr summary(sraw);

  if ((s = tenreg_summary_write_csv(
           summary.get(), (outp / "summary.csv").string().c_str())) !=
      TENREG_OK)
    return fail(s);

  json report;
  report["chains"] = a.chains;
  report["stored_draws_per_chain"] = (a.iters - a.burnin) / a.thin;
  report["entries"] = tenreg_summary_size(summary.get());
  report["max_chain_sd"] = tenreg_summary_max_chain_sd(summary.get());
  return write_json(outp / "report.json", report);
}

// ---- cv --------------------------------------------------------------------

struct CvArgs {
  std::string x, y, mask;
  std::string models = "multiplicative,additive,dyad";
  std::string out;
  int folds = 10;
  std::int64_t test_size = 55;
  std::uint64_t seed = 0;
  bool in_sample = false;
  bool demean_full = false;
  int threads = 0;
};

int cmd_cv(const CvArgs& a) {
  if (int rc = require_arg(a.x, "--x")) return rc;
  if (int rc = require_arg(a.y, "--y")) return rc;
  if (int rc = require_arg(a.out, "--out")) return rc;
  if (int rc = prepare_out(a.out)) return rc;
  const fs::path outp(a.out);

  ResolvedConfig cfg;
  cfg.add("x", a.x);
  cfg.add("y", a.y);
  cfg.add("mask", a.mask);
  cfg.add("models", a.models);
  cfg.add("folds", a.folds);
  cfg.add("test-size", a.test_size);
  cfg.add("seed", a.seed);
  cfg.add("in-sample", a.in_sample);
  cfg.add("demean-full", a.demean_full);
  cfg.add("threads", a.threads);
  if (int rc = cfg.write(outp / "config.resolved")) return rc;

  TensorPtr x, y, mask;
  if (int rc = load_tensor(a.x, &x)) return rc;
  if (int rc = load_tensor(a.y, &y)) return rc;
  if (int rc = load_optional_tensor(a.mask, &mask)) return rc;

  const std::vector<std::string> names = split_commas(a.models);
  const std::vector<const char*> name_ptrs = c_strings(names);

  tenreg_cv_options opts;
  tenreg_cv_options_default(&opts);
  opts.folds = a.folds;
  opts.test_size = a.test_size;
  opts.seed = a.seed;
  opts.in_sample = a.in_sample ? 1 : 0;
  opts.demean_full = a.demean_full ? 1 : 0;
  opts.threads = a.threads;

  tenreg_scores* sraw = nullptr;
  tenreg_status s =
      tenreg_cross_validate(x.get(), y.get(), mask.get(), name_ptrs.data(),
                            name_ptrs.size(), &opts, &sraw);
  if (s != TENREG_OK) return fail(s);
  ScoresPtr scores(sraw);

  if ((s = tenreg_scores_write_csv(
           scores.get(), (outp / "scores.csv").string().c_str())) != TENREG_OK)
    return fail(s);
  return 0;
}

// ---- diagnose ---------------------------------------------------------------

struct DiagArgs {
  std::string residual;
  std::string out;
  int mode = 0;
};

int cmd_diagnose(const DiagArgs& a) {
  if (int rc = require_arg(a.residual, "--residual")) return rc;
  if (int rc = require_arg(a.out, "--out")) return rc;
  if (int rc = prepare_out(a.out)) return rc;
  const fs::path outp(a.out);

  ResolvedConfig cfg;
  cfg.add("residual", a.residual);
  cfg.add("mode", a.mode);
  if (int rc = cfg.write(outp / "config.resolved")) return rc;

  TensorPtr resid;
  if (int rc = load_tensor(a.residual, &resid)) return rc;

  tenreg_diag* draw = nullptr;
  tenreg_status s = tenreg_mode_correlation(resid.get(), a.mode, &draw);
  if (s != TENREG_OK) return fail(s);
  DiagPtr diag(draw);

  if ((s = tenreg_diag_write_csv(
           diag.get(), (outp / "correlation.csv").string().c_str(),
           (outp / "eigen.csv").string().c_str())) != TENREG_OK)
    return fail(s);
  return 0;
}

// All subcommand definitions in one place so the command line can be
// parsed twice: once as typed, and once more with values merged in from a
// --config file (which CLI11 does not consult on subcommands).
struct CliSpec {
  CLI::App app{"multilinear tensor regression for relational panel data"};
  CLI::App *ingest, *fit, *gibbs, *cv, *diagnose;
  IngestArgs ia;
  FitArgs fa;
  GibbsArgs ga;
  CvArgs ca;
  DiagArgs da;
  std::string config;

  CliSpec();
};

CliSpec::CliSpec() {
  app.set_version_flag("--version", std::string(tenreg_version()));
  app.require_subcommand(1);

  IngestArgs& ia = this->ia;
  ingest = app.add_subcommand(
      "ingest", "count an event CSV into panel and predictor tensors");
  ingest->add_option("--config", config,
                     "key=value file; flags take precedence");
  ingest->add_option("--events", ia.events,
                     "CSV with source,target,type,period,count columns");
  ingest->add_option("--out", ia.out, "output directory");
  ingest->add_flag("--include-diagonal", ia.include_diagonal,
                   "treat self-ties as data rather than masking them");
  ingest->add_option("--node-order", ia.node_order,
                     "file with one node label per line");
  ingest->add_option("--type-order", ia.type_order,
                     "file with one type label per line");
  ingest->add_option("--period-order", ia.period_order,
                     "file with one period label per line");
  ingest->add_flag("--lag1,!--no-lag1", ia.lag1,
                   "lagged outcome predictor (default on)");
  ingest->add_flag("--reciprocal", ia.reciprocal,
                   "add transposed-slice predictors");
  ingest->add_flag("--transitivity", ia.transitivity,
                   "add two-path predictors");
  ingest->add_flag("--monthly", ia.monthly,
                   "two-timescale stacking of fine-grained periods");
  ingest->add_option("--monthly-window", ia.monthly_window,
                     "periods per coarse step when --monthly is set")
      ->check(CLI::PositiveNumber);
  ingest->add_flag("--quantile,!--no-quantile", ia.quantile,
                   "normal-score transform of each dyad series (default on)");
  ingest->add_option("--demean", ia.demean,
                     "when to center each dyad series: after, before, none")
      ->check(CLI::IsMember({"after", "before", "none"}));

  FitArgs& fa = this->fa;
  fit = app.add_subcommand(
      "fit", "least squares or maximum likelihood coefficient fit");
  fit->add_option("--config", config, "key=value file; flags take precedence");
  fit->add_option("--x", fa.x, "predictor tensor");
  fit->add_option("--y", fa.y, "response tensor");
  fit->add_option("--mask", fa.mask, "0/1 response mask tensor");
  fit->add_option("--method", fa.method, "als (least squares) or gls")
      ->check(CLI::IsMember({"als", "gls"}));
  fit->add_option("--out", fa.out, "output directory");
  fit->add_option("--tol", fa.tol, "relative objective change at convergence")
      ->check(CLI::PositiveNumber);
  fit->add_option("--max-sweeps", fa.max_sweeps, "sweep budget")
      ->check(CLI::PositiveNumber);
  fit->add_option("--seed", fa.seed, "random initialization seed");
  fit->add_option("--ridge", fa.ridge, "Gram ridge, relative to trace/dim")
      ->check(CLI::NonNegativeNumber);
  fit->add_flag("--identity-init", fa.identity_init,
                "start factors at rectangular identities");

  GibbsArgs& ga = this->ga;
  gibbs = app.add_subcommand(
      "gibbs", "posterior sampling with per-chain disk store");
  gibbs->add_option("--config", config,
                    "key=value file; flags take precedence");
  gibbs->add_option("--x", ga.x, "predictor tensor");
  gibbs->add_option("--y", ga.y, "response tensor");
  gibbs->add_option("--mask", ga.mask, "0/1 response mask tensor");
  gibbs->add_option("--out", ga.out, "output directory");
  gibbs->add_option("--iters", ga.iters, "total sweeps, burn-in included")
      ->check(CLI::PositiveNumber);
  gibbs->add_option("--burnin", ga.burnin, "sweeps discarded from the front")
      ->check(CLI::NonNegativeNumber);
  gibbs->add_option("--chains", ga.chains, "independent chains")
      ->check(CLI::PositiveNumber);
  gibbs->add_option("--thin", ga.thin, "keep every thin-th sweep")
      ->check(CLI::PositiveNumber);
  gibbs->add_option("--seed", ga.seed, "sampler seed");
  gibbs->add_flag("--warm-start,!--no-warm-start", ga.warm_start,
                  "start chain 0 at the least squares fit (default on)");
  gibbs->add_option("--threads", ga.threads,
                    "worker threads; 0 resolves TENREG_THREADS, then hardware")
      ->check(CLI::NonNegativeNumber);
  gibbs->add_option("--eta0", ga.eta0, "noise scale prior weight")
      ->check(CLI::PositiveNumber);
  gibbs->add_option("--tau02", ga.tau02, "noise scale prior location")
      ->check(CLI::PositiveNumber);

  CvArgs& ca = this->ca;
  cv = app.add_subcommand(
      "cv", "cross-validated predictive R^2 for the built-in model lineup");
  cv->add_option("--config", config, "key=value file; flags take precedence");
  cv->add_option("--x", ca.x, "predictor tensor");
  cv->add_option("--y", ca.y, "response tensor");
  cv->add_option("--mask", ca.mask, "0/1 response mask tensor");
  cv->add_option("--out", ca.out, "output directory");
  cv->add_option("--models", ca.models,
                 "comma list of multiplicative, additive, dyad, separate, zero");
  cv->add_option("--folds", ca.folds, "random test folds")
      ->check(CLI::PositiveNumber);
  cv->add_option("--test-size", ca.test_size, "replicates per test fold")
      ->check(CLI::PositiveNumber);
  cv->add_option("--seed", ca.seed, "fold assignment and fit seed");
  cv->add_flag("--in-sample", ca.in_sample,
               "also fit and score on the full data (fold -1)");
  cv->add_flag("--demean-full", ca.demean_full,
               "center with all-data means instead of training means");
  cv->add_option("--threads", ca.threads,
                 "worker threads; 0 resolves TENREG_THREADS, then hardware")
      ->check(CLI::NonNegativeNumber);

  DiagArgs& da = this->da;
  diagnose = app.add_subcommand(
      "diagnose", "residual correlation along one mode, with spectrum");
  diagnose->add_option("--config", config,
                       "key=value file; flags take precedence");
  diagnose->add_option("--residual", da.residual, "residual tensor");
  diagnose->add_option("--out", da.out, "output directory");
  diagnose->add_option("--mode", da.mode, "unfolding mode, counted from zero")
      ->check(CLI::NonNegativeNumber);
}

// -1 when a command should run, otherwise the process exit code (help and
// version leave through here with 0).
int parse_cli(CliSpec& spec, int argc, const char* const* argv) {
  try {
    spec.app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return spec.app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return spec.app.exit(e);
  } catch (const CLI::ParseError& e) {
    spec.app.exit(e);
    return 3;
  }
  return -1;
}

CLI::App* parsed_sub(CliSpec& spec) {
  for (CLI::App* sub :
       {spec.ingest, spec.fit, spec.gibbs, spec.cv, spec.diagnose})
    if (sub->parsed()) return sub;
  return nullptr;
}

int dispatch(CliSpec& spec) {
  if (spec.ingest->parsed()) return cmd_ingest(spec.ia);
  if (spec.fit->parsed()) return cmd_fit(spec.fa);
  if (spec.gibbs->parsed()) return cmd_gibbs(spec.ga);
  if (spec.cv->parsed()) return cmd_cv(spec.ca);
  if (spec.diagnose->parsed()) return cmd_diagnose(spec.da);
  return 3;
}

// Rebuilds the argument list as: subcommand, file-supplied values for
// options absent from the command line, then the original arguments with
// --config dropped. Reparsing the result applies the usual validators to
// file values and keeps flags ahead of the file.
int merge_config_args(CliSpec& spec, const char* const* argv, int argc,
                      std::vector<std::string>* out) {
  CLI::App* sub = parsed_sub(spec);
  std::vector<std::pair<std::string, std::string>> pairs;
  if (int rc = read_config_pairs(spec.config, &pairs)) return rc;

  out->push_back(sub->get_name());
  for (const auto& [key, value] : pairs) {
    if (key == "config") {
      std::fprintf(stderr, "error: %s: config files cannot nest\n",
                   spec.config.c_str());
      return 3;
    }
    CLI::Option* op = sub->get_option_no_throw("--" + key);
    if (op == nullptr) {
      std::fprintf(stderr, "error: %s: unknown key '%s'\n",
                   spec.config.c_str(), key.c_str());
      return 3;
    }
    if (op->count() > 0) continue;  // the command line wins
    out->push_back("--" + key + "=" + value);
  }

  bool seen_sub = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (!seen_sub && arg == sub->get_name()) {
      seen_sub = true;
      continue;
    }
    if (arg == "--config") {
      ++i;
      continue;
    }
    if (arg.rfind("--config=", 0) == 0) continue;
    out->push_back(arg);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CliSpec spec;
  int rc = parse_cli(spec, argc, argv);
  if (rc >= 0) return rc;
  if (spec.config.empty()) return dispatch(spec);

  std::vector<std::string> merged;
  if ((rc = merge_config_args(spec, argv, argc, &merged)) != 0) return rc;

  std::vector<const char*> cargv;
  cargv.push_back(argv[0]);
  for (const std::string& arg : merged) cargv.push_back(arg.c_str());

  CliSpec full;
  rc = parse_cli(full, static_cast<int>(cargv.size()), cargv.data());
  if (rc >= 0) return rc;
  return dispatch(full);
}

#include "tenreg.h"

#include <cstring>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tenreg/errors.hpp"
#include "tenreg/evaluate.hpp"
#include "tenreg/features.hpp"
#include "tenreg/gibbs.hpp"
#include "tenreg/io.hpp"

struct tenreg_tensor {
  tenreg::DenseTensor v;
};
struct tenreg_factors {
  tenreg::KroneckerFactorSet v;
};
struct tenreg_covariance {
  tenreg::SeparableCovariance v;
};
struct tenreg_fit_result {
  tenreg::KroneckerFactorSet factors;
  std::optional<tenreg::SeparableCovariance> covariance;
  std::vector<double> trace;
  int sweeps = 0;
  bool converged = false;
};
struct tenreg_summary {
  tenreg::PosteriorSummary v;
};
struct tenreg_panel {
  tenreg::EventPanel v;
};
struct tenreg_scores {
  tenreg::ScoreTable v;
};
struct tenreg_diag {
  tenreg::ModeCorrelationDiagnostic v;
};

namespace {

thread_local std::string t_error;

template <typename Fn>
tenreg_status guard(Fn&& fn) {
  try {
    fn();
    t_error.clear();
    return TENREG_OK;
  } catch (const tenreg::Error& e) {
    t_error = e.what();
    return static_cast<tenreg_status>(static_cast<int>(e.code()));
  } catch (const std::exception& e) {
    t_error = e.what();
    return TENREG_ERR_INVALID;
  }
}

tenreg_status fail(const char* msg) {
  t_error = msg;
  return TENREG_ERR_INVALID;
}

void require(bool ok, const char* msg) {
  if (!ok) throw tenreg::InvalidError(msg);
}

std::vector<std::string> to_strings(const char* const* arr, size_t n) {
  std::vector<std::string> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    if (!arr || !arr[i]) throw tenreg::InvalidError("null string in array");
    out.emplace_back(arr[i]);
  }
  return out;
}

tenreg::RegressionDataset make_dataset(const tenreg_tensor* x,
                                       const tenreg_tensor* y,
                                       const tenreg_tensor* mask) {
  require(x && y, "null tensor handle");
  tenreg::RegressionDataset data;
  data.X = x->v;
  data.Y = y->v;
  if (mask) data.mask = mask->v;
  data.validate();
  return data;
}

tenreg::FitOptions to_fit_options(const tenreg_fit_options* opts) {
  tenreg::FitOptions o;
  if (!opts) return o;
  o.tol = opts->tol;
  o.max_sweeps = opts->max_sweeps;
  o.seed = opts->seed;
  o.ridge = opts->ridge;
  o.init = opts->identity_init ? tenreg::FitOptions::Init::identity
                               : tenreg::FitOptions::Init::random;
  return o;
}

// a fitted model's trailing identity records the training replicate count;
// predictions retarget it to whatever x brings
tenreg::KroneckerFactorSet retargeted(const tenreg::KroneckerFactorSet& f,
                                      const tenreg::DenseTensor& x) {
  tenreg::KroneckerFactorSet g = f;
  if (!g.factors.empty() && g.factors.back().fixed_identity &&
      x.order() >= 1)
    g.factors.back() =
        tenreg::FactorMatrix::identity(x.dim(x.order() - 1));
  return g;
}

double factor_entry(const tenreg::FactorMatrix& f, tenreg::Index row,
                    tenreg::Index col) {
  require(row >= 0 && row < f.rows() && col >= 0 && col < f.cols(),
          "entry index out of range");
  if (f.fixed_identity) return row == col ? 1.0 : 0.0;
  return f.entries(row, col);
}

}  // namespace

extern "C" {

const char* tenreg_version(void) { return "0.1.0"; }

const char* tenreg_last_error(void) { return t_error.c_str(); }

/* ---- tensors ---------------------------------------------------------- */

tenreg_status tenreg_tensor_create(const int64_t* dims, int order,
                                   const double* data, tenreg_tensor** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(dims && order >= 1, "tensor needs at least one dimension");
    std::vector<tenreg::Index> d(dims, dims + order);
    tenreg::DenseTensor t(d);
    if (data)
      std::memcpy(t.data(), data,
                  static_cast<size_t>(t.size()) * sizeof(double));
    *out = new tenreg_tensor{std::move(t)};
  });
}

tenreg_status tenreg_tensor_read(const char* path, tenreg_tensor** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(path, "null path");
    *out = new tenreg_tensor{tenreg::read_tnsr(path)};
  });
}

tenreg_status tenreg_tensor_write(const tenreg_tensor* t, const char* path) {
  return guard([&] {
    require(t && path, "null argument");
    tenreg::write_tnsr(t->v, path);
  });
}

int tenreg_tensor_order(const tenreg_tensor* t) {
  return t ? t->v.order() : 0;
}

int64_t tenreg_tensor_dim(const tenreg_tensor* t, int mode) {
  if (!t || mode < 0 || mode >= t->v.order()) return 0;
  return t->v.dim(mode);
}

int64_t tenreg_tensor_size(const tenreg_tensor* t) {
  return t ? t->v.size() : 0;
}

const double* tenreg_tensor_data(const tenreg_tensor* t) {
  return t ? t->v.data() : nullptr;
}

void tenreg_tensor_free(tenreg_tensor* t) { delete t; }

/* ---- factor sets and covariances -------------------------------------- */

tenreg_status tenreg_factors_read(const char* path, tenreg_factors** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(path, "null path");
    *out = new tenreg_factors{tenreg::read_mltrf(path)};
  });
}

tenreg_status tenreg_factors_write(const tenreg_factors* f, const char* path) {
  return guard([&] {
    require(f && path, "null argument");
    tenreg::write_mltrf(f->v, path);
  });
}

int tenreg_factors_order(const tenreg_factors* f) {
  return f ? f->v.order() : 0;
}

int64_t tenreg_factors_rows(const tenreg_factors* f, int mode) {
  if (!f || mode < 0 || mode >= f->v.order()) return 0;
  return f->v.factors[static_cast<size_t>(mode)].rows();
}

int64_t tenreg_factors_cols(const tenreg_factors* f, int mode) {
  if (!f || mode < 0 || mode >= f->v.order()) return 0;
  return f->v.factors[static_cast<size_t>(mode)].cols();
}

int tenreg_factors_is_identity(const tenreg_factors* f, int mode) {
  if (!f || mode < 0 || mode >= f->v.order()) return 0;
  return f->v.factors[static_cast<size_t>(mode)].fixed_identity ? 1 : 0;
}

tenreg_status tenreg_factors_entry(const tenreg_factors* f, int mode,
                                   int64_t row, int64_t col, double* out) {
  return guard([&] {
    require(f && out, "null argument");
    require(mode >= 0 && mode < f->v.order(), "mode out of range");
    *out = factor_entry(f->v.factors[static_cast<size_t>(mode)], row, col);
  });
}

void tenreg_factors_free(tenreg_factors* f) { delete f; }

tenreg_status tenreg_predict(const tenreg_factors* f, const tenreg_tensor* x,
                             tenreg_tensor** yhat) {
  if (!yhat) return fail("null output pointer");
  *yhat = nullptr;
  return guard([&] {
    require(f && x, "null argument");
    *yhat = new tenreg_tensor{tenreg::predict(retargeted(f->v, x->v), x->v)};
  });
}

tenreg_status tenreg_residual(const tenreg_factors* f, const tenreg_tensor* x,
                              const tenreg_tensor* y,
                              const tenreg_tensor* mask, tenreg_tensor** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(f, "null factors handle");
    tenreg::RegressionDataset data = make_dataset(x, y, mask);
    *out = new tenreg_tensor{
        tenreg::residual_tensor(data, retargeted(f->v, x->v))};
  });
}

tenreg_status tenreg_covariance_read(const char* path,
                                     tenreg_covariance** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(path, "null path");
    *out = new tenreg_covariance{tenreg::read_mltrc(path)};
  });
}

tenreg_status tenreg_covariance_write(const tenreg_covariance* c,
                                      const char* path) {
  return guard([&] {
    require(c && path, "null argument");
    tenreg::write_mltrc(c->v, path);
  });
}

int tenreg_covariance_order(const tenreg_covariance* c) {
  return c ? c->v.order() : 0;
}

int64_t tenreg_covariance_dim(const tenreg_covariance* c, int mode) {
  if (!c || mode < 0 || mode >= c->v.order()) return 0;
  return c->v.sigmas[static_cast<size_t>(mode)].rows();
}

int tenreg_covariance_is_identity(const tenreg_covariance* c, int mode) {
  if (!c || mode < 0 || mode >= c->v.order()) return 0;
  return c->v.sigmas[static_cast<size_t>(mode)].fixed_identity ? 1 : 0;
}

tenreg_status tenreg_covariance_entry(const tenreg_covariance* c, int mode,
                                      int64_t row, int64_t col, double* out) {
  return guard([&] {
    require(c && out, "null argument");
    require(mode >= 0 && mode < c->v.order(), "mode out of range");
    *out = factor_entry(c->v.sigmas[static_cast<size_t>(mode)], row, col);
  });
}

double tenreg_covariance_tau2(const tenreg_covariance* c) {
  return c ? c->v.tau2 : 0.0;
}

void tenreg_covariance_free(tenreg_covariance* c) { delete c; }

/* ---- least squares and maximum likelihood fits ------------------------ */

void tenreg_fit_options_default(tenreg_fit_options* opts) {
  if (!opts) return;
  const tenreg::FitOptions d;
  opts->tol = d.tol;
  opts->max_sweeps = d.max_sweeps;
  opts->seed = d.seed;
  opts->ridge = d.ridge;
  opts->identity_init = 0;
}

tenreg_status tenreg_fit_als(const tenreg_tensor* x, const tenreg_tensor* y,
                             const tenreg_tensor* mask,
                             const tenreg_fit_options* opts,
                             tenreg_fit_result** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    tenreg::RegressionDataset data = make_dataset(x, y, mask);
    tenreg::FitReport rep = tenreg::fit_als(data, to_fit_options(opts));
    *out = new tenreg_fit_result{std::move(rep.factors), std::nullopt,
                                 std::move(rep.objective_trace), rep.sweeps,
                                 rep.converged};
  });
}

tenreg_status tenreg_fit_gls(const tenreg_tensor* x, const tenreg_tensor* y,
                             const tenreg_tensor* mask,
                             const tenreg_fit_options* opts,
                             tenreg_fit_result** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    tenreg::RegressionDataset data = make_dataset(x, y, mask);
    const tenreg::FitOptions f = to_fit_options(opts);
    tenreg::GlsOptions o;
    o.tol = f.tol;
    o.max_sweeps = f.max_sweeps;
    o.seed = f.seed;
    o.ridge = f.ridge;
    o.init = f.init;
    tenreg::GlsReport rep = tenreg::fit_gls(data, o);
    *out = new tenreg_fit_result{std::move(rep.factors),
                                 std::move(rep.covariance),
                                 std::move(rep.nll_trace), rep.sweeps,
                                 rep.converged};
  });
}

tenreg_status tenreg_fit_result_factors(const tenreg_fit_result* r,
                                        tenreg_factors** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(r, "null result handle");
    *out = new tenreg_factors{r->factors};
  });
}

tenreg_status tenreg_fit_result_covariance(const tenreg_fit_result* r,
                                           tenreg_covariance** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(r, "null result handle");
    require(r->covariance.has_value(),
            "least squares fit has no covariance estimate");
    *out = new tenreg_covariance{*r->covariance};
  });
}

int64_t tenreg_fit_result_trace_len(const tenreg_fit_result* r) {
  return r ? static_cast<int64_t>(r->trace.size()) : 0;
}

const double* tenreg_fit_result_trace(const tenreg_fit_result* r) {
  return r ? r->trace.data() : nullptr;
}

int tenreg_fit_result_sweeps(const tenreg_fit_result* r) {
  return r ? r->sweeps : 0;
}

int tenreg_fit_result_converged(const tenreg_fit_result* r) {
  return r && r->converged ? 1 : 0;
}

void tenreg_fit_result_free(tenreg_fit_result* r) { delete r; }

/* ---- posterior sampling ------------------------------------------------ */

void tenreg_gibbs_options_default(tenreg_gibbs_options* opts) {
  if (!opts) return;
  const tenreg::GibbsOptions d;
  const tenreg::PriorSpec p;
  opts->iterations = d.iterations;
  opts->burnin = d.burnin;
  opts->chains = d.chains;
  opts->thin = d.thin;
  opts->seed = d.seed;
  opts->warm_start = d.warm_start ? 1 : 0;
  opts->threads = d.threads;
  opts->store_dir = nullptr;
  opts->eta0 = p.eta0;
  opts->tau02 = p.tau02;
}

tenreg_status tenreg_gibbs(const tenreg_tensor* x, const tenreg_tensor* y,
                           const tenreg_tensor* mask,
                           const tenreg_gibbs_options* opts,
                           tenreg_summary** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    tenreg::RegressionDataset data = make_dataset(x, y, mask);
    tenreg::GibbsOptions o;
    tenreg::PriorSpec prior;
    if (opts) {
      o.iterations = opts->iterations;
      o.burnin = opts->burnin;
      o.chains = opts->chains;
      o.thin = opts->thin;
      o.seed = opts->seed;
      o.warm_start = opts->warm_start != 0;
      o.threads = opts->threads;
      if (opts->store_dir) o.store_dir = opts->store_dir;
      prior.eta0 = opts->eta0;
      prior.tau02 = opts->tau02;
    }
    tenreg::ChainStore store = tenreg::gibbs_run(data, prior, o);
    *out = new tenreg_summary{tenreg::summarize(store)};
  });
}

tenreg_status tenreg_load_chain_summary(const char* dir,
                                        tenreg_summary** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(dir, "null path");
    *out = new tenreg_summary{tenreg::summarize(tenreg::load_chain_store(dir))};
  });
}

int64_t tenreg_summary_size(const tenreg_summary* s) {
  return s ? static_cast<int64_t>(s->v.entries.size()) : 0;
}

tenreg_status tenreg_summary_entry_at(const tenreg_summary* s, int64_t i,
                                      tenreg_summary_entry* out) {
  return guard([&] {
    require(s && out, "null argument");
    require(i >= 0 && i < static_cast<int64_t>(s->v.entries.size()),
            "summary index out of range");
    const tenreg::SummaryEntry& e = s->v.entries[static_cast<size_t>(i)];
    out->mode = e.mode;
    out->row = e.row;
    out->col = e.col;
    out->mean = e.mean;
    out->sd = e.sd;
    out->q01 = e.q01;
    out->q025 = e.q025;
    out->q975 = e.q975;
    out->q99 = e.q99;
    out->flag = e.flag;
    out->chain_sd = e.chain_sd;
  });
}

double tenreg_summary_max_chain_sd(const tenreg_summary* s) {
  return s ? s->v.max_chain_sd : 0.0;
}

tenreg_status tenreg_summary_write_csv(const tenreg_summary* s,
                                       const char* path) {
  return guard([&] {
    require(s && path, "null argument");
    tenreg::write_summary_csv(s->v, path);
  });
}

void tenreg_summary_free(tenreg_summary* s) { delete s; }

/* ---- event ingestion and predictor construction ----------------------- */

tenreg_status tenreg_ingest_events(const char* csv_path, int include_diagonal,
                                   const char* const* node_order,
                                   size_t num_nodes,
                                   const char* const* type_order,
                                   size_t num_types,
                                   const char* const* period_order,
                                   size_t num_periods, tenreg_panel** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(csv_path, "null path");
    tenreg::IngestOptions opts;
    opts.include_diagonal = include_diagonal != 0;
    opts.node_order = to_strings(node_order, num_nodes);
    opts.type_order = to_strings(type_order, num_types);
    opts.period_order = to_strings(period_order, num_periods);
    *out = new tenreg_panel{tenreg::ingest_events_file(csv_path, opts)};
  });
}

tenreg_status tenreg_panel_dims(const tenreg_panel* p, int64_t dims[4]) {
  return guard([&] {
    require(p && dims, "null argument");
    for (int m = 0; m < 4; ++m) dims[m] = p->v.counts.dim(m);
  });
}

const char* tenreg_panel_node(const tenreg_panel* p, int64_t i) {
  if (!p || i < 0 || i >= static_cast<int64_t>(p->v.nodes.size()))
    return nullptr;
  return p->v.nodes[static_cast<size_t>(i)].c_str();
}

const char* tenreg_panel_type(const tenreg_panel* p, int64_t i) {
  if (!p || i < 0 || i >= static_cast<int64_t>(p->v.types.size()))
    return nullptr;
  return p->v.types[static_cast<size_t>(i)].c_str();
}

const char* tenreg_panel_period(const tenreg_panel* p, int64_t i) {
  if (!p || i < 0 || i >= static_cast<int64_t>(p->v.periods.size()))
    return nullptr;
  return p->v.periods[static_cast<size_t>(i)].c_str();
}

int tenreg_panel_diagonal_defined(const tenreg_panel* p) {
  return p && p->v.diagonal_defined ? 1 : 0;
}

tenreg_status tenreg_panel_counts(const tenreg_panel* p, tenreg_tensor** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(p, "null panel handle");
    *out = new tenreg_tensor{p->v.counts};
  });
}

void tenreg_panel_free(tenreg_panel* p) { delete p; }

void tenreg_predictor_spec_default(tenreg_predictor_spec* spec) {
  if (!spec) return;
  const tenreg::PredictorSpec d;
  spec->lag1 = d.lag1 ? 1 : 0;
  spec->reciprocal = d.reciprocal ? 1 : 0;
  spec->transitivity = d.transitivity ? 1 : 0;
  spec->monthly = d.monthly ? 1 : 0;
  spec->monthly_window = d.monthly_window;
  spec->quantile = d.quantile ? 1 : 0;
  spec->demean = TENREG_DEMEAN_AFTER;
}

tenreg_status tenreg_build_dataset(const tenreg_panel* p,
                                   const tenreg_predictor_spec* spec,
                                   tenreg_tensor** x_out,
                                   tenreg_tensor** y_out,
                                   tenreg_tensor** mask_out) {
  if (!x_out || !y_out) return fail("null output pointer");
  *x_out = nullptr;
  *y_out = nullptr;
  if (mask_out) *mask_out = nullptr;
  return guard([&] {
    require(p, "null panel handle");
    tenreg::PredictorSpec s;
    if (spec) {
      s.lag1 = spec->lag1 != 0;
      s.reciprocal = spec->reciprocal != 0;
      s.transitivity = spec->transitivity != 0;
      s.monthly = spec->monthly != 0;
      s.monthly_window = spec->monthly_window;
      s.quantile = spec->quantile != 0;
      switch (spec->demean) {
        case TENREG_DEMEAN_AFTER:
          s.demean = tenreg::DemeanStage::after;
          break;
        case TENREG_DEMEAN_BEFORE:
          s.demean = tenreg::DemeanStage::before;
          break;
        case TENREG_DEMEAN_NONE:
          s.demean = tenreg::DemeanStage::none;
          break;
        default:
          throw tenreg::InvalidError("unknown demean stage");
      }
    }
    tenreg::RegressionDataset data = tenreg::build_dataset(p->v, s);
    *x_out = new tenreg_tensor{std::move(data.X)};
    *y_out = new tenreg_tensor{std::move(data.Y)};
    if (mask_out && data.mask)
      *mask_out = new tenreg_tensor{std::move(*data.mask)};
  });
}

/* ---- cross validation -------------------------------------------------- */

void tenreg_cv_options_default(tenreg_cv_options* opts) {
  if (!opts) return;
  opts->folds = 10;
  opts->test_size = 1;
  opts->seed = 0;
  opts->demean_full = 0;
  opts->in_sample = 0;
  opts->threads = 0;
}

tenreg_status tenreg_cross_validate(const tenreg_tensor* x,
                                    const tenreg_tensor* y,
                                    const tenreg_tensor* mask,
                                    const char* const* model_names,
                                    size_t num_models,
                                    const tenreg_cv_options* opts,
                                    tenreg_scores** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(model_names && num_models > 0, "no models named");
    tenreg::RegressionDataset data = make_dataset(x, y, mask);
    tenreg_cv_options defaults;
    tenreg_cv_options_default(&defaults);
    const tenreg_cv_options& c = opts ? *opts : defaults;
    tenreg::SplitPlan plan = tenreg::make_splits(
        data.num_replicates(), c.folds, c.test_size, c.seed);
    tenreg::CvOptions o;
    o.demean = c.demean_full ? tenreg::DemeanMode::full
                             : tenreg::DemeanMode::train;
    o.threads = c.threads;
    o.in_sample = c.in_sample != 0;
    o.seed = c.seed;
    const std::vector<std::string> names =
        to_strings(model_names, num_models);
    *out = new tenreg_scores{tenreg::cross_validate(
        data, tenreg::standard_models(names, {}), plan, o)};
  });
}

int64_t tenreg_scores_num_rows(const tenreg_scores* s) {
  return s ? static_cast<int64_t>(s->v.rows.size()) : 0;
}

tenreg_status tenreg_scores_row(const tenreg_scores* s, int64_t i,
                                const char** model, int* fold,
                                const char** type, double* r2, int* failed) {
  return guard([&] {
    require(s, "null scores handle");
    require(i >= 0 && i < static_cast<int64_t>(s->v.rows.size()),
            "row index out of range");
    const tenreg::ScoreRow& r = s->v.rows[static_cast<size_t>(i)];
    if (model) *model = r.model.c_str();
    if (fold) *fold = r.fold;
    if (type) *type = r.type.c_str();
    if (r2) *r2 = r.r2;
    if (failed) *failed = r.failed ? 1 : 0;
  });
}

int64_t tenreg_scores_num_summaries(const tenreg_scores* s) {
  return s ? static_cast<int64_t>(s->v.summary.size()) : 0;
}

tenreg_status tenreg_scores_summary(const tenreg_scores* s, int64_t i,
                                    const char** model, const char** type,
                                    double* mean, double* min, double* max,
                                    int* folds_used) {
  return guard([&] {
    require(s, "null scores handle");
    require(i >= 0 && i < static_cast<int64_t>(s->v.summary.size()),
            "summary index out of range");
    const tenreg::ScoreSummary& r = s->v.summary[static_cast<size_t>(i)];
    if (model) *model = r.model.c_str();
    if (type) *type = r.type.c_str();
    if (mean) *mean = r.mean;
    if (min) *min = r.min;
    if (max) *max = r.max;
    if (folds_used) *folds_used = r.folds_used;
  });
}

tenreg_status tenreg_scores_write_csv(const tenreg_scores* s,
                                      const char* path) {
  return guard([&] {
    require(s && path, "null argument");
    tenreg::write_scores_csv(s->v, path);
  });
}

void tenreg_scores_free(tenreg_scores* s) { delete s; }

/* ---- residual diagnostics ---------------------------------------------- */

tenreg_status tenreg_mode_correlation(const tenreg_tensor* residual, int mode,
                                      tenreg_diag** out) {
  if (!out) return fail("null output pointer");
  *out = nullptr;
  return guard([&] {
    require(residual, "null tensor handle");
    *out =
        new tenreg_diag{tenreg::mode_residual_correlation(residual->v, mode)};
  });
}

int64_t tenreg_diag_dim(const tenreg_diag* d) {
  return d ? d->v.correlation.rows() : 0;
}

tenreg_status tenreg_diag_correlation(const tenreg_diag* d, int64_t row,
                                      int64_t col, double* out) {
  return guard([&] {
    require(d && out, "null argument");
    require(row >= 0 && row < d->v.correlation.rows() && col >= 0 &&
                col < d->v.correlation.cols(),
            "entry index out of range");
    *out = d->v.correlation(row, col);
  });
}

tenreg_status tenreg_diag_eigenvalue(const tenreg_diag* d, int64_t i,
                                     double* out) {
  return guard([&] {
    require(d && out, "null argument");
    require(i >= 0 && i < d->v.eigenvalues.size(),
            "eigenvalue index out of range");
    *out = d->v.eigenvalues(i);
  });
}

tenreg_status tenreg_diag_write_csv(const tenreg_diag* d,
                                    const char* correlation_path,
                                    const char* eigen_path) {
  return guard([&] {
    require(d && correlation_path && eigen_path, "null argument");
    tenreg::write_correlation_csv(d->v.correlation, correlation_path);
    tenreg::write_eigen_csv(d->v.eigenvalues, d->v.eigenvectors, eigen_path);
  });
}

void tenreg_diag_free(tenreg_diag* d) { delete d; }

} /* extern "C" */

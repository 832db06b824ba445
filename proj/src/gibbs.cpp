#include "tenreg/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "standardize.hpp"
#include "tenreg/als.hpp"
#include "tenreg/errors.hpp"
#include "tenreg/io.hpp"
#include "tenreg/parallel.hpp"

namespace tenreg {

using detail::standardizers;
using detail::zero_filled_response;

namespace {

namespace fs = std::filesystem;

// keeps the warm-start scale away from zero when the least squares fit
// interpolates the data, without distorting a real residual scale
constexpr double kWarmTau2Floor = 1e-12;

std::string chain_dir_name(int chain) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "chain-%03d", chain);
  return buf;
}

std::vector<ModePrior> resolve_priors(const RegressionDataset& data,
                                      const PriorSpec& spec) {
  const int order = data.order();
  const int rep = data.replication_mode();
  if (!spec.modes.empty() && static_cast<int>(spec.modes.size()) != order)
    throw InvalidError("prior list must have one entry per mode");
  std::vector<ModePrior> out(order);
  for (int k = 0; k < order; ++k) {
    const bool given = !spec.modes.empty() && spec.modes[k].has_value();
    if (k == rep) {
      if (given)
        throw InvalidError("the replication mode takes no prior");
      continue;
    }
    const Index m = data.Y.dim(k), p = data.X.dim(k);
    if (!given) {
      out[k] = default_mode_prior(m, p);
      continue;
    }
    const ModePrior& pr = *spec.modes[k];
    const std::string who = "mode " + std::to_string(k) + " prior";
    if (pr.mean.rows() != m || pr.mean.cols() != p)
      throw InvalidError(who + ": mean must be " + std::to_string(m) + " x " +
                         std::to_string(p));
    if (pr.scale.rows() != m || pr.scale.cols() != m)
      throw InvalidError(who + ": scale must be " + std::to_string(m) +
                         " square");
    if (!(pr.dof > static_cast<double>(m) - 1.0))
      throw InvalidError(who + ": dof must exceed the mode size minus one");
    out[k] = pr;
  }
  return out;
}

GibbsState initial_state(const RegressionDataset& data,
                         const GibbsOptions& opts, int chain, Rng& rng) {
  GibbsState st;
  st.covariance =
      SeparableCovariance::identity(data.Y.dims(), data.replication_mode());
  if (opts.warm_start && chain == 0) {
    FitOptions fopts;
    fopts.seed = opts.seed;
    FitReport rep = fit_als(data, fopts);
    st.factors = std::move(rep.factors);
    st.covariance.tau2 =
        std::max(rep.objective_trace.back() /
                     static_cast<double>(data.Y.size()),
                 kWarmTau2Floor);
    return st;
  }
  const int repmode = data.replication_mode();
  for (int k = 0; k < data.order(); ++k) {
    if (k == repmode) {
      st.factors.factors.push_back(FactorMatrix::identity(data.Y.dim(k)));
      continue;
    }
    Eigen::MatrixXd b(data.Y.dim(k), data.X.dim(k));
    fill_normal(rng, b.data(), b.size());
    b /= b.norm();
    st.factors.factors.push_back(FactorMatrix::dense(b));
  }
  return st;
}

// one full scan: per free mode a joint (Sigma_k, B_k) draw with B_k
// integrated out of the Sigma_k conditional, then the global scale
void gibbs_sweep(const RegressionDataset& data, const DenseTensor& y_filled,
                 const std::vector<ModePrior>& priors, double eta0,
                 double tau02, GibbsState& st, Rng& rng) {
  const std::vector<Index>& ydims = data.Y.dims();
  for (int k : st.factors.free_modes()) {
    const double tau = std::sqrt(st.covariance.tau2);
    DenseTensor yt =
        tucker_product(y_filled, standardizers(st.covariance, ydims, k));
    Eigen::MatrixXd y = matricize(yt, k) / tau;

    // design carried through the other modes' coefficients, standardized
    // the same way as the response
    KroneckerFactorSet xs;
    xs.factors.reserve(st.factors.order());
    for (int j = 0; j < st.factors.order(); ++j) {
      if (j == k || st.factors.factors[j].fixed_identity) {
        xs.factors.push_back(FactorMatrix::identity(data.X.dim(j)));
        continue;
      }
      xs.factors.push_back(
          FactorMatrix::dense(inv_sqrt(st.covariance.sigmas[j].entries) *
                              st.factors.factors[j].entries));
    }
    DenseTensor xt = tucker_product(data.X, xs);
    Eigen::MatrixXd x = matricize(xt, k) / tau;

    ModePosterior post = mode_posterior(y, x, priors[k]);
    Eigen::LLT<Eigen::MatrixXd> llt(post.sn);
    if (llt.info() != Eigen::Success)
      throw SamplerError("mode " + std::to_string(k) +
                         ": posterior scale is not positive definite");
    Eigen::MatrixXd sn_inv =
        llt.solve(Eigen::MatrixXd::Identity(post.sn.rows(), post.sn.rows()));
    sn_inv = 0.5 * (sn_inv + sn_inv.transpose());
    Eigen::MatrixXd sigma = sample_inverse_wishart(sn_inv, post.dof, rng);
    st.covariance.sigmas[k].entries = sigma;
    st.factors.factors[k].entries =
        sample_matrix_normal(post.mn, sigma, post.col_cov, rng);
  }
  DenseTensor resid = residual_tensor(data, st.factors);
  DenseTensor rt =
      tucker_product(resid, standardizers(st.covariance, ydims, -1));
  st.covariance.tau2 = sample_tau2(frobenius_norm_sq(rt), data.Y.size(), eta0,
                                   tau02, rng);
}

struct DiskSink {
  std::ofstream factors;
  std::ofstream covariances;
};

DiskSink open_sink(const std::string& store_dir, int chain,
                   const GibbsOptions& opts) {
  const fs::path dir = fs::path(store_dir) / chain_dir_name(chain);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream mf(dir / "manifest.json", std::ios::binary);
    if (!mf)
      throw IoError("cannot write " + (dir / "manifest.json").string());
    nlohmann::json j;
    j["burnin"] = opts.burnin;
    j["chain"] = chain;
    j["iterations"] = opts.iterations;
    j["seed"] = opts.seed;
    j["thin"] = opts.thin;
    mf << j.dump() << "\n";
  }
  DiskSink sink;
  sink.factors.open(dir / "factors.mltrf", std::ios::binary);
  sink.covariances.open(dir / "covariances.mltrc", std::ios::binary);
  if (!sink.factors || !sink.covariances)
    throw IoError("cannot write draw files under " + dir.string());
  return sink;
}

}  // namespace

ModePrior default_mode_prior(Index m_k, Index p_k) {
  if (m_k <= 0 || p_k <= 0)
    throw InvalidError("prior dimensions must be positive");
  ModePrior pr;
  pr.mean = Eigen::MatrixXd::Zero(m_k, p_k);
  pr.scale = Eigen::MatrixXd::Identity(m_k, m_k);
  pr.dof = static_cast<double>(m_k) + 1.0;
  return pr;
}

Eigen::MatrixXd sample_inverse_wishart(const Eigen::MatrixXd& scale_inv,
                                       double dof, Rng& rng) {
  const Index m = scale_inv.rows();
  if (m == 0 || scale_inv.cols() != m)
    throw InvalidError("inverse Wishart scale must be square and nonempty");
  if (!(dof > static_cast<double>(m) - 1.0))
    throw InvalidError("inverse Wishart dof must exceed the dimension minus one");
  Eigen::LLT<Eigen::MatrixXd> llt(scale_inv);
  if (llt.info() != Eigen::Success)
    throw NumericError("inverse Wishart scale is not positive definite");

  // Bartlett: T = chol(scale_inv) * A gives T T^T ~ Wishart(scale_inv, dof)
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
  for (Index i = 0; i < m; ++i) {
    a(i, i) = std::sqrt(draw_chisq(rng, dof - static_cast<double>(i)));
    for (Index j = 0; j < i; ++j) a(i, j) = draw_normal(rng);
  }
  Eigen::MatrixXd t = Eigen::MatrixXd(llt.matrixL()) * a;
  Eigen::MatrixXd tinv = t.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd::Identity(m, m));
  Eigen::MatrixXd sigma = tinv.transpose() * tinv;
  return 0.5 * (sigma + sigma.transpose());
}

Eigen::MatrixXd sample_matrix_normal(const Eigen::MatrixXd& mean,
                                     const Eigen::MatrixXd& row_cov,
                                     const Eigen::MatrixXd& col_cov,
                                     Rng& rng) {
  if (row_cov.rows() != mean.rows() || col_cov.rows() != mean.cols())
    throw InvalidError("matrix normal covariances do not match the mean");
  Eigen::MatrixXd z(mean.rows(), mean.cols());
  fill_normal(rng, z.data(), z.size());
  return mean + sym_sqrt(row_cov) * z * sym_sqrt(col_cov);
}

double sample_tau2(double resid_norm_sq, Index total_elems, double eta0,
                   double tau02, Rng& rng) {
  if (!(resid_norm_sq >= 0) || !std::isfinite(resid_norm_sq))
    throw InvalidError("residual norm must be finite and nonnegative");
  if (total_elems <= 0) throw InvalidError("element count must be positive");
  if (!(eta0 > 0) || !(tau02 > 0))
    throw InvalidError("the scale prior needs positive eta0 and tau02");
  const double shape = 0.5 * (eta0 + static_cast<double>(total_elems));
  const double rate = 0.5 * (eta0 * tau02 + resid_norm_sq);
  const double g = draw_gamma(rng, shape, 1.0 / rate);
  const double tau2 = 1.0 / g;
  if (!std::isfinite(tau2) || !(tau2 > 0))
    throw SamplerError("the global scale draw is not finite");
  return tau2;
}

ModePosterior mode_posterior(const Eigen::MatrixXd& y,
                             const Eigen::MatrixXd& x,
                             const ModePrior& prior) {
  const Index m = y.rows(), p = x.rows(), q = y.cols();
  if (x.cols() != q)
    throw InvalidError("mode regression: y and x column counts differ");
  if (prior.mean.rows() != m || prior.mean.cols() != p)
    throw InvalidError("mode prior mean has the wrong shape");
  if (prior.scale.rows() != m || prior.scale.cols() != m)
    throw InvalidError("mode prior scale has the wrong shape");
  if (!(prior.dof > static_cast<double>(m) - 1.0))
    throw InvalidError("mode prior dof must exceed the mode size minus one");

  Eigen::MatrixXd c =
      Eigen::MatrixXd::Identity(p, p) + x * x.transpose();
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success)
    throw NumericError("mode regression: design Gram failed to factor");

  ModePosterior post;
  post.col_cov = llt.solve(Eigen::MatrixXd::Identity(p, p));
  post.col_cov = 0.5 * (post.col_cov + post.col_cov.transpose());
  Eigen::MatrixXd w = prior.mean + y * x.transpose();
  post.mn = w * post.col_cov;
  post.sn = prior.scale + y * y.transpose() +
            prior.mean * prior.mean.transpose() - post.mn * w.transpose();
  post.sn = 0.5 * (post.sn + post.sn.transpose());
  post.dof = prior.dof + static_cast<double>(q);
  return post;
}

void normalize_factors(GibbsState& state) {
  const std::vector<int> free = state.factors.free_modes();
  if (free.empty()) return;

  // sign pass: flips cancel pairwise through the last free factor
  if (free.size() >= 2) {
    double flip = 1.0;
    for (std::size_t idx = 0; idx + 1 < free.size(); ++idx) {
      Eigen::MatrixXd& b = state.factors.factors[free[idx]].entries;
      const double* d = b.data();
      Index best = 0;
      for (Index i = 1; i < b.size(); ++i)
        if (std::abs(d[i]) > std::abs(d[best])) best = i;
      if (d[best] < 0) {
        b = -b;
        flip = -flip;
      }
    }
    if (flip < 0) {
      Eigen::MatrixXd& last = state.factors.factors[free.back()].entries;
      last = -last;
    }
  }

  normalize_scale(state.factors);

  // covariances to trace m_k, overall scale pushed into tau2
  for (int k = 0; k < state.covariance.order(); ++k) {
    FactorMatrix& s = state.covariance.sigmas[k];
    if (s.fixed_identity) continue;
    const double tr = s.entries.trace();
    const double mk = static_cast<double>(s.entries.rows());
    if (!(tr > 0) || !std::isfinite(tr))
      throw NumericError("covariance trace must be positive to normalize");
    s.entries *= mk / tr;
    state.covariance.tau2 *= tr / mk;
  }
}

ChainStore gibbs_run(const RegressionDataset& data, const PriorSpec& prior,
                     const GibbsOptions& opts) {
  data.validate();
  if (opts.iterations < 1)
    throw InvalidError("iterations must be positive");
  if (opts.burnin < 0 || opts.burnin >= opts.iterations)
    throw InvalidError("burn-in must leave at least one iteration");
  if (opts.thin < 1) throw InvalidError("thinning stride must be at least 1");
  if (opts.chains < 1) throw InvalidError("at least one chain is required");
  if (!(prior.eta0 > 0) || !(prior.tau02 > 0))
    throw InvalidError("the scale prior needs positive eta0 and tau02");
  const std::vector<ModePrior> priors = resolve_priors(data, prior);
  const DenseTensor y_filled = zero_filled_response(data);

  ChainStore store;
  store.iterations = opts.iterations;
  store.burnin = opts.burnin;
  store.thin = opts.thin;
  store.seed = opts.seed;
  store.draws.resize(opts.chains);

  parallel_for(opts.chains, opts.threads, [&](std::int64_t chain) {
    const int c = static_cast<int>(chain);
    Rng rng = make_rng(opts.seed, static_cast<std::uint64_t>(c));
    GibbsState st = initial_state(data, opts, c, rng);

    DiskSink sink;
    if (!opts.store_dir.empty()) sink = open_sink(opts.store_dir, c, opts);

    auto& kept = store.draws[c];
    kept.reserve((opts.iterations - opts.burnin) / opts.thin);
    for (int i = 1; i <= opts.iterations; ++i) {
      gibbs_sweep(data, y_filled, priors, prior.eta0, prior.tau02, st, rng);
      if (i <= opts.burnin || (i - opts.burnin) % opts.thin != 0) continue;
      GibbsState draw = st;
      normalize_factors(draw);
      if (!opts.store_dir.empty()) {
        write_mltrf_record(sink.factors, draw.factors);
        sink.factors.flush();
        write_mltrc_record(sink.covariances, draw.covariance);
        sink.covariances.flush();
      }
      kept.push_back(std::move(draw));
    }
  });
  return store;
}

ChainStore load_chain_store(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root))
    throw IoError("chain store not found: " + dir);
  std::vector<fs::path> chains;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("chain-", 0) == 0)
      chains.push_back(entry.path());
  }
  if (chains.empty())
    throw IoError("no chain directories under " + dir);
  std::sort(chains.begin(), chains.end());

  ChainStore store;
  bool first = true;
  for (const fs::path& cdir : chains) {
    const fs::path mpath = cdir / "manifest.json";
    std::ifstream mf(mpath);
    if (!mf) throw IoError("missing manifest: " + mpath.string());
    int iterations = 0, burnin = 0, thin = 1;
    std::uint64_t seed = 0;
    try {
      nlohmann::json j;
      mf >> j;
      iterations = j.at("iterations").get<int>();
      burnin = j.at("burnin").get<int>();
      thin = j.at("thin").get<int>();
      seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(mpath.string() + ": " + e.what());
    }
    if (first) {
      store.iterations = iterations;
      store.burnin = burnin;
      store.thin = thin;
      store.seed = seed;
      first = false;
    } else if (iterations != store.iterations || burnin != store.burnin ||
               thin != store.thin || seed != store.seed) {
      throw ParseError("chain manifests disagree under " + dir);
    }

    std::ifstream ff(cdir / "factors.mltrf", std::ios::binary);
    std::ifstream cf(cdir / "covariances.mltrc", std::ios::binary);
    if (!ff || !cf)
      throw IoError("missing draw files under " + cdir.string());
    std::vector<KroneckerFactorSet> factor_draws;
    std::vector<SeparableCovariance> cov_draws;
    {
      KroneckerFactorSet f;
      const std::string origin = (cdir / "factors.mltrf").string();
      while (read_mltrf_record(ff, f, origin)) factor_draws.push_back(f);
    }
    {
      SeparableCovariance c;
      const std::string origin = (cdir / "covariances.mltrc").string();
      while (read_mltrc_record(cf, c, origin)) cov_draws.push_back(c);
    }
    const std::size_t n = std::min(factor_draws.size(), cov_draws.size());
    if (factor_draws.size() != cov_draws.size())
      std::cerr << "warning: " << cdir.string() << " holds "
                << factor_draws.size() << " factor records but "
                << cov_draws.size() << " covariance records; keeping " << n
                << " complete draws\n";
    std::vector<GibbsState> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      out.push_back({std::move(factor_draws[i]), std::move(cov_draws[i])});
    store.draws.push_back(std::move(out));
  }
  return store;
}

PosteriorSummary summarize(const ChainStore& store) {
  const GibbsState* ref = nullptr;
  for (const auto& chain : store.draws)
    if (!chain.empty()) {
      ref = &chain.front();
      break;
    }
  if (!ref) throw InvalidError("the chain store has no draws to summarize");
  const std::vector<int> free = ref->factors.free_modes();
  for (const auto& chain : store.draws)
    for (const GibbsState& st : chain) {
      if (st.factors.free_modes() != free)
        throw InvalidError("draws disagree on the free modes");
      for (int k : free) {
        const Eigen::MatrixXd& b = st.factors.factors[k].entries;
        const Eigen::MatrixXd& r = ref->factors.factors[k].entries;
        if (b.rows() != r.rows() || b.cols() != r.cols())
          throw InvalidError("draws disagree on factor shapes");
      }
    }

  std::vector<const std::vector<GibbsState>*> nonempty;
  for (const auto& chain : store.draws)
    if (!chain.empty()) nonempty.push_back(&chain);

  PosteriorSummary summary;
  std::vector<double> pooled;
  std::vector<double> chain_means;
  int ordinal = 0;
  for (int k : free) {
    ++ordinal;
    const Index rows = ref->factors.factors[k].entries.rows();
    const Index cols = ref->factors.factors[k].entries.cols();
    for (Index r = 0; r < rows; ++r)
      for (Index col = 0; col < cols; ++col) {
        pooled.clear();
        chain_means.clear();
        for (const auto* chain : nonempty) {
          double acc = 0;
          for (const GibbsState& st : *chain) {
            const double v = st.factors.factors[k].entries(r, col);
            pooled.push_back(v);
            acc += v;
          }
          chain_means.push_back(acc / static_cast<double>(chain->size()));
        }
        SummaryEntry e;
        e.mode = ordinal;
        e.row = r + 1;
        e.col = col + 1;
        const double n = static_cast<double>(pooled.size());
        double mean = 0;
        for (double v : pooled) mean += v;
        mean /= n;
        e.mean = mean;
        if (pooled.size() > 1) {
          double ss = 0;
          for (double v : pooled) ss += (v - mean) * (v - mean);
          e.sd = std::sqrt(ss / (n - 1));
        }
        std::sort(pooled.begin(), pooled.end());
        e.q01 = sample_quantile(pooled, 0.01);
        e.q025 = sample_quantile(pooled, 0.025);
        e.q975 = sample_quantile(pooled, 0.975);
        e.q99 = sample_quantile(pooled, 0.99);
        if (e.q01 > 0)
          e.flag = 2;
        else if (e.q99 < 0)
          e.flag = -2;
        else if (e.q025 > 0)
          e.flag = 1;
        else if (e.q975 < 0)
          e.flag = -1;
        if (chain_means.size() > 1) {
          double cm = 0;
          for (double v : chain_means) cm += v;
          cm /= static_cast<double>(chain_means.size());
          double ss = 0;
          for (double v : chain_means) ss += (v - cm) * (v - cm);
          e.chain_sd =
              std::sqrt(ss / static_cast<double>(chain_means.size() - 1));
        }
        summary.max_chain_sd = std::max(summary.max_chain_sd, e.chain_sd);
        summary.entries.push_back(e);
      }
  }
  return summary;
}

}  // namespace tenreg

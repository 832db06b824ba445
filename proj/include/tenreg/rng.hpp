#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace tenreg {

using Rng = std::mt19937_64;

/// Deterministic seed fan-out: one master seed plus a stream id (chain,
/// fold, dyad) gives an independent generator.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

double draw_normal(Rng& rng);
void fill_normal(Rng& rng, double* dst, std::int64_t n);
double draw_chisq(Rng& rng, double dof);
double draw_gamma(Rng& rng, double shape, double scale);

/// Inverse standard normal CDF, Wichura's AS241 rational approximation.
/// Good to full double precision over (0, 1).
double normal_quantile(double p);

/// Sample quantile with linear interpolation between order statistics.
double sample_quantile(std::span<const double> sorted, double p);

}  // namespace tenreg

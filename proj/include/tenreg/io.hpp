#pragma once

#include <iosfwd>
#include <string>

#include "tenreg/gibbs.hpp"
#include "tenreg/gls.hpp"
#include "tenreg/tensor.hpp"

namespace tenreg {

// Tensor container: line "TNSR1", one JSON header line
// {"dims":[...],"dtype":"f64","order":"colmajor"}, then the payload as raw
// little-endian doubles. Round-trips are bit exact.
DenseTensor read_tnsr(const std::string& path);
void write_tnsr(const DenseTensor& t, const std::string& path);
DenseTensor read_tnsr_stream(std::istream& in, const std::string& origin);
void write_tnsr_stream(std::ostream& out, const DenseTensor& t);

// Factor sets: line "MLTRF1" plus one JSON document per record giving each
// mode's shape, fixed flag, and row-major entries (empty for fixed modes).
// Files may hold a single record or a concatenated stream of them.
KroneckerFactorSet read_mltrf(const std::string& path);
void write_mltrf(const KroneckerFactorSet& f, const std::string& path);
void write_mltrf_record(std::ostream& out, const KroneckerFactorSet& f);
bool read_mltrf_record(std::istream& in, KroneckerFactorSet& out,
                       const std::string& origin);

// Covariance sets: line "MLTRC1", then per-mode dims, flags, entries and
// the global tau2.
SeparableCovariance read_mltrc(const std::string& path);
void write_mltrc(const SeparableCovariance& c, const std::string& path);
void write_mltrc_record(std::ostream& out, const SeparableCovariance& c);
bool read_mltrc_record(std::istream& in, SeparableCovariance& out,
                       const std::string& origin);

void write_summary_csv(const PosteriorSummary& s, const std::string& path);

void write_correlation_csv(const Eigen::MatrixXd& corr,
                           const std::string& path);
void write_eigen_csv(const Eigen::VectorXd& values,
                     const Eigen::MatrixXd& vectors, const std::string& path);

}  // namespace tenreg

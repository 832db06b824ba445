#include "tenreg/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tenreg/errors.hpp"

namespace tenreg {

namespace {

using nlohmann::json;

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

void require_finite(const double* p, Index n, const std::string& what) {
  for (Index i = 0; i < n; ++i)
    if (!std::isfinite(p[i]))
      throw NumericError(what + " has non-finite entries");
}

// payloads and headers are little-endian on disk regardless of host
void write_doubles_le(std::ostream& out, const double* p, Index n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(p), n * sizeof(double));
  } else {
    for (Index i = 0; i < n; ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, p + i, 8);
      char buf[8];
      for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>(bits >> (8 * b));
      out.write(buf, 8);
    }
  }
}

void read_doubles_le(std::istream& in, double* p, Index n,
                     const std::string& origin) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(p), n * sizeof(double));
    if (in.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
      throw ParseError(origin + ": payload truncated");
  } else {
    for (Index i = 0; i < n; ++i) {
      char buf[8];
      in.read(buf, 8);
      if (in.gcount() != 8) throw ParseError(origin + ": payload truncated");
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[b]))
                << (8 * b);
      std::memcpy(p + i, &bits, 8);
    }
  }
}

json parse_line(std::istream& in, const std::string& origin) {
  std::string line;
  if (!std::getline(in, line))
    throw ParseError(origin + ": missing header line");
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(origin + ": bad header: " + e.what());
  }
}

// magic handling shared by the three containers; returns false on clean EOF
bool read_magic(std::istream& in, const std::string& want,
                const std::string& origin) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line != want)
      throw ParseError(origin + ": expected magic '" + want + "', got '" +
                       line + "'");
    return true;
  }
  return false;
}

std::vector<double> entries_row_major(const Eigen::MatrixXd& m) {
  std::vector<double> v;
  v.reserve(m.size());
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  return v;
}

Eigen::MatrixXd matrix_from_row_major(const json& arr, Index rows, Index cols,
                                      const std::string& origin) {
  if (!arr.is_array() ||
      static_cast<Index>(arr.size()) != rows * cols)
    throw ParseError(origin + ": entry array has wrong length");
  Eigen::MatrixXd m(rows, cols);
  Index n = 0;
  for (const auto& v : arr) {
    if (!v.is_number()) throw ParseError(origin + ": non-numeric entry");
    m(n / cols, n % cols) = v.get<double>();
    ++n;
  }
  return m;
}

}  // namespace

void write_tnsr_stream(std::ostream& out, const DenseTensor& t) {
  require_finite(t.data(), t.size(), "tensor");
  json hdr;
  hdr["dims"] = t.dims();
  hdr["dtype"] = "f64";
  hdr["order"] = "colmajor";
  out << "TNSR1\n" << hdr.dump() << "\n";
  write_doubles_le(out, t.data(), t.size());
}

DenseTensor read_tnsr_stream(std::istream& in, const std::string& origin) {
  if (!read_magic(in, "TNSR1", origin))
    throw ParseError(origin + ": empty file");
  json hdr = parse_line(in, origin);
  if (!hdr.contains("dims") || !hdr["dims"].is_array())
    throw ParseError(origin + ": header missing dims");
  if (hdr.value("dtype", "") != "f64")
    throw ParseError(origin + ": unsupported dtype");
  if (hdr.value("order", "") != "colmajor")
    throw ParseError(origin + ": unsupported layout");
  std::vector<Index> dims;
  for (const auto& d : hdr["dims"]) {
    if (!d.is_number_integer() || d.get<Index>() < 1)
      throw ParseError(origin + ": dims must be positive integers");
    dims.push_back(d.get<Index>());
  }
  DenseTensor t(dims);
  read_doubles_le(in, t.data(), t.size(), origin);
  if (in.peek() != EOF) throw ParseError(origin + ": trailing bytes");
  require_finite(t.data(), t.size(), origin);
  return t;
}

DenseTensor read_tnsr(const std::string& path) {
  auto in = open_in(path);
  return read_tnsr_stream(in, path);
}

void write_tnsr(const DenseTensor& t, const std::string& path) {
  auto out = open_out(path);
  write_tnsr_stream(out, t);
  if (!out) throw IoError("failed writing " + path);
}

void write_mltrf_record(std::ostream& out, const KroneckerFactorSet& f) {
  json modes = json::array();
  for (const auto& fac : f.factors) {
    json m;
    m["rows"] = fac.rows();
    m["cols"] = fac.cols();
    m["fixed_identity"] = fac.fixed_identity;
    if (fac.fixed_identity) {
      m["entries"] = json::array();
    } else {
      require_finite(fac.entries.data(), fac.entries.size(), "factor");
      m["entries"] = entries_row_major(fac.entries);
    }
    modes.push_back(std::move(m));
  }
  json doc;
  doc["modes"] = std::move(modes);
  out << "MLTRF1\n" << doc.dump() << "\n";
}

bool read_mltrf_record(std::istream& in, KroneckerFactorSet& out,
                       const std::string& origin) {
  if (!read_magic(in, "MLTRF1", origin)) return false;
  json doc = parse_line(in, origin);
  if (!doc.contains("modes") || !doc["modes"].is_array() ||
      doc["modes"].empty())
    throw ParseError(origin + ": record needs a non-empty modes array");
  KroneckerFactorSet f;
  for (const auto& m : doc["modes"]) {
    const Index rows = m.value("rows", Index(-1));
    const Index cols = m.value("cols", Index(-1));
    if (rows < 1 || cols < 1)
      throw ParseError(origin + ": mode needs positive rows/cols");
    if (m.value("fixed_identity", false)) {
      if (rows != cols)
        throw ParseError(origin + ": fixed identity mode must be square");
      f.factors.push_back(FactorMatrix::identity(rows));
    } else {
      f.factors.push_back(FactorMatrix::dense(
          matrix_from_row_major(m.at("entries"), rows, cols, origin)));
    }
  }
  out = std::move(f);
  return true;
}

KroneckerFactorSet read_mltrf(const std::string& path) {
  auto in = open_in(path);
  KroneckerFactorSet f;
  if (!read_mltrf_record(in, f, path))
    throw ParseError(path + ": no factor record found");
  return f;
}

void write_mltrf(const KroneckerFactorSet& f, const std::string& path) {
  auto out = open_out(path);
  write_mltrf_record(out, f);
  if (!out) throw IoError("failed writing " + path);
}

void write_mltrc_record(std::ostream& out, const SeparableCovariance& c) {
  json modes = json::array();
  for (const auto& s : c.sigmas) {
    json m;
    m["dim"] = s.rows();
    m["fixed_identity"] = s.fixed_identity;
    if (s.fixed_identity) {
      m["entries"] = json::array();
    } else {
      require_finite(s.entries.data(), s.entries.size(), "covariance");
      m["entries"] = entries_row_major(s.entries);
    }
    modes.push_back(std::move(m));
  }
  json doc;
  doc["modes"] = std::move(modes);
  doc["tau2"] = c.tau2;
  out << "MLTRC1\n" << doc.dump() << "\n";
}

bool read_mltrc_record(std::istream& in, SeparableCovariance& out,
                       const std::string& origin) {
  if (!read_magic(in, "MLTRC1", origin)) return false;
  json doc = parse_line(in, origin);
  if (!doc.contains("modes") || !doc["modes"].is_array() ||
      doc["modes"].empty())
    throw ParseError(origin + ": record needs a non-empty modes array");
  SeparableCovariance c;
  for (const auto& m : doc["modes"]) {
    const Index dim = m.value("dim", Index(-1));
    if (dim < 1) throw ParseError(origin + ": mode needs a positive dim");
    if (m.value("fixed_identity", false)) {
      c.sigmas.push_back(FactorMatrix::identity(dim));
    } else {
      Eigen::MatrixXd s =
          matrix_from_row_major(m.at("entries"), dim, dim, origin);
      const double scale = s.cwiseAbs().maxCoeff();
      if ((s - s.transpose()).cwiseAbs().maxCoeff() >
          1e-6 * std::max(1.0, scale))
        throw ParseError(origin + ": covariance entries are not symmetric");
      c.sigmas.push_back(FactorMatrix::dense(std::move(s)));
    }
  }
  if (!doc.contains("tau2") || !doc["tau2"].is_number())
    throw ParseError(origin + ": record needs tau2");
  c.tau2 = doc["tau2"].get<double>();
  if (!(c.tau2 > 0) || !std::isfinite(c.tau2))
    throw ParseError(origin + ": tau2 must be positive and finite");
  out = std::move(c);
  return true;
}

SeparableCovariance read_mltrc(const std::string& path) {
  auto in = open_in(path);
  SeparableCovariance c;
  if (!read_mltrc_record(in, c, path))
    throw ParseError(path + ": no covariance record found");
  return c;
}

void write_mltrc(const SeparableCovariance& c, const std::string& path) {
  auto out = open_out(path);
  write_mltrc_record(out, c);
  if (!out) throw IoError("failed writing " + path);
}

namespace {
// shortest representation that parses back to the same double
std::string fmt(double v) { return json(v).dump(); }
}  // namespace

void write_summary_csv(const PosteriorSummary& s, const std::string& path) {
  auto out = open_out(path);
  out << "mode,row,col,mean,sd,q01,q025,q975,q99,flag\n";
  for (const auto& e : s.entries) {
    out << e.mode << ',' << e.row << ',' << e.col << ',' << fmt(e.mean) << ','
        << fmt(e.sd) << ',' << fmt(e.q01) << ',' << fmt(e.q025) << ','
        << fmt(e.q975) << ',' << fmt(e.q99) << ',' << e.flag << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

void write_correlation_csv(const Eigen::MatrixXd& corr,
                           const std::string& path) {
  auto out = open_out(path);
  for (Index i = 0; i < corr.rows(); ++i) {
    for (Index j = 0; j < corr.cols(); ++j) {
      if (j) out << ',';
      out << fmt(corr(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

void write_eigen_csv(const Eigen::VectorXd& values,
                     const Eigen::MatrixXd& vectors, const std::string& path) {
  auto out = open_out(path);
  out << "eigenvalue";
  for (Index i = 0; i < vectors.rows(); ++i) out << ",v" << (i + 1);
  out << '\n';
  for (Index j = 0; j < values.size(); ++j) {
    out << fmt(values(j));
    for (Index i = 0; i < vectors.rows(); ++i) out << ',' << fmt(vectors(i, j));
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace tenreg

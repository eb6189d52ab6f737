#include "ssop/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace ssop::io {

namespace {

static_assert(std::endian::native == std::endian::little, "container assumes little-endian host");

constexpr std::array<char, 16> kMagic{'S', 'S', 'O', 'P', 'M', 'A', 'T', '1'};

struct Header {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  ScalarKind kind = ScalarKind::Complex128;
};

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  return out;
}

void write_header(std::ofstream& out, Eigen::Index rows, Eigen::Index cols, ScalarKind kind) {
  if (rows > UINT32_MAX || cols > UINT32_MAX) throw InvalidArgument("matrix too large for container");
  const auto r = static_cast<std::uint32_t>(rows);
  const auto c = static_cast<std::uint32_t>(cols);
  const auto k = static_cast<std::uint8_t>(kind);
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&r), sizeof r);
  out.write(reinterpret_cast<const char*>(&c), sizeof c);
  out.write(reinterpret_cast<const char*>(&k), sizeof k);
}

Header read_header(std::ifstream& in, const fs::path& path) {
  std::array<char, 16> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error("not an SSOPMAT1 file: " + path.string());
  Header h;
  std::uint8_t k = 0;
  in.read(reinterpret_cast<char*>(&h.rows), sizeof h.rows);
  in.read(reinterpret_cast<char*>(&h.cols), sizeof h.cols);
  in.read(reinterpret_cast<char*>(&k), sizeof k);
  if (!in || k > 1) throw Error("corrupt SSOPMAT1 header: " + path.string());
  h.kind = static_cast<ScalarKind>(k);
  return h;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path.string());
  return in;
}

void write_sidecar(const fs::path& path, const json& sidecar) {
  if (!sidecar.is_null()) write_json(fs::path(path.string() + ".json"), sidecar);
}

}  // namespace

void write_matrix(const fs::path& path, const CMat& m, const json& sidecar) {
  auto out = open_out(path);
  write_header(out, m.rows(), m.cols(), ScalarKind::Complex128);
  const Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  out.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(rm.size() * sizeof(cd)));
  if (!out) throw Error("write failed: " + path.string());
  write_sidecar(path, sidecar);
}

void write_real_matrix(const fs::path& path, const RMat& m, const json& sidecar) {
  auto out = open_out(path);
  write_header(out, m.rows(), m.cols(), ScalarKind::Float64);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  out.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!out) throw Error("write failed: " + path.string());
  write_sidecar(path, sidecar);
}

CMat read_matrix(const fs::path& path) {
  auto in = open_in(path);
  const Header h = read_header(in, path);
  if (h.kind == ScalarKind::Float64) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(h.rows, h.cols);
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
    if (!in) throw Error("truncated payload: " + path.string());
    return RMat(rm).cast<cd>();
  }
  Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(h.rows, h.cols);
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(cd)));
  if (!in) throw Error("truncated payload: " + path.string());
  return rm;
}

RMat read_real_matrix(const fs::path& path) {
  auto in = open_in(path);
  const Header h = read_header(in, path);
  if (h.kind != ScalarKind::Float64) throw Error("expected real matrix: " + path.string());
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(h.rows, h.cols);
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
  if (!in) throw Error("truncated payload: " + path.string());
  return rm;
}

ScalarKind peek_kind(const fs::path& path) {
  auto in = open_in(path);
  return read_header(in, path).kind;
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw InvalidArgument(std::string(what) + " must be a JSON object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!keys.contains(key)) throw InvalidArgument("unknown key '" + key + "' in " + what);
  }
}

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << doc.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open for reading: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::uint64_t checksum(const RVec& v) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(v.size()) * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string checksum_hex(const RVec& v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << checksum(v);
  return os.str();
}

}  // namespace ssop::io

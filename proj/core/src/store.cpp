#include "ssop/store.hpp"

#include <cstdio>

#include "ssop/io.hpp"

namespace ssop::store {

using nlohmann::json;

namespace {

std::string indexed(const char* stem, int k) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d.ssopmat", stem, k);
  return buf;
}

void require_manifest(const json& m, const char* kind, const fs::path& dir) {
  if (m.value("kind", std::string{}) != kind) {
    throw Error(dir.string() + " does not hold " + kind + " artifacts");
  }
}

json grid_json(const FrequencyGrid& g) { return {{"n_omega", g.n_omega}, {"dt", g.dt}}; }

FrequencyGrid grid_from(const json& j) {
  FrequencyGrid g;
  g.n_omega = j.at("n_omega").get<int>();
  g.dt = j.at("dt").get<double>();
  return g;
}

void save_list(const fs::path& dir, const char* stem, const std::vector<CMat>& list) {
  for (std::size_t k = 0; k < list.size(); ++k) io::write_matrix(dir / indexed(stem, static_cast<int>(k)), list[k]);
}

std::vector<CMat> load_list(const fs::path& dir, const char* stem, int n) {
  std::vector<CMat> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) out[static_cast<std::size_t>(k)] = io::read_matrix(dir / indexed(stem, k));
  return out;
}

RMat index_matrix(const std::vector<int>& v) {
  RMat m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

std::vector<int> index_vector(const RMat& m) {
  std::vector<int> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<int>(m.data()[i]);
  return v;
}

}  // namespace

json read_manifest(const fs::path& dir) { return io::read_json(dir / "manifest.json"); }

void save_basis(const fs::path& dir, const SpodBasis& basis) {
  fs::create_directories(dir);
  const int n = basis.n_omega();
  const int nd = static_cast<int>(basis.modes_full.front().cols());
  RMat energies(nd, n);
  for (int k = 0; k < n; ++k) energies.col(k) = basis.energies[static_cast<std::size_t>(k)];
  save_list(dir, "psi", basis.modes_full);
  io::write_real_matrix(dir / "energies.ssopmat", energies);
  io::write_real_matrix(dir / "weights.ssopmat", basis.weights);
  io::write_json(dir / "manifest.json", {{"kind", "spod_basis"},
                                         {"format", "SSOPMAT1"},
                                         {"grid", grid_json(basis.grid)},
                                         {"n_x", basis.n_x()},
                                         {"n_blocks", nd},
                                         {"r_avg", basis.r_avg},
                                         {"retained", basis.retained},
                                         {"weights_checksum", io::checksum_hex(basis.weights)}});
}

SpodBasis load_basis(const fs::path& dir) {
  const json m = read_manifest(dir);
  require_manifest(m, "spod_basis", dir);
  SpodBasis basis;
  basis.grid = grid_from(m.at("grid"));
  basis.weights = io::read_real_matrix(dir / "weights.ssopmat").reshaped();
  if (io::checksum_hex(basis.weights) != m.at("weights_checksum").get<std::string>()) {
    throw Error("weight checksum mismatch in " + dir.string());
  }
  basis.modes_full = load_list(dir, "psi", basis.grid.n_omega);
  const RMat energies = io::read_real_matrix(dir / "energies.ssopmat");
  for (int k = 0; k < basis.grid.n_omega; ++k) basis.energies.emplace_back(energies.col(k));
  basis.retained = m.at("retained").get<std::vector<int>>();
  basis.r_avg = m.at("r_avg").get<double>();
  return basis;
}

void save_operators(const fs::path& dir, const RomOperators& ops, const json& extra) {
  fs::create_directories(dir);
  save_list(dir, "e", ops.e);
  save_list(dir, "j", ops.j);
  save_list(dir, "h", ops.h);
  save_list(dir, "shift_n", ops.shift_n);
  save_list(dir, "shift_m", ops.shift_m);
  io::write_matrix(dir / "phi.ssopmat", ops.phi);
  io::write_real_matrix(dir / "weights.ssopmat", ops.weights);
  json m = {{"kind", "rom_operators"},
            {"format", "SSOPMAT1"},
            {"grid", grid_json(ops.grid)},
            {"retained", ops.layout.counts},
            {"p1", ops.p1()},
            {"n_inputs", ops.n_inputs},
            {"shift", ops.shift},
            {"h_mode", to_string(ops.h_mode)},
            {"closure", to_string(ops.closure)},
            {"weights_checksum", io::checksum_hex(ops.weights)}};
  if (ops.deim) {
    const auto& d = *ops.deim;
    m["p2"] = d.p2;
    m["deim_samples"] = d.samples;
    m["n_features"] = d.s.size();
    save_list(dir, "deim_n", d.n);
    save_list(dir, "deim_m", d.m);
    for (std::size_t f = 0; f < d.s.size(); ++f) {
      save_list(dir, ("deim_s" + std::to_string(f)).c_str(), d.s[f]);
    }
  }
  if (ops.triadic) {
    const auto& t = *ops.triadic;
    m["epsilon"] = t.epsilon;
    m["candidates"] = t.candidates;
    m["retained_triads"] = t.retained;
    for (std::size_t k = 0; k < t.blocks.size(); ++k) {
      const auto& b = t.blocks[k];
      const int kk = static_cast<int>(k);
      io::write_real_matrix(dir / indexed("triad_first", kk), index_matrix(b.first));
      io::write_real_matrix(dir / indexed("triad_second", kk), index_matrix(b.second));
      io::write_matrix(dir / indexed("triad_n", kk), b.n);
      io::write_matrix(dir / indexed("triad_m", kk), b.m);
    }
    if (t.impact.size() > 0) io::write_real_matrix(dir / "triad_impact.ssopmat", t.impact);
  }
  if (!extra.is_null()) m["metadata"] = extra;
  io::write_json(dir / "manifest.json", m);
}

RomOperators load_operators(const fs::path& dir, const Nonlinearity& nonlinearity) {
  const json m = read_manifest(dir);
  require_manifest(m, "rom_operators", dir);
  RomOperators ops;
  ops.grid = grid_from(m.at("grid"));
  const int n = ops.grid.n_omega;
  ops.layout = CoefficientLayout(m.at("retained").get<std::vector<int>>());
  ops.weights = io::read_real_matrix(dir / "weights.ssopmat").reshaped();
  if (io::checksum_hex(ops.weights) != m.at("weights_checksum").get<std::string>()) {
    throw Error("weight checksum mismatch in " + dir.string());
  }
  ops.phi = io::read_matrix(dir / "phi.ssopmat");
  ops.n_inputs = m.at("n_inputs").get<int>();
  ops.shift = m.at("shift").get<double>();
  ops.h_mode = h_mode_from_string(m.at("h_mode").get<std::string>());
  ops.closure = closure_from_string(m.at("closure").get<std::string>());
  ops.e = load_list(dir, "e", n);
  ops.j = load_list(dir, "j", n);
  ops.h = load_list(dir, "h", n);
  ops.shift_n = load_list(dir, "shift_n", n);
  ops.shift_m = load_list(dir, "shift_m", n);
  ops.nonlinearity = nonlinearity;
  if (m.contains("p2")) {
    DeimOperators d;
    d.p2 = m.at("p2").get<int>();
    d.samples = m.at("deim_samples").get<std::vector<int>>();
    d.n = load_list(dir, "deim_n", n);
    d.m = load_list(dir, "deim_m", n);
    const int nf = m.at("n_features").get<int>();
    for (int f = 0; f < nf; ++f) d.s.push_back(load_list(dir, ("deim_s" + std::to_string(f)).c_str(), n));
    ops.deim = std::move(d);
  }
  if (m.contains("epsilon")) {
    TriadicTable t;
    t.epsilon = m.at("epsilon").get<double>();
    t.candidates = m.at("candidates").get<long long>();
    t.retained = m.at("retained_triads").get<long long>();
    t.blocks.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      auto& b = t.blocks[static_cast<std::size_t>(k)];
      b.first = index_vector(io::read_real_matrix(dir / indexed("triad_first", k)));
      b.second = index_vector(io::read_real_matrix(dir / indexed("triad_second", k)));
      b.n = io::read_matrix(dir / indexed("triad_n", k));
      b.m = io::read_matrix(dir / indexed("triad_m", k));
    }
    if (fs::exists(dir / "triad_impact.ssopmat")) t.impact = io::read_real_matrix(dir / "triad_impact.ssopmat");
    ops.triadic = std::move(t);
  }
  return ops;
}

void save_trajectory(const fs::path& path, const CMat& traj, double dt, const json& extra) {
  json side = {{"dt", dt}, {"n_steps", traj.cols()}, {"n_x", traj.rows()}};
  if (!extra.is_null()) side["metadata"] = extra;
  io::write_matrix(path, traj, side);
}

}  // namespace ssop::store

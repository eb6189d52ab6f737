#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "ssop/offline.hpp"
#include "ssop/spectra.hpp"

namespace ssop::store {

namespace fs = std::filesystem;

// One SSOPMAT1 file per frequency plus manifest.json.
void save_basis(const fs::path& dir, const SpodBasis& basis);
SpodBasis load_basis(const fs::path& dir);

// Operator directory. The pointwise nonlinearity is code, so loading takes it from the caller.
void save_operators(const fs::path& dir, const RomOperators& ops, const nlohmann::json& extra = {});
RomOperators load_operators(const fs::path& dir, const Nonlinearity& nonlinearity);
nlohmann::json read_manifest(const fs::path& dir);

// Single trajectory with its time-grid sidecar.
void save_trajectory(const fs::path& path, const CMat& traj, double dt, const nlohmann::json& extra = {});

}  // namespace ssop::store

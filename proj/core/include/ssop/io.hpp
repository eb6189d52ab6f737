#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>

#include <nlohmann/json.hpp>

#include "ssop/common.hpp"

namespace ssop::io {

namespace fs = std::filesystem;
using nlohmann::json;

// SSOPMAT1 container: 16-byte magic, u32 rows, u32 cols, u8 kind, row-major payload.
enum class ScalarKind : std::uint8_t { Complex128 = 0, Float64 = 1 };

void write_matrix(const fs::path& path, const CMat& m, const json& sidecar = nullptr);
void write_real_matrix(const fs::path& path, const RMat& m, const json& sidecar = nullptr);
CMat read_matrix(const fs::path& path);
RMat read_real_matrix(const fs::path& path);
ScalarKind peek_kind(const fs::path& path);

// Throws InvalidArgument naming the first key of j outside `allowed`.
void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const char* what);

void write_json(const fs::path& path, const json& doc);
json read_json(const fs::path& path);

// FNV-1a over the raw bytes; used to tie artifacts to the weight vector they assume.
std::uint64_t checksum(const RVec& v);
std::string checksum_hex(const RVec& v);

}  // namespace ssop::io

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mop/nn/infusion.hpp"
#include "mop/nn/model.hpp"

namespace mop {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace mop

namespace mop::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  MatrixR data;  // vectors are stored as n x 1
};

struct Checkpoint {
  nlohmann::ordered_json manifest;
  std::vector<NamedTensor> tensors;

  const MatrixR& tensor(std::string_view name) const;
};

/// Layout (all integers little-endian):
///   "MOPCKPT\0" | u32 version | u64 manifest bytes | manifest JSON
///   | u32 tensor count | per tensor: u32 name bytes, name, u64 rows,
///   u64 cols, rows*cols f64 row-major
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ck);
Checkpoint parse_checkpoint(std::span<const unsigned char> bytes, const std::string& origin);

template <typename Params>
void append_tensors(const Params& p, Checkpoint& ck, const std::string& prefix = {}) {
  p.visit([&](std::string_view name, const auto& t) {
    ck.tensors.push_back({prefix + std::string(name), MatrixR(t.template cast<Real>())});
  });
}

/// Fills every tensor of `p` from `ck`; shapes must match exactly.
template <typename Params>
void restore_tensors(Params& p, const Checkpoint& ck, const std::string& prefix = {}) {
  p.visit([&](std::string_view name, auto& t) {
    const auto& src = ck.tensor(prefix + std::string(name));
    if (src.rows() != t.rows() || src.cols() != t.cols())
      throw DataError("checkpoint tensor '" + prefix + std::string(name) + "' has the wrong shape");
    t = src;
  });
}

/// SHA-256 over every tensor's name, shape, and raw bytes in visit order.
template <typename Params>
std::string parameter_digest(const Params& p) {
  Checkpoint ck;
  append_tensors(p, ck);
  std::string buf;
  for (const auto& t : ck.tensors) {
    buf += t.name;
    buf += ':' + std::to_string(t.data.rows()) + 'x' + std::to_string(t.data.cols()) + ':';
    const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = t.data;
    buf.append(reinterpret_cast<const char*>(rm.data()), static_cast<std::size_t>(rm.size()) * sizeof(Real));
  }
  return sha256_hex(buf);
}

nlohmann::ordered_json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

void save_base_model(const std::filesystem::path& path, const EncoderModel<Real>& model);
EncoderModel<Real> load_base_model(const std::filesystem::path& path);

struct AdapterCheckpoint {
  ModelConfig config;
  std::string base_sha256;
  int partition = 0;
  std::uint64_t seed = 0;
  int epoch = 0;
  AdapterStack<Real> adapters;
  EntityHead<Real> head;
};

void save_adapter(const std::filesystem::path& path, const AdapterCheckpoint& ck);
AdapterCheckpoint load_adapter(const std::filesystem::path& path);

/// Rejects checkpoints built against a different base model or config.
void check_adapter_compatible(const AdapterCheckpoint& ck, const ModelConfig& cfg,
                              const std::string& base_sha256);

}  // namespace mop::nn

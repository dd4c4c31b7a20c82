#pragma once

// Binary checkpoint: "MMFN1", u64 little-endian header length, JSON header,
// then every tensor's values as little-endian doubles in manifest order.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mmfn/nn.hpp"

namespace mmfn {

inline constexpr std::string_view kCheckpointMagic = "MMFN1";
inline constexpr int kCheckpointVersion = 1;

struct TensorEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;  // in doubles from the payload start
  std::uint64_t count = 0;
  bool operator==(const TensorEntry&) const = default;
};

struct CheckpointHeader {
  int format_version = kCheckpointVersion;
  std::string config;  // RunConfig text
  std::string vocab;   // BpeVocab text
  std::map<std::string, std::string> metadata;
  std::vector<TensorEntry> tensors;
  std::uint64_t payload_bytes = 0;
  std::uint64_t checksum = 0;  // FNV-1a 64 of the payload bytes

  const TensorEntry* find(std::string_view name) const;
};

struct Checkpoint {
  CheckpointHeader header;
  std::vector<std::vector<double>> values;  // parallel to header.tensors

  const std::vector<double>& tensor(std::string_view name) const;
};

// The manifest, sizes and checksum of `header` are filled in from `params`.
std::string encode_checkpoint(CheckpointHeader header, const ParamList& params);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header, const ParamList& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Reads the header without touching the payload.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Copies checkpoint values into existing parameters by name. Missing names
// and shape disagreements raise CompatibilityError naming the tensor.
void restore_params(const Checkpoint& ckpt, const ParamList& params);

}  // namespace mmfn

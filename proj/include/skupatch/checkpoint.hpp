#pragma once

// Binary checkpoint container:
//   "SKUP1"
//   u32 length, model config text (`key = value` lines)
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, rank × u32 dims, f32 payload
//   u8 optimizer flag; when 1: u64 step count followed by the first and
//     second moments as tensor entries named "m/<param>" and "v/<param>"
//   u32 CRC-32 of every preceding byte
// All integers and floats little-endian.

#include <optional>
#include <string>
#include <vector>

#include "skupatch/config.hpp"
#include "skupatch/model.hpp"
#include "skupatch/optim.hpp"

namespace skupatch {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
  bool operator==(const NamedArray&) const = default;
};

struct OptimizerSnapshot {
  std::uint64_t steps = 0;
  std::vector<NamedArray> first;
  std::vector<NamedArray> second;
  bool operator==(const OptimizerSnapshot&) const = default;
};

struct CheckpointData {
  ModelConfig config;
  std::vector<NamedArray> tensors;
  std::optional<OptimizerSnapshot> optimizer;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
/// Throws InputError on a bad magic, truncation, trailing bytes or CRC mismatch.
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

CheckpointData snapshot(SkuPatchModel<float>& model, const AdamW<float>* optimizer = nullptr);
/// Builds a model from the stored config and copies every tensor in. Throws
/// InputError on missing, extra or mis-shaped tensors.
SkuPatchModel<float> model_from_checkpoint(const CheckpointData& data);
/// Restores optimizer moments saved by snapshot().
void restore_optimizer(const CheckpointData& data, AdamW<float>& optimizer);

}  // namespace skupatch

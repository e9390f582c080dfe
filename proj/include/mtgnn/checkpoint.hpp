#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mtgnn/config.hpp"
#include "mtgnn/model.hpp"
#include "mtgnn/parameters.hpp"

// Checkpoint byte layout (all integers little-endian):
//
//   "MTGNN1"                         6 bytes magic
//   u32 version                      currently 1
//   u64 config_bytes, config text    UTF-8 `key=value\n` lines (RunConfig::to_text)
//   u64 parameter_count, blobs...
//   u64 buffer_count, blobs...
//
// blob:
//   u32 name_bytes, name             UTF-8
//   u32 rank, rank × u64 extents
//   numel × f64                      IEEE-754 binary64, little-endian
//
// Buffers hold non-parameter state: "graph.adjacency" (global N×N matrix after
// training), "data.mean" and "data.scale" (normalization statistics).
namespace mtgnn {

inline constexpr char kCheckpointMagic[] = "MTGNN1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  ParameterList parameters;
  ParameterList buffers;

  /// Null when absent.
  const Tensor* find_parameter(const std::string& name) const;
  const Tensor* find_buffer(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of a model's tensors (deep copies) plus the given buffers.
Checkpoint make_checkpoint(const RunConfig& config, const MtgnnModel& model,
                           ParameterList buffers = {});

/// Rebuilds the model described by the checkpoint and loads every tensor.
std::unique_ptr<MtgnnModel> restore_model(const Checkpoint& checkpoint);

/// Copies tensor values by name into `model`; names and shapes must match.
void load_parameters(MtgnnModel& model, const ParameterList& values);

}  // namespace mtgnn

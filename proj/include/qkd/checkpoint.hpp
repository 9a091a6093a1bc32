#pragma once

#include <string>
#include <utility>
#include <vector>

#include "qkd/models.hpp"
#include "qkd/tensor.hpp"

namespace qkd {

// Checkpoint file layout (all integers little-endian):
//   magic "QKDF" | u32 version | u32 flags | u32 len + spec name |
//   u32 num_classes | u64 record count |
//   records: u32 len + name | u32 ndim | u64 dims[ndim] | f64 data
// flags bit 0: quantizer intervals have been initialized.
// Round-trips are byte-exact, including raw double payloads.
struct CheckpointData {
  std::string spec_name;
  int num_classes = 0;
  bool intervals_initialized = false;
  std::vector<std::pair<std::string, Tensor>> records;
};

void write_checkpoint(const CheckpointData& data, const std::string& path);
CheckpointData read_checkpoint(const std::string& path);

// Saves every Parameter of the state, plus optional extra records (e.g.
// optimizer moments, conventionally prefixed "opt.").
void save_state(const NetworkState& state, const std::string& path,
                const std::vector<std::pair<std::string, Tensor>>& extra = {});

// Rebuilds a NetworkState for `spec` from a checkpoint. The stored spec
// name, class count, and parameter shapes must match. Interval records may
// be absent (full-precision checkpoints); "opt." records are returned via
// `extra` when requested.
NetworkState load_state(const std::string& path, const NetworkSpec& spec,
                        std::vector<std::pair<std::string, Tensor>>* extra = nullptr);

}  // namespace qkd

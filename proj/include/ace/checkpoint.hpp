#pragma once

#include <memory>
#include <string>

#include "ace/config.hpp"
#include "ace/model.hpp"
#include "ace/optim.hpp"

namespace ace {

// Checkpoint layout (little-endian):
//   "ACCP", u16 version=1,
//   u32 config text length + bytes,
//   u64 epoch, u64 rng key, u64 rng counter,
//   u64 param count; per param: u16 name length, name, tensor dump,
//   u64 adam step count; per param: raw float m then v buffers.
// save -> load -> save is byte-identical.
struct CheckpointData {
  RunConfig config;
  std::size_t epoch = 0;
  std::unique_ptr<AceModel> model;
  Adam adam;
};

void save_checkpoint(const std::string& path, const RunConfig& config,
                     std::size_t epoch, AceModel& model, const Adam& adam);

CheckpointData load_checkpoint(const std::string& path);

}  // namespace ace

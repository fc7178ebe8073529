#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <Eigen/Dense>

namespace rapid {

// Binary checkpoint layout, all integers and floats little-endian:
//
//   offset  size  field
//   0       8     magic "RAPIDCK1"
//   8       4     u32 format version (1)
//   12      4     u32 feature dimension D
//   16      4     u32 vocabulary size
//   20      4     u32 task name length L
//   24      8     u64 global gradient step
//   32      L     task name, UTF-8, no terminator
//   32+L    8*D   f64 theta[0..D)
//
// A plain-text sidecar "<path>.txt" repeats the header as key = value lines.
struct Checkpoint {
  std::uint32_t vocab_size = 0;
  std::string task_name;
  std::uint64_t step = 0;
  Eigen::VectorXd theta;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rapid

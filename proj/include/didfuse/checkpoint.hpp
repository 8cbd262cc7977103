#pragma once

// Binary checkpoint: "DIDF", u32 LE version, u32 LE header length, a UTF-8
// JSON header, then float32 LE parameter values in header order.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "didfuse/loss.hpp"
#include "didfuse/network.hpp"

namespace didfuse {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  NetworkParams<float> params;
  LossConfig loss;
  std::map<std::string, std::string> info;  // free-form provenance (seed, epochs, ...)
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

// Written to a temporary sibling and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace didfuse

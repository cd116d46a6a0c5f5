#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dpt/hourglass/config.hpp"
#include "dpt/numerics/autodiff.hpp"

namespace dpt::hourglass {

// Binary layout: magic "DPTCKPT1", u32 format version, model config text,
// free-form metadata text (key = value lines), then named float blobs with
// their shapes. Integers are little-endian.
struct Checkpoint {
  std::string config_text;
  std::string meta_text;
  std::vector<std::pair<std::string, Array<float>>> blobs;

  const Array<float>* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Missing file: DataError "checkpoint not found: <path>". Bad magic,
// version or truncation: DataError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// DataError listing the differing keys when the stored model config is not
// `expected`.
void check_config(const Checkpoint& ckpt, const ModelConfig& expected);

template <typename T>
void store_params(Checkpoint& ckpt, const ad::ParameterSet<T>& params, const std::string& prefix = "param.");
// Every parameter must be present with its shape; otherwise DataError.
template <typename T>
void restore_params(const Checkpoint& ckpt, ad::ParameterSet<T>& params, const std::string& prefix = "param.");

}  // namespace dpt::hourglass

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mscdt/pipeline/model.hpp"

namespace mscdt::pipeline {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  TrainConfig train;
  std::uint64_t step = 0;
  std::vector<StepLosses> loss_tail;  // last few training steps
};

/// Writes `dir/manifest.json`, `dir/params/<name>.tsr` and, when an optimizer
/// is given, `dir/opt/<name>.{m,v}.tsr`. `run` is stored under the "run"
/// key and left out of the returned content hash.
template <typename T>
std::string save_checkpoint(const Model<T>& model, const Adam<T>* optimizer,
                            const CheckpointMeta& meta,
                            const std::filesystem::path& dir,
                            const nlohmann::json& run = nullptr);

template <typename T>
struct LoadedCheckpoint {
  std::unique_ptr<Model<T>> model;
  std::unique_ptr<Adam<T>> optimizer;  // null when no moments were saved
  CheckpointMeta meta;
  Precision stored_precision = Precision::f32;
  std::string content_hash;  // SHA-256 of the manifest without "run"
};

/// Rebuilds the model from the manifest config and verifies every blob hash.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir);

/// Reads only the manifest and returns the stored precision.
Precision checkpoint_precision(const std::filesystem::path& dir);

/// Content hash without loading blobs.
std::string checkpoint_hash(const std::filesystem::path& dir);

inline constexpr std::size_t kLossTailLength = 50;

}  // namespace mscdt::pipeline

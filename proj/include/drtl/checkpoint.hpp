#pragma once

#include <filesystem>

#include "drtl/trainer.hpp"

namespace drtl {

/// Text manifest (format tag, config echo, epoch, dev metric, vocabulary,
/// array table) followed by the raw little-endian float64 arrays. Written to a
/// temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainConfig& config,
                     const Mat4& omega, std::size_t epoch, double dev_metric);

struct LoadedCheckpoint {
  Model model;
  TrainConfig config;
  Mat4 omega;
  std::size_t epoch = 0;
  double dev_metric = 0.0;
};

/// Rebuilds the model from the config echo and fills every array bit-exactly.
/// Throws DataError naming the offending field on any mismatch or truncation.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace drtl

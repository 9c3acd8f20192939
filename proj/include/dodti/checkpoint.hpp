#pragma once

#include "dodti/denoiser.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>

namespace dodti {

/// Denoiser weights plus the shared solver scalars learned with them.
struct TrainedModel {
  DenoiserWeights weights;
  double rho = 1e-3;
  double lambda = 0.1;
  nlohmann::json info = nlohmann::json::object();  // free-form provenance (epochs, timing, ...)
};

/// Writes the checkpoint format described in docs/checkpoint_format.md:
/// "DODTICKP", u64 LE header length, JSON header, float32 LE parameters.
void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace dodti

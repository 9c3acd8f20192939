#pragma once

#include <filesystem>
#include <vector>

namespace dodti {

struct TrainSample;

/// Command-line entry point. Returns 0 on success, 1 for usage errors,
/// 2 for data errors and 3 for numerical failures.
int run_cli(int argc, const char* const* argv);

/// Training dataset directory: dataset.json plus per-sample NIfTI files.
void write_dataset(const std::vector<TrainSample>& samples, const std::filesystem::path& dir);
std::vector<TrainSample> read_dataset(const std::filesystem::path& dir);

}  // namespace dodti

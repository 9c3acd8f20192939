#pragma once

#include "dodti/dti_core.hpp"
#include "dodti/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dodti {

/// RMSE over the mask divided by the RMS of `ref` over the mask.
double nrmse(std::span<const double> est, std::span<const double> ref, const Mask& mask);

struct SsimParams {
  double window_sigma = 1.5;  // voxels
  int window_radius = 5;      // 11^3 support
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Local SSIM map. Local moments are Gaussian-weighted averages over masked
/// voxels only (normalised convolution); the dynamic range is
/// max(ref) - min(ref) within the mask. Voxels outside the mask are 0.
std::vector<double> ssim3d_map(Dims dims, std::span<const double> est, std::span<const double> ref, const Mask& mask,
                               const SsimParams& params = {});

/// Mean of ssim3d_map over the mask.
double ssim3d(Dims dims, std::span<const double> est, std::span<const double> ref, const Mask& mask,
              const SsimParams& params = {});

/// 1 - SS_res / SS_tot over the mask.
double r_squared(std::span<const double> est, std::span<const double> ref, const Mask& mask);

struct MapMetrics {
  double nrmse = 0;
  double ssim = 0;
  std::optional<double> r2;
};

struct MetricReport {
  MapMetrics fa, md, ad, rd;
  std::size_t mask_voxels = 0;

  const MapMetrics& operator[](const std::string& map) const;
};

MetricReport evaluate_maps(const ScalarMaps& est, const ScalarMaps& ref, const Mask& mask, bool with_r2 = false);

}  // namespace dodti

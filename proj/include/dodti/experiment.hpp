#pragma once

#include "dodti/checkpoint.hpp"
#include "dodti/estimators.hpp"
#include "dodti/metrics.hpp"
#include "dodti/simulation.hpp"
#include "dodti/unroll.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace dodti {

enum class MethodKind { lls, wlls, dodti };
enum class DenoiserKind { identity, gaussian, cnn };

/// Gaussian-denoiser settings used when nothing else is given; picked by a
/// grid sweep on a separate phantom (seed 101, 48^3, sigma 0.02 to 0.04).
struct GaussianDefaults {
  static constexpr double sigma_voxels = 0.6;
  static constexpr double rho = 1.0;
  static constexpr double lambda = 0.05;
};

struct MethodConfig {
  MethodKind kind = MethodKind::wlls;
  DenoiserKind denoiser = DenoiserKind::identity;
  int wlls_iters = kDefaultWllsIterations;
  UnrollConfig unroll;  // ns, nt, rho, lambda (rho/lambda overridden by a CNN model)
  double gaussian_sigma = GaussianDefaults::sigma_voxels;
  std::shared_ptr<const TrainedModel> model;  // required for the cnn denoiser
};

/// "lls", "wlls", "dodti-identity", "dodti-gaussian", "dodti-cnn".
std::string method_label(const MethodConfig& m);
/// Parses a label above on top of `base` (whose numeric settings are kept).
MethodConfig parse_method(const std::string& label, MethodConfig base = {});
DenoiserKind parse_denoiser(const std::string& name);

/// Gaussian-denoiser DoDTI configuration with the tuned defaults.
MethodConfig gaussian_method(int ns = 8);
/// CNN DoDTI configuration taking rho and lambda from the model.
MethodConfig cnn_method(std::shared_ptr<const TrainedModel> model, int ns = 8);

/// Runs one estimator on a stack. The returned field is in mm^2/s with
/// `mask` attached (the stack's default mask when `mask` is empty).
ParamField estimate(const MethodConfig& method, const DwiStack& stack, const Mask& mask = {},
                    UnrollResult* details = nullptr);

enum class ExperimentAxis { bvalue, directions6, ndw, noise, varnoise };

ExperimentAxis parse_axis(const std::string& name);
std::string to_string(ExperimentAxis axis);

struct AxisPoint {
  std::string label;
  double value = 0.0;
  SchemeRequest scheme;
  NoiseSpec noise;
};

struct ExperimentConfig {
  ExperimentAxis axis = ExperimentAxis::noise;
  std::vector<MethodConfig> methods;
  Dims dims{48, 48, 48};
  std::uint64_t phantom_seed = 1;
  std::uint64_t noise_seed = 1;
  double b = 1000.0;      // default acquisition
  double sigma = 0.03;
  /// Overrides the axis values (b-values, sigmas, N_dw); ignored for
  /// directions6 and varnoise.
  std::vector<double> values;
  std::filesystem::path out_dir;
  bool plots = true;
};

/// Axis points for a config: b in {800,1000,1200}; DSM, DSM rotated by
/// 30/60/90 degrees and Jones; N_dw in {7,15,25,36}; sigma in
/// {0.01,...,0.04}; radial sigma from 0.01 (outside) to 0.04 (centre).
std::vector<AxisPoint> axis_points(const ExperimentConfig& cfg);

struct ExperimentRow {
  std::string axis;
  std::string label;
  double value = 0.0;
  std::string method;
  std::string map;
  double nrmse = 0.0;
  double ssim = 0.0;
  std::string error;  // non-empty when the method failed on this cell
};

struct ExperimentResult {
  std::vector<ExperimentRow> rows;
  /// NRMSE of `map` for `method` at each axis point, in axis order (NaN on failure).
  std::vector<double> series(const std::string& method, const std::string& map) const;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentResult run_experiment(const ExperimentConfig& cfg);

void write_experiment_csv(const ExperimentResult& result, const std::filesystem::path& path);
/// One SVG line chart of `metric` ("nrmse" or "ssim") for `map` against the axis.
void write_experiment_svg(const ExperimentResult& result, const std::string& map, const std::string& metric,
                          const std::filesystem::path& path);

}  // namespace dodti

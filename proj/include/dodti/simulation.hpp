#pragma once

#include "dodti/dti_core.hpp"
#include "dodti/estimators.hpp"
#include "dodti/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dodti {

// ---------------------------------------------------------------- schemes

enum class SchemeKind { dsm6, jones6, jones_n, custom };

SchemeKind parse_scheme_kind(const std::string& name);
std::string to_string(SchemeKind kind);

/// Direction counts available as bundled electrostatic-repulsion tables.
std::span<const int> supported_jones_counts();

/// Unit directions of a bundled table ("dsm6", "jones6", "jones<N>").
std::vector<Eigen::Vector3d> direction_table(const std::string& name);

struct SchemeRequest {
  SchemeKind kind = SchemeKind::dsm6;
  int n_dw = 6;              // used by jones_n
  double b = 1000.0;
  double rotation_deg_z = 0.0;
  int n_b0 = 1;
  std::vector<Eigen::Vector3d> custom_directions;  // used by custom
};

/// b=0 entries first, then the (optionally z-rotated) directions at `b`.
GradientScheme make_scheme(const SchemeRequest& request);

// ---------------------------------------------------------------- phantom

struct Phantom {
  ParamField gt;  // mask = ellipsoidal brain region
};

inline constexpr double kBackgroundDiffusivity = 0.7e-3;
inline constexpr double kFiberAxial = 1.7e-3;
inline constexpr double kFiberRadial = 0.2e-3;
inline constexpr double kCsfDiffusivity = 2.5e-3;

/// Deterministic tensor phantom: isotropic background, two to four
/// crossing fibre slabs of distinct orientation, two isotropic fluid
/// compartments, smooth ln S0, ellipsoidal mask. Geometry is drawn from `seed`; dims must be at least 16^3.
Phantom make_phantom(Dims dims, std::uint64_t seed);

// ---------------------------------------------------------------- signals

/// exp(A x) per masked voxel; zero signal outside the field's mask.
DwiStack synthesize_dwi(const ParamField& gt, const GradientScheme& scheme);

struct Normalized {
  DwiStack stack;
  double scale = 1.0;
};

/// Divides every channel by the nearest-rank 99th percentile of the first
/// b=0 volume. Throws DataError when that percentile is not positive.
Normalized normalize_p99(const DwiStack& stack);

/// Nearest-rank percentile: the ceil(p/100 * n)-th order statistic.
double nearest_rank_percentile(std::vector<double> values, double percent);

// ---------------------------------------------------------------- noise

enum class NoiseKind { stationary, radial_linear };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::stationary;
  double sigma = 0.03;
  double sigma_outer = 0.01;
  double sigma_inner = 0.04;
  std::uint64_t seed = 0;
};

/// Per-voxel sigma. For radial_linear, sigma interpolates linearly from
/// sigma_inner at the volume centre to sigma_outer at radius R, where R is
/// the largest centre distance of any mask voxel (or the half-diagonal
/// without a mask); beyond R it stays at sigma_outer.
std::vector<double> noise_sigma_map(Dims dims, const NoiseSpec& spec, const Mask& mask = {});

/// m = sqrt((s + n1)^2 + n2^2) on every voxel and channel. Gaussian draws
/// come from a counter-based stream keyed by (seed, voxel, channel), so the
/// output is independent of thread count.
DwiStack add_rician_noise(const DwiStack& stack, const NoiseSpec& spec, const Mask& mask = {});

/// Standard normal pair for a counter key (exposed for tests).
std::pair<double, double> counter_normal_pair(std::uint64_t seed, std::uint64_t voxel, std::uint64_t channel);

// ---------------------------------------------------------------- pipeline

struct SimulatedData {
  DwiStack noisy;     // normalised, noisy
  DwiStack clean;     // normalised, noise-free
  ParamField gt;      // ln S0 shifted onto the normalised scale
  double scale = 1.0;
};

/// synthesize -> normalize_p99 -> Rician noise.
SimulatedData simulate(const Phantom& phantom, const GradientScheme& scheme, const NoiseSpec& noise);

/// Sixteen evenly spaced training noise levels from 0.005 to 0.045.
std::vector<double> training_noise_levels();
/// Validation noise levels {0.01, 0.02, 0.03, 0.04}.
std::vector<double> validation_noise_levels();

}  // namespace dodti

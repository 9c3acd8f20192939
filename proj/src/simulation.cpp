#include "dodti/simulation.hpp"

#include "dodti/error.hpp"
#include "dodti/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace dodti {

// Defined in the generated direction_tables.cpp.
const std::map<std::string, std::string>& bundled_direction_tables();

namespace {

constexpr std::array<int, 6> kJonesCounts = {7, 15, 25, 36, 46, 64};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double unit_open(std::uint64_t bits) { return (double(bits >> 11) + 0.5) * 0x1.0p-53; }

// Portable uniform draws on top of mt19937_64 (std distributions are not
// specified bit-for-bit across standard libraries).
class PhantomRng {
 public:
  explicit PhantomRng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_open(engine_()); }
  Eigen::Vector3d direction() {
    const double z = uniform(-1, 1), phi = uniform(0, 2 * std::numbers::pi);
    const double r = std::sqrt(std::max(0.0, 1 - z * z));
    return {r * std::cos(phi), r * std::sin(phi), z};
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace

SchemeKind parse_scheme_kind(const std::string& name) {
  if (name == "dsm6") return SchemeKind::dsm6;
  if (name == "jones6") return SchemeKind::jones6;
  if (name == "jones-N" || name == "jones-n" || name == "jones_n" || name == "jones") return SchemeKind::jones_n;
  if (name == "custom") return SchemeKind::custom;
  throw UsageError("unknown scheme kind '" + name + "'");
}

std::string to_string(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::dsm6: return "dsm6";
    case SchemeKind::jones6: return "jones6";
    case SchemeKind::jones_n: return "jones-N";
    case SchemeKind::custom: return "custom";
  }
  return "?";
}

std::span<const int> supported_jones_counts() { return kJonesCounts; }

std::vector<Eigen::Vector3d> direction_table(const std::string& name) {
  const auto& tables = bundled_direction_tables();
  const auto it = tables.find(name);
  if (it == tables.end()) throw UsageError("no bundled direction table '" + name + "'");
  std::vector<Eigen::Vector3d> dirs;
  std::istringstream in(it->second);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    Eigen::Vector3d g;
    if (!(row >> g[0])) continue;
    if (!(row >> g[1] >> g[2])) throw DataError("malformed row in direction table '" + name + "'");
    dirs.push_back(g.normalized());
  }
  return dirs;
}

GradientScheme make_scheme(const SchemeRequest& request) {
  std::vector<Eigen::Vector3d> dirs;
  switch (request.kind) {
    case SchemeKind::dsm6: dirs = direction_table("dsm6"); break;
    case SchemeKind::jones6: dirs = direction_table("jones6"); break;
    case SchemeKind::jones_n:
      if (std::find(kJonesCounts.begin(), kJonesCounts.end(), request.n_dw) == kJonesCounts.end())
        throw UsageError("no bundled jones table with " + std::to_string(request.n_dw) + " directions");
      dirs = direction_table("jones" + std::to_string(request.n_dw));
      break;
    case SchemeKind::custom:
      if (request.custom_directions.empty()) throw UsageError("custom scheme needs directions");
      for (const auto& g : request.custom_directions) dirs.push_back(g.normalized());
      break;
  }
  if (request.n_b0 < 0 || request.b <= 0) throw UsageError("make_scheme: invalid b-value or b=0 count");
  const Eigen::Matrix3d R = rotation_z(request.rotation_deg_z);
  GradientScheme scheme;
  for (int i = 0; i < request.n_b0; ++i) scheme.entries.push_back({0.0, Eigen::Vector3d::Zero()});
  for (const auto& g : dirs) {
    const Eigen::Vector3d r = request.rotation_deg_z == 0.0 ? g : Eigen::Vector3d(R * g);
    scheme.entries.push_back({request.b, r});
  }
  return scheme;
}

Phantom make_phantom(Dims dims, std::uint64_t seed) {
  if (dims.nx < 16 || dims.ny < 16 || dims.nz < 16) throw UsageError("phantom dims must be at least 16^3");
  PhantomRng rng(seed);
  const Eigen::Vector3d centre((dims.nx - 1) / 2.0, (dims.ny - 1) / 2.0, (dims.nz - 1) / 2.0);
  const Eigen::Vector3d semi(0.44 * dims.nx, 0.44 * dims.ny, 0.44 * dims.nz);
  const double min_extent = std::min({dims.nx, dims.ny, dims.nz});

  struct Slab {
    Eigen::Vector3d normal, fibre;
    double offset, thickness;
  };
  std::vector<Slab> slabs;
  const int n_slabs = 2 + int(rng.uniform(0, 3));
  while (int(slabs.size()) < n_slabs) {
    Slab s;
    s.normal = rng.direction();
    Eigen::Vector3d t = rng.direction();
    t -= t.dot(s.normal) * s.normal;
    if (t.norm() < 1e-3) continue;
    s.fibre = t.normalized();
    const bool distinct = std::all_of(slabs.begin(), slabs.end(), [&](const Slab& o) {
      return std::abs(o.fibre.dot(s.fibre)) < 0.85 && std::abs(o.normal.dot(s.normal)) < 0.95;
    });
    if (!distinct) continue;
    s.offset = rng.uniform(-0.25, 0.25) * min_extent * 0.44;
    s.thickness = rng.uniform(0.18, 0.3) * min_extent;
    slabs.push_back(s);
  }
  const double phase[3] = {rng.uniform(0, 2 * std::numbers::pi), rng.uniform(0, 2 * std::numbers::pi),
                           rng.uniform(0, 2 * std::numbers::pi)};
  // Paired fluid-filled compartments either side of the centre.
  const double csf_shift = rng.uniform(0.1, 0.14);
  const Eigen::Vector3d csf_semi(0.07 * dims.nx, rng.uniform(0.1, 0.16) * dims.ny, 0.1 * dims.nz);

  Mask mask(dims.voxels(), 0);
  Phantom ph{ParamField(dims)};
  const Eigen::Matrix3d iso = kBackgroundDiffusivity * Eigen::Matrix3d::Identity();
  for (int z = 0; z < dims.nz; ++z)
    for (int y = 0; y < dims.ny; ++y)
      for (int x = 0; x < dims.nx; ++x) {
        const Eigen::Vector3d p = Eigen::Vector3d(x, y, z) - centre;
        if (p.cwiseQuotient(semi).squaredNorm() > 1.0) continue;
        const std::size_t v = dims.index(x, y, z);
        mask[v] = 1;
        Eigen::Matrix3d D = iso;
        for (const auto& s : slabs)
          if (std::abs(s.normal.dot(p) - s.offset) < s.thickness / 2)
            D = kFiberRadial * Eigen::Matrix3d::Identity() + (kFiberAxial - kFiberRadial) * s.fibre * s.fibre.transpose();
        for (double side : {-1.0, 1.0}) {
          const Eigen::Vector3d q = p - Eigen::Vector3d(side * csf_shift * dims.nx, 0, 0);
          if (q.cwiseQuotient(csf_semi).squaredNorm() <= 1.0) D = kCsfDiffusivity * Eigen::Matrix3d::Identity();
        }
        const double s0 = 0.85 +
                          0.1 * std::sin(2 * std::numbers::pi * 0.6 * x / dims.nx + phase[0]) *
                              std::cos(2 * std::numbers::pi * 0.5 * y / dims.ny + phase[1]) +
                          0.05 * std::cos(2 * std::numbers::pi * 0.7 * z / dims.nz + phase[2]);
        ph.gt.values.col(Eigen::Index(v)) = params_from_tensor(std::log(s0), D);
      }
  ph.gt.mask = std::move(mask);
  return ph;
}

DwiStack synthesize_dwi(const ParamField& gt, const GradientScheme& scheme) {
  validate_scheme(scheme, /*for_fitting=*/false);
  const DesignMatrix A = build_design_matrix(scheme);
  DwiStack stack{Volume(gt.dims, int(scheme.size())), scheme};
  parallel_for(gt.voxels(), [&](std::size_t v) {
    if (!in_mask(gt.mask, v)) return;
    stack.signals.data.col(Eigen::Index(v)) = predict_signals(gt.voxel(v), A);
  });
  return stack;
}

double nearest_rank_percentile(std::vector<double> values, double percent) {
  if (values.empty()) throw DataError("percentile of an empty set");
  const auto n = values.size();
  std::size_t rank = std::size_t(std::ceil(percent / 100.0 * double(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + std::ptrdiff_t(rank - 1), values.end());
  return values[rank - 1];
}

Normalized normalize_p99(const DwiStack& stack) {
  const auto b0 = Eigen::Index(stack.scheme.first_b0());
  const Eigen::VectorXd first = stack.signals.data.row(b0).transpose();
  const double scale = nearest_rank_percentile(std::vector<double>(first.data(), first.data() + first.size()), 99.0);
  if (!(scale > 0)) throw DataError("b=0 volume is all zero; cannot normalise");
  Normalized out{stack, scale};
  out.stack.signals.data /= scale;
  return out;
}

std::vector<double> noise_sigma_map(Dims dims, const NoiseSpec& spec, const Mask& mask) {
  const std::size_t n = dims.voxels();
  if (spec.kind == NoiseKind::stationary) {
    if (spec.sigma < 0) throw UsageError("sigma must be >= 0");
    return std::vector<double>(n, spec.sigma);
  }
  if (spec.sigma_inner < 0 || spec.sigma_outer < 0) throw UsageError("sigma must be >= 0");
  const Eigen::Vector3d centre((dims.nx - 1) / 2.0, (dims.ny - 1) / 2.0, (dims.nz - 1) / 2.0);
  double radius = 0;
  if (mask.empty()) {
    radius = centre.norm();
  } else {
    for (int z = 0; z < dims.nz; ++z)
      for (int y = 0; y < dims.ny; ++y)
        for (int x = 0; x < dims.nx; ++x)
          if (mask[dims.index(x, y, z)]) radius = std::max(radius, (Eigen::Vector3d(x, y, z) - centre).norm());
  }
  std::vector<double> sigma(n, spec.sigma_inner);
  if (radius <= 0) return sigma;
  for (int z = 0; z < dims.nz; ++z)
    for (int y = 0; y < dims.ny; ++y)
      for (int x = 0; x < dims.nx; ++x) {
        const double t = std::min(1.0, (Eigen::Vector3d(x, y, z) - centre).norm() / radius);
        sigma[dims.index(x, y, z)] = (1.0 - t) * spec.sigma_inner + t * spec.sigma_outer;
      }
  return sigma;
}

std::pair<double, double> counter_normal_pair(std::uint64_t seed, std::uint64_t voxel, std::uint64_t channel) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ voxel);
  h = splitmix64(h ^ (channel * 0xD1B54A32D192ED03ULL));
  const double u1 = unit_open(h);
  const double u2 = unit_open(splitmix64(h));
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

DwiStack add_rician_noise(const DwiStack& stack, const NoiseSpec& spec, const Mask& mask) {
  const auto sigma = noise_sigma_map(stack.dims(), spec, mask);
  DwiStack out = stack;
  const Eigen::Index channels = stack.signals.data.rows();
  parallel_for(stack.signals.voxels(), [&](std::size_t v) {
    const double s_v = sigma[v];
    if (s_v == 0.0) return;
    for (Eigen::Index c = 0; c < channels; ++c) {
      const auto [n1, n2] = counter_normal_pair(spec.seed, v, std::uint64_t(c));
      const double re = stack.signals.data(c, Eigen::Index(v)) + s_v * n1;
      const double im = s_v * n2;
      out.signals.data(c, Eigen::Index(v)) = std::sqrt(re * re + im * im);
    }
  });
  return out;
}

SimulatedData simulate(const Phantom& phantom, const GradientScheme& scheme, const NoiseSpec& noise) {
  const auto norm = normalize_p99(synthesize_dwi(phantom.gt, scheme));
  SimulatedData out;
  out.clean = norm.stack;
  out.scale = norm.scale;
  out.noisy = add_rician_noise(norm.stack, noise, phantom.gt.mask);
  out.gt = phantom.gt;
  const double shift = std::log(norm.scale);
  for (std::size_t v = 0; v < out.gt.voxels(); ++v)
    if (in_mask(out.gt.mask, v)) out.gt.values(0, Eigen::Index(v)) -= shift;
  return out;
}

std::vector<double> training_noise_levels() {
  std::vector<double> levels(16);
  for (int i = 0; i < 16; ++i) levels[std::size_t(i)] = 0.005 + i * (0.045 - 0.005) / 15.0;
  return levels;
}

std::vector<double> validation_noise_levels() { return {0.01, 0.02, 0.03, 0.04}; }

}  // namespace dodti

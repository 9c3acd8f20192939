#include "dodti/metrics.hpp"

#include "dodti/error.hpp"
#include "dodti/filter.hpp"
#include "dodti/parallel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace dodti {

namespace {

void check_inputs(std::span<const double> est, std::span<const double> ref, const Mask& mask) {
  if (est.size() != ref.size()) throw DataError("metric inputs differ in size");
  if (!mask.empty() && mask.size() != ref.size()) throw DataError("mask size does not match metric inputs");
  if (mask_count(mask, ref.size()) == 0) throw DataError("metric mask is empty");
}

}  // namespace

double nrmse(std::span<const double> est, std::span<const double> ref, const Mask& mask) {
  check_inputs(est, ref, mask);
  CompensatedSum err, norm;
  for (std::size_t v = 0; v < ref.size(); ++v) {
    if (!in_mask(mask, v)) continue;
    const double d = est[v] - ref[v];
    err.add(d * d);
    norm.add(ref[v] * ref[v]);
  }
  if (norm.value() <= 0) throw DataError("nrmse: reference is zero within the mask");
  return std::sqrt(err.value() / norm.value());
}

std::vector<double> ssim3d_map(Dims dims, std::span<const double> est, std::span<const double> ref, const Mask& mask,
                               const SsimParams& params) {
  check_inputs(est, ref, mask);
  if (ref.size() != dims.voxels()) throw DataError("ssim3d: dims do not match inputs");
  const std::size_t n = ref.size();

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t v = 0; v < n; ++v)
    if (in_mask(mask, v)) {
      lo = std::min(lo, ref[v]);
      hi = std::max(hi, ref[v]);
    }
  const double range = hi - lo;
  if (!(range > 0)) throw DataError("ssim3d: reference has zero dynamic range within the mask");
  const double c1 = (params.k1 * range) * (params.k1 * range);
  const double c2 = (params.k2 * range) * (params.k2 * range);

  std::vector<double> m(n), mx(n), my(n), mxx(n), myy(n), mxy(n);
  for (std::size_t v = 0; v < n; ++v) {
    const double w = in_mask(mask, v) ? 1.0 : 0.0;
    const double x = w ? est[v] : 0.0, y = w ? ref[v] : 0.0;
    m[v] = w;
    mx[v] = x;
    my[v] = y;
    mxx[v] = x * x;
    myy[v] = y * y;
    mxy[v] = x * y;
  }
  const auto kernel = gaussian_kernel_1d(params.window_sigma, params.window_radius);
  const auto gm = separable_filter(dims, m, kernel);
  const auto gx = separable_filter(dims, mx, kernel);
  const auto gy = separable_filter(dims, my, kernel);
  const auto gxx = separable_filter(dims, mxx, kernel);
  const auto gyy = separable_filter(dims, myy, kernel);
  const auto gxy = separable_filter(dims, mxy, kernel);

  std::vector<double> out(n, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    if (!in_mask(mask, v)) continue;
    const double w = gm[v];
    const double ux = gx[v] / w, uy = gy[v] / w;
    const double vx = std::max(0.0, gxx[v] / w - ux * ux);
    const double vy = std::max(0.0, gyy[v] / w - uy * uy);
    const double cxy = gxy[v] / w - ux * uy;
    out[v] = ((2 * ux * uy + c1) * (2 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
  }
  return out;
}

double ssim3d(Dims dims, std::span<const double> est, std::span<const double> ref, const Mask& mask,
              const SsimParams& params) {
  const auto map = ssim3d_map(dims, est, ref, mask, params);
  CompensatedSum sum;
  std::size_t count = 0;
  for (std::size_t v = 0; v < map.size(); ++v)
    if (in_mask(mask, v)) {
      sum.add(map[v]);
      ++count;
    }
  return std::clamp(sum.value() / double(count), -1.0, 1.0);
}

double r_squared(std::span<const double> est, std::span<const double> ref, const Mask& mask) {
  check_inputs(est, ref, mask);
  CompensatedSum mean_acc;
  std::size_t count = 0;
  for (std::size_t v = 0; v < ref.size(); ++v)
    if (in_mask(mask, v)) {
      mean_acc.add(ref[v]);
      ++count;
    }
  const double mean = mean_acc.value() / double(count);
  CompensatedSum ss_res, ss_tot;
  for (std::size_t v = 0; v < ref.size(); ++v) {
    if (!in_mask(mask, v)) continue;
    ss_res.add((est[v] - ref[v]) * (est[v] - ref[v]));
    ss_tot.add((ref[v] - mean) * (ref[v] - mean));
  }
  if (!(ss_tot.value() > 0)) throw DataError("r_squared: reference has zero variance within the mask");
  return 1.0 - ss_res.value() / ss_tot.value();
}

const MapMetrics& MetricReport::operator[](const std::string& name) const {
  std::string map = name;
  for (auto& c : map) c = char(std::tolower(static_cast<unsigned char>(c)));
  if (map == "fa") return fa;
  if (map == "md") return md;
  if (map == "ad") return ad;
  if (map == "rd") return rd;
  throw UsageError("unknown scalar map '" + map + "'");
}

MetricReport evaluate_maps(const ScalarMaps& est, const ScalarMaps& ref, const Mask& mask, bool with_r2) {
  if (!(est.dims == ref.dims)) throw DataError("scalar maps differ in dims");
  MetricReport report;
  report.mask_voxels = mask_count(mask, ref.fa.size());
  auto one = [&](const std::vector<double>& e, const std::vector<double>& r) {
    MapMetrics m;
    m.nrmse = nrmse(e, r, mask);
    m.ssim = ssim3d(ref.dims, e, r, mask);
    if (with_r2) m.r2 = r_squared(e, r, mask);
    return m;
  };
  report.fa = one(est.fa, ref.fa);
  report.md = one(est.md, ref.md);
  report.ad = one(est.ad, ref.ad);
  report.rd = one(est.rd, ref.rd);
  return report;
}

}  // namespace dodti

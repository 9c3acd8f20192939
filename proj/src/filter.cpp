#include "dodti/filter.hpp"

#include "dodti/error.hpp"

#include <cmath>

namespace dodti {

std::vector<double> gaussian_kernel_1d(double sigma, int radius) {
  if (sigma <= 0 || radius < 0) throw UsageError("gaussian kernel needs sigma > 0 and radius >= 0");
  std::vector<double> k(std::size_t(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * double(i * i) / (sigma * sigma));
    k[std::size_t(i + radius)] = w;
    sum += w;
  }
  for (auto& w : k) w /= sum;
  return k;
}

namespace {

// One axis pass. `stride` is the linear step along the axis, `extent` its length.
void filter_axis(Dims dims, const std::vector<double>& in, std::vector<double>& out, std::span<const double> kernel,
                 int axis) {
  const int r = int(kernel.size() / 2);
  const int extent = axis == 0 ? dims.nx : axis == 1 ? dims.ny : dims.nz;
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? std::size_t(dims.nx) : std::size_t(dims.nx) * dims.ny;
#pragma omp parallel for schedule(static)
  for (int z = 0; z < dims.nz; ++z)
    for (int y = 0; y < dims.ny; ++y)
      for (int x = 0; x < dims.nx; ++x) {
        const int pos = axis == 0 ? x : axis == 1 ? y : z;
        const std::size_t v = dims.index(x, y, z);
        double acc = 0;
        for (int k = -r; k <= r; ++k) {
          const int q = pos + k;
          if (q < 0 || q >= extent) continue;
          acc += kernel[std::size_t(k + r)] * in[std::size_t(std::ptrdiff_t(v) + std::ptrdiff_t(k) * std::ptrdiff_t(stride))];
        }
        out[v] = acc;
      }
}

}  // namespace

std::vector<double> separable_filter(Dims dims, std::span<const double> field, std::span<const double> kernel) {
  if (field.size() != dims.voxels()) throw DataError("separable_filter: field size does not match dims");
  if (kernel.size() % 2 != 1) throw UsageError("separable_filter: kernel length must be odd");
  std::vector<double> a(field.begin(), field.end()), b(field.size());
  filter_axis(dims, a, b, kernel, 0);
  filter_axis(dims, b, a, kernel, 1);
  filter_axis(dims, a, b, kernel, 2);
  return b;
}

}  // namespace dodti

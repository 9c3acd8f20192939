#pragma once

#include "dodti/types.hpp"

#include <span>
#include <vector>

namespace dodti {

/// Sampled Gaussian exp(-k^2 / 2 sigma^2), k in [-radius, radius], normalised to unit sum.
std::vector<double> gaussian_kernel_1d(double sigma, int radius);

/// Applies the same 1D kernel along x, y and z with zero padding.
/// `kernel` has odd length 2r+1 and is centred.
std::vector<double> separable_filter(Dims dims, std::span<const double> field, std::span<const double> kernel);

}  // namespace dodti

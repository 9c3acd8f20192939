#include "dodti/denoiser.hpp"

#include "dodti/error.hpp"
#include "dodti/filter.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <type_traits>

namespace dodti {

namespace {

constexpr Eigen::Index kChunk = 512;

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;

std::atomic<ConvPrecision> g_precision{ConvPrecision::f64};

// Gathers the 3x3x3 neighbourhoods of voxels [first, first + count) into
// a (27 * channels) x count column block, zero outside the grid.
template <class T>
void im2col(Dims dims, const Eigen::MatrixXd& input, Eigen::Index first, Eigen::Index count,
            Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& col) {
  const Eigen::Index c = input.rows();
  col.resize(27 * c, count);
  const double* in = input.data();
  for (Eigen::Index j = 0; j < count; ++j) {
    const std::size_t v = std::size_t(first + j);
    const int x = int(v % std::size_t(dims.nx));
    const int y = int((v / std::size_t(dims.nx)) % std::size_t(dims.ny));
    const int z = int(v / (std::size_t(dims.nx) * std::size_t(dims.ny)));
    T* dst = col.data() + j * 27 * c;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx, dst += c) {
          const int qx = x + dx, qy = y + dy, qz = z + dz;
          if (qx < 0 || qy < 0 || qz < 0 || qx >= dims.nx || qy >= dims.ny || qz >= dims.nz) {
            std::memset(dst, 0, std::size_t(c) * sizeof(T));
          } else {
            const double* src = in + dims.index(qx, qy, qz) * std::size_t(c);
            if constexpr (std::is_same_v<T, double>)
              std::memcpy(dst, src, std::size_t(c) * sizeof(double));
            else
              for (Eigen::Index i = 0; i < c; ++i) dst[i] = T(src[i]);
          }
        }
  }
}

// Adjoint of im2col: scatters a column block back onto the grid.
template <class T>
void col2im_add(Dims dims, const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& col, Eigen::Index first,
                Eigen::MatrixXd& grad_input) {
  const Eigen::Index c = grad_input.rows();
  double* out = grad_input.data();
  for (Eigen::Index j = 0; j < col.cols(); ++j) {
    const std::size_t v = std::size_t(first + j);
    const int x = int(v % std::size_t(dims.nx));
    const int y = int((v / std::size_t(dims.nx)) % std::size_t(dims.ny));
    const int z = int(v / (std::size_t(dims.nx) * std::size_t(dims.ny)));
    const T* src = col.data() + j * 27 * c;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx, src += c) {
          const int qx = x + dx, qy = y + dy, qz = z + dz;
          if (qx < 0 || qy < 0 || qz < 0 || qx >= dims.nx || qy >= dims.ny || qz >= dims.nz) continue;
          double* dst = out + dims.index(qx, qy, qz) * std::size_t(c);
          for (Eigen::Index i = 0; i < c; ++i) dst[i] += double(src[i]);
        }
  }
}

void check_shape(Dims dims, const Eigen::MatrixXd& input, const ConvLayer& layer) {
  if (input.rows() != layer.in_channels)
    throw DataError("conv3d: input has " + std::to_string(input.rows()) + " channels, layer expects " +
                    std::to_string(layer.in_channels));
  if (std::size_t(input.cols()) != dims.voxels()) throw DataError("conv3d: input voxel count does not match dims");
}

double standard_normal(std::mt19937_64& engine) {
  const double u1 = (double(engine() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = (double(engine() >> 11) + 0.5) * 0x1.0p-53;
  return std::sqrt(-2 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
}

}  // namespace

void set_conv_precision(ConvPrecision p) { g_precision.store(p); }
ConvPrecision conv_precision() { return g_precision.load(); }

Eigen::MatrixXd conv3d(Dims dims, const Eigen::MatrixXd& input, const ConvLayer& layer, Activation act) {
  check_shape(dims, input, layer);
  const Eigen::Index n = input.cols();
  Eigen::MatrixXd out(layer.out_channels, n);
  const Eigen::Index chunks = (n + kChunk - 1) / kChunk;
  const bool f32 = conv_precision() == ConvPrecision::f32;
  const MatrixF kernel_f = f32 ? MatrixF(layer.kernel.cast<float>()) : MatrixF();
#pragma omp parallel
  {
    Eigen::MatrixXd col;
    MatrixF col_f;
#pragma omp for schedule(static)
    for (Eigen::Index ci = 0; ci < chunks; ++ci) {
      const Eigen::Index first = ci * kChunk, count = std::min(kChunk, n - first);
      auto block = out.middleCols(first, count);
      if (f32) {
        im2col(dims, input, first, count, col_f);
        block = (kernel_f * col_f).cast<double>();
      } else {
        im2col(dims, input, first, count, col);
        block.noalias() = layer.kernel * col;
      }
      block.colwise() += layer.bias;
      if (act == Activation::relu) block = block.cwiseMax(0.0);
    }
  }
  return out;
}

Eigen::MatrixXd conv3d_backward(Dims dims, const Eigen::MatrixXd& input, const ConvLayer& layer,
                                const Eigen::MatrixXd& grad_output, ConvLayer& grad_layer) {
  check_shape(dims, input, layer);
  if (grad_output.rows() != layer.out_channels || grad_output.cols() != input.cols())
    throw DataError("conv3d_backward: upstream gradient shape mismatch");
  if (grad_layer.kernel.rows() != layer.kernel.rows() || grad_layer.kernel.cols() != layer.kernel.cols())
    grad_layer = ConvLayer(layer.in_channels, layer.out_channels);
  const Eigen::Index n = input.cols();
  Eigen::MatrixXd grad_input = Eigen::MatrixXd::Zero(input.rows(), n);
  // Sequential over chunks: fixed accumulation order for the weight gradient.
  if (conv_precision() == ConvPrecision::f32) {
    const MatrixF kernel_t = layer.kernel.transpose().cast<float>();
    MatrixF col, dcol, g;
    for (Eigen::Index first = 0; first < n; first += kChunk) {
      const Eigen::Index count = std::min(kChunk, n - first);
      g = grad_output.middleCols(first, count).cast<float>();
      im2col(dims, input, first, count, col);
      grad_layer.kernel += (g * col.transpose()).cast<double>();
      grad_layer.bias += grad_output.middleCols(first, count).rowwise().sum();
      dcol.noalias() = kernel_t * g;
      col2im_add(dims, dcol, first, grad_input);
    }
    return grad_input;
  }
  Eigen::MatrixXd col, dcol;
  for (Eigen::Index first = 0; first < n; first += kChunk) {
    const Eigen::Index count = std::min(kChunk, n - first);
    const auto g = grad_output.middleCols(first, count);
    im2col(dims, input, first, count, col);
    grad_layer.kernel.noalias() += g * col.transpose();
    grad_layer.bias += g.rowwise().sum();
    dcol.noalias() = layer.kernel.transpose() * g;
    col2im_add(dims, dcol, first, grad_input);
  }
  return grad_input;
}

DenoiserWeights DenoiserWeights::zeros(int width) {
  if (width < 1) throw UsageError("denoiser width must be >= 1");
  DenoiserWeights w;
  w.width = width;
  w.layers.emplace_back(kParamChannels, width);
  for (int l = 1; l < kDenoiserLayers - 1; ++l) w.layers.emplace_back(width, width);
  w.layers.emplace_back(width, kParamChannels);
  return w;
}

DenoiserWeights DenoiserWeights::he_init(int width, std::uint64_t seed) {
  DenoiserWeights w = zeros(width);
  std::mt19937_64 engine(seed);
  for (int l = 0; l < kDenoiserLayers - 1; ++l) {
    auto& layer = w.layers[std::size_t(l)];
    const double scale = std::sqrt(2.0 / (27.0 * layer.in_channels));
    for (Eigen::Index j = 0; j < layer.kernel.cols(); ++j)
      for (Eigen::Index i = 0; i < layer.kernel.rows(); ++i) layer.kernel(i, j) = scale * standard_normal(engine);
  }
  return w;
}

std::size_t DenoiserWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += std::size_t(l.kernel.size() + l.bias.size());
  return n;
}

Eigen::VectorXd DenoiserWeights::flatten() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index at = 0;
  for (const auto& l : layers) {
    flat.segment(at, l.kernel.size()) = Eigen::Map<const Eigen::VectorXd>(l.kernel.data(), l.kernel.size());
    at += l.kernel.size();
    flat.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  }
  return flat;
}

void DenoiserWeights::unflatten(const Eigen::VectorXd& flat) {
  if (std::size_t(flat.size()) != parameter_count()) throw DataError("parameter vector has the wrong length");
  Eigen::Index at = 0;
  for (auto& l : layers) {
    Eigen::Map<Eigen::VectorXd>(l.kernel.data(), l.kernel.size()) = flat.segment(at, l.kernel.size());
    at += l.kernel.size();
    l.bias = flat.segment(at, l.bias.size());
    at += l.bias.size();
  }
}

bool DenoiserWeights::all_finite() const {
  for (const auto& l : layers)
    if (!l.kernel.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

Eigen::MatrixXd denoiser_forward(const DenoiserWeights& weights, Dims dims, const Eigen::MatrixXd& z, CnnTape* tape) {
  if (z.rows() != kParamChannels) throw DataError("denoiser input must have 7 channels");
  if (int(weights.layers.size()) != kDenoiserLayers) throw DataError("denoiser must have 7 layers");
  if (tape) {
    tape->inputs.clear();
    tape->inputs.push_back(z);
  }
  Eigen::MatrixXd a = z;
  for (int l = 0; l < kDenoiserLayers - 1; ++l) {
    a = conv3d(dims, a, weights.layers[std::size_t(l)], Activation::relu);
    if (tape) tape->inputs.push_back(a);
  }
  return z + conv3d(dims, a, weights.layers.back(), Activation::none);
}

Eigen::MatrixXd denoiser_backward(const DenoiserWeights& weights, Dims dims, const CnnTape& tape,
                                  const Eigen::MatrixXd& upstream, DenoiserWeights& grad_weights) {
  if (tape.inputs.size() != std::size_t(kDenoiserLayers)) throw DataError("denoiser tape is incomplete");
  if (upstream.rows() != kParamChannels || upstream.cols() != tape.inputs[0].cols())
    throw DataError("denoiser_backward: upstream gradient shape mismatch");
  if (grad_weights.layers.size() != weights.layers.size()) grad_weights = DenoiserWeights::zeros(weights.width);
  Eigen::MatrixXd g = conv3d_backward(dims, tape.inputs[kDenoiserLayers - 1], weights.layers.back(), upstream,
                                      grad_weights.layers.back());
  for (int l = kDenoiserLayers - 2; l >= 0; --l) {
    const auto& post = tape.inputs[std::size_t(l + 1)];
    g = (post.array() > 0.0).select(g, 0.0);
    g = conv3d_backward(dims, tape.inputs[std::size_t(l)], weights.layers[std::size_t(l)], g,
                        grad_weights.layers[std::size_t(l)]);
  }
  return g + upstream;
}

Eigen::MatrixXd gaussian_denoiser(Dims dims, const Eigen::MatrixXd& z, double sigma_voxels) {
  if (sigma_voxels < 0) throw UsageError("gaussian sigma must be >= 0");
  if (sigma_voxels == 0) return z;
  const auto kernel = gaussian_kernel_1d(sigma_voxels, int(std::ceil(3 * sigma_voxels)));
  Eigen::MatrixXd out(z.rows(), z.cols());
  std::vector<double> channel(std::size_t(z.cols()));
  for (Eigen::Index c = 0; c < z.rows(); ++c) {
    for (Eigen::Index v = 0; v < z.cols(); ++v) channel[std::size_t(v)] = z(c, v);
    const auto f = separable_filter(dims, channel, kernel);
    out.row(c) = Eigen::Map<const Eigen::RowVectorXd>(f.data(), Eigen::Index(f.size()));
  }
  return out;
}

Eigen::MatrixXd GaussianDenoiser::apply(Dims dims, const Eigen::MatrixXd& z, const Mask& mask) const {
  if (mask.empty() || sigma_ == 0) return gaussian_denoiser(dims, z, sigma_);
  const auto kernel = gaussian_kernel_1d(sigma_, int(std::ceil(3 * sigma_)));
  std::vector<double> m(mask.size());
  for (std::size_t v = 0; v < mask.size(); ++v) m[v] = mask[v] ? 1.0 : 0.0;
  const auto weight = separable_filter(dims, m, kernel);
  Eigen::MatrixXd out = z;
  std::vector<double> channel(std::size_t(z.cols()));
  for (Eigen::Index c = 0; c < z.rows(); ++c) {
    for (Eigen::Index v = 0; v < z.cols(); ++v) channel[std::size_t(v)] = m[std::size_t(v)] * z(c, v);
    const auto f = separable_filter(dims, channel, kernel);
    for (Eigen::Index v = 0; v < z.cols(); ++v)
      if (mask[std::size_t(v)] && weight[std::size_t(v)] > 0) out(c, v) = f[std::size_t(v)] / weight[std::size_t(v)];
  }
  return out;
}

}  // namespace dodti

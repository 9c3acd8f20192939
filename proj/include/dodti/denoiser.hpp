#pragma once

#include "dodti/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace dodti {

/// A 3x3x3 convolution layer. Kernel columns are ordered (offset, in-channel)
/// with offset = (dz+1)*9 + (dy+1)*3 + (dx+1); rows are output channels.
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  Eigen::MatrixXd kernel;  // out x (27 * in)
  Eigen::VectorXd bias;    // out

  ConvLayer() = default;
  ConvLayer(int in, int out)
      : in_channels(in), out_channels(out), kernel(Eigen::MatrixXd::Zero(out, 27 * in)), bias(Eigen::VectorXd::Zero(out)) {}

  double& weight(int out, int in, int dx, int dy, int dz) {
    return kernel(out, ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) * in_channels + in);
  }
};

inline constexpr int kDenoiserLayers = 7;
inline constexpr int kDefaultDenoiserWidth = 48;

/// Output channel groups of the final layer: {ln S0}, {D11,D22,D33}, {D12,D23,D13}.
struct Pathway {
  int first;
  int count;
};
inline constexpr Pathway kPathways[3] = {{0, 1}, {1, 3}, {4, 3}};

/// Parameters of the residual CNN: layers 1-6 conv+ReLU, layer 7 three
/// linear pathways producing the 7-channel residual.
struct DenoiserWeights {
  int width = kDefaultDenoiserWidth;
  std::vector<ConvLayer> layers;

  /// All-zero weights (the residual network outputs 0).
  static DenoiserWeights zeros(int width = kDefaultDenoiserWidth);
  /// He fan-in initialisation for layers 1-6; the final layer starts at zero.
  static DenoiserWeights he_init(int width, std::uint64_t seed);

  std::size_t parameter_count() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& flat);
  bool all_finite() const;
};

enum class Activation { none, relu };

/// Arithmetic of the convolution matrix products. f32 roughly doubles
/// throughput and is used for training; activations, biases and
/// accumulated weight gradients stay in double either way.
enum class ConvPrecision { f64, f32 };
void set_conv_precision(ConvPrecision p);
ConvPrecision conv_precision();

/// Restores the previous precision on scope exit.
class ScopedConvPrecision {
 public:
  explicit ScopedConvPrecision(ConvPrecision p) : saved_(conv_precision()) { set_conv_precision(p); }
  ~ScopedConvPrecision() { set_conv_precision(saved_); }
  ScopedConvPrecision(const ScopedConvPrecision&) = delete;
  ScopedConvPrecision& operator=(const ScopedConvPrecision&) = delete;

 private:
  ConvPrecision saved_;
};

/// Same-size 3x3x3 convolution with one voxel of zero padding.
/// `input` is in_channels x voxels.
Eigen::MatrixXd conv3d(Dims dims, const Eigen::MatrixXd& input, const ConvLayer& layer, Activation act);

/// Gradients of a conv layer given the upstream gradient of its
/// pre-activation output. Accumulates into `grad_layer`; returns d/d input.
Eigen::MatrixXd conv3d_backward(Dims dims, const Eigen::MatrixXd& input, const ConvLayer& layer,
                                const Eigen::MatrixXd& grad_output, ConvLayer& grad_layer);

/// Activations kept by a forward pass for the backward pass.
struct CnnTape {
  std::vector<Eigen::MatrixXd> inputs;  // input of each layer (layer 0 input = z)
};

/// z + residual(z).
Eigen::MatrixXd denoiser_forward(const DenoiserWeights& weights, Dims dims, const Eigen::MatrixXd& z,
                                 CnnTape* tape = nullptr);

/// Reverse-mode gradients of <upstream, denoiser_forward(z)>. Adds the
/// weight gradient into `grad_weights` (same shape as `weights`) and
/// returns the gradient with respect to z.
Eigen::MatrixXd denoiser_backward(const DenoiserWeights& weights, Dims dims, const CnnTape& tape,
                                  const Eigen::MatrixXd& upstream, DenoiserWeights& grad_weights);

/// Per-channel Gaussian blur truncated at ceil(3 sigma), zero padded.
Eigen::MatrixXd gaussian_denoiser(Dims dims, const Eigen::MatrixXd& z, double sigma_voxels);

/// Regulariser interface used by the unrolled solver.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  /// `mask` may be empty. Implementations need not zero voxels outside it;
  /// the solver does.
  virtual Eigen::MatrixXd apply(Dims dims, const Eigen::MatrixXd& z, const Mask& mask) const = 0;
  virtual std::string name() const = 0;
};

class IdentityDenoiser final : public Denoiser {
 public:
  Eigen::MatrixXd apply(Dims, const Eigen::MatrixXd& z, const Mask&) const override { return z; }
  std::string name() const override { return "identity"; }
};

/// Gaussian smoothing. With a mask it uses normalised convolution so
/// out-of-mask zeros do not pull boundary voxels toward zero.
class GaussianDenoiser final : public Denoiser {
 public:
  explicit GaussianDenoiser(double sigma_voxels) : sigma_(sigma_voxels) {}
  Eigen::MatrixXd apply(Dims dims, const Eigen::MatrixXd& z, const Mask& mask) const override;
  std::string name() const override { return "gaussian"; }
  double sigma() const { return sigma_; }

 private:
  double sigma_;
};

class CnnDenoiser final : public Denoiser {
 public:
  explicit CnnDenoiser(DenoiserWeights weights) : weights_(std::move(weights)) {}
  Eigen::MatrixXd apply(Dims dims, const Eigen::MatrixXd& z, const Mask&) const override {
    return denoiser_forward(weights_, dims, z);
  }
  std::string name() const override { return "cnn"; }
  const DenoiserWeights& weights() const { return weights_; }

 private:
  DenoiserWeights weights_;
};

}  // namespace dodti

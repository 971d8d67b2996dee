#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "posecl/error.hpp"
#include "posecl/pose_geometry.hpp"
#include "posecl/tensor.hpp"

namespace posecl {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kDefaultDropout = 0.1;

enum class Modality { Rgb, Pose };

/// One frame's vector in the joint RGB/pose space.
struct Embedding {
  Vector vector;
  Modality modality = Modality::Rgb;
  std::size_t frame_index = 0;
};

/// Two-layer residual pose MLP followed by feature max-pooling (kernel 2,
/// stride 2) and a bias-free projection to the joint space.
///
/// Each layer is Linear -> LayerNorm -> ReLU -> Dropout, and the output is
/// proj_gamma * maxpool(z2 + z1).
struct EncoderParams {
  std::size_t input_dim = 0;  // 2K
  std::size_t hidden = 0;     // h, even
  std::size_t embed_dim = 0;  // D
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  Vector ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Matrix proj_gamma;  // D x h/2
  double dropout_rate = kDefaultDropout;

  /// All-zero parameters of the given shape (also the gradient accumulator).
  static EncoderParams zeros(std::size_t input_dim, std::size_t hidden, std::size_t embed_dim,
                             double dropout_rate = kDefaultDropout) {
    require(input_dim > 0 && embed_dim > 0, Errc::ShapeMismatch, "encoder dims must be positive");
    require(hidden > 0 && hidden % 2 == 0, Errc::ShapeMismatch,
            "encoder hidden width must be positive and even, got " + std::to_string(hidden));
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, Errc::ConfigError, "dropout rate must be in [0, 1)");
    EncoderParams p;
    p.input_dim = input_dim;
    p.hidden = hidden;
    p.embed_dim = embed_dim;
    p.w1 = Matrix(hidden, input_dim);
    p.b1.assign(hidden, 0.0);
    p.w2 = Matrix(hidden, hidden);
    p.b2.assign(hidden, 0.0);
    p.ln1_gain.assign(hidden, 0.0);
    p.ln1_bias.assign(hidden, 0.0);
    p.ln2_gain.assign(hidden, 0.0);
    p.ln2_bias.assign(hidden, 0.0);
    p.proj_gamma = Matrix(embed_dim, hidden / 2);
    p.dropout_rate = dropout_rate;
    return p;
  }

  /// Linear weights and biases ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)];
  /// layer-norm gains 1, biases 0.
  static EncoderParams initialize(std::size_t input_dim, std::size_t hidden, std::size_t embed_dim,
                                  std::uint64_t seed, double dropout_rate = kDefaultDropout) {
    EncoderParams p = zeros(input_dim, hidden, embed_dim, dropout_rate);
    std::mt19937_64 rng(seed);
    const double bound1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    const double bound3 = 1.0 / std::sqrt(static_cast<double>(hidden / 2));
    fill_uniform(p.w1.data, bound1, rng);
    fill_uniform(p.b1, bound1, rng);
    fill_uniform(p.w2.data, bound2, rng);
    fill_uniform(p.b2, bound2, rng);
    fill_uniform(p.proj_gamma.data, bound3, rng);
    p.ln1_gain.assign(hidden, 1.0);
    p.ln2_gain.assign(hidden, 1.0);
    return p;
  }

  std::vector<TensorRef> tensors() {
    const std::size_t h = hidden;
    return {{"encoder.w1", {h, input_dim}, w1.data},   {"encoder.b1", {h}, b1},
            {"encoder.w2", {h, h}, w2.data},           {"encoder.b2", {h}, b2},
            {"encoder.ln1_gain", {h}, ln1_gain},       {"encoder.ln1_bias", {h}, ln1_bias},
            {"encoder.ln2_gain", {h}, ln2_gain},       {"encoder.ln2_bias", {h}, ln2_bias},
            {"encoder.proj_gamma", {embed_dim, h / 2}, proj_gamma.data}};
  }
  std::vector<ConstTensorRef> tensors() const {
    std::vector<ConstTensorRef> out;
    for (auto& t : const_cast<EncoderParams*>(this)->tensors()) out.push_back({t.name, t.shape, t.values});
    return out;
  }

  bool operator==(const EncoderParams&) const = default;
};

/// Linear map from an RGB feature vector to the joint space.
struct ProjectionParams {
  Matrix w;  // D x F
  Vector b;  // D

  std::size_t input_dim() const { return w.cols; }
  std::size_t embed_dim() const { return w.rows; }

  static ProjectionParams zeros(std::size_t input_dim, std::size_t embed_dim) {
    return {Matrix(embed_dim, input_dim), Vector(embed_dim, 0.0)};
  }

  static ProjectionParams initialize(std::size_t input_dim, std::size_t embed_dim, std::uint64_t seed) {
    ProjectionParams p = zeros(input_dim, embed_dim);
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
    fill_uniform(p.w.data, bound, rng);
    fill_uniform(p.b, bound, rng);
    return p;
  }

  std::vector<TensorRef> tensors() {
    return {{"projection.w", {w.rows, w.cols}, w.data}, {"projection.b", {b.size()}, b}};
  }
  std::vector<ConstTensorRef> tensors() const {
    return {{"projection.w", {w.rows, w.cols}, w.data}, {"projection.b", {b.size()}, b}};
  }

  bool operator==(const ProjectionParams&) const = default;
};

/// Everything the backward pass needs from one forward evaluation.
struct ActivationCache {
  Vector input;
  Vector xhat1, inv_std1, y1, mask1, z1;
  Vector xhat2, inv_std2, y2, mask2, z2;
  std::vector<std::size_t> pool_argmax;
  Vector pooled;
};

struct EncoderForward {
  Embedding embedding;
  ActivationCache cache;
};

struct EncoderGradients {
  EncoderParams params;  // same layout as the parameters
  Vector input;          // d/d(flattened pose)
};

namespace detail {

struct LayerOut {
  Vector xhat;
  Vector inv_std;  // single entry, kept as a vector for uniform storage
  Vector y;
  Vector mask;
  Vector z;
};

inline LayerOut encoder_layer(const Matrix& w, const Vector& b, const Vector& gain, const Vector& bias,
                              std::span<const double> x, double rate, bool dropout_on, std::mt19937_64& rng) {
  LayerOut out;
  Vector a = affine(w, x, b);
  const std::size_t h = a.size();
  double mean = 0.0;
  for (double v : a) mean += v;
  mean /= static_cast<double>(h);
  double var = 0.0;
  for (double v : a) var += (v - mean) * (v - mean);
  var /= static_cast<double>(h);
  const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  out.inv_std = {inv_std};
  out.xhat.resize(h);
  out.y.resize(h);
  out.mask.assign(h, 1.0);
  out.z.resize(h);
  for (std::size_t i = 0; i < h; ++i) out.xhat[i] = (a[i] - mean) * inv_std;
  for (std::size_t i = 0; i < h; ++i) out.y[i] = gain[i] * out.xhat[i] + bias[i];
  if (dropout_on) {
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < h; ++i) out.mask[i] = keep(rng) ? scale : 0.0;
  }
  for (std::size_t i = 0; i < h; ++i) out.z[i] = (out.y[i] > 0.0 ? out.y[i] : 0.0) * out.mask[i];
  return out;
}

// Returns d/d(pre-activation a) of the layer given d/dz.
inline Vector encoder_layer_backward(const Vector& gain, const Vector& xhat, double inv_std, const Vector& y,
                                     const Vector& mask, std::span<const double> dz, Vector& dgain,
                                     Vector& dbias) {
  const std::size_t h = xhat.size();
  Vector dxhat(h);
  double mean_dxhat = 0.0;
  double mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    const double dy = y[i] > 0.0 ? dz[i] * mask[i] : 0.0;
    dgain[i] += dy * xhat[i];
    dbias[i] += dy;
    dxhat[i] = dy * gain[i];
    mean_dxhat += dxhat[i];
    mean_dxhat_xhat += dxhat[i] * xhat[i];
  }
  mean_dxhat /= static_cast<double>(h);
  mean_dxhat_xhat /= static_cast<double>(h);
  Vector da(h);
  for (std::size_t i = 0; i < h; ++i) da[i] = inv_std * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
  return da;
}

inline void check_encoder_shapes(const EncoderParams& p) {
  const std::size_t h = p.hidden;
  const bool ok = h > 0 && h % 2 == 0 && p.w1.rows == h && p.w1.cols == p.input_dim && p.b1.size() == h &&
                  p.w2.rows == h && p.w2.cols == h && p.b2.size() == h && p.ln1_gain.size() == h &&
                  p.ln1_bias.size() == h && p.ln2_gain.size() == h && p.ln2_bias.size() == h &&
                  p.proj_gamma.rows == p.embed_dim && p.proj_gamma.cols == h / 2;
  require(ok, Errc::ShapeMismatch, "inconsistent encoder parameter shapes");
}

}  // namespace detail

/// Forward pass of the pose encoder on a flattened 2K pose vector.
///
/// In train mode dropout draws an inverted-scaled Bernoulli mask from
/// mt19937_64(rng_seed); in eval mode (or at rate 0) dropout is the identity.
inline EncoderForward pose_encoder_forward(const EncoderParams& params, std::span<const double> pose_vector,
                                           bool train_mode, std::uint64_t rng_seed, std::size_t frame_index = 0) {
  detail::check_encoder_shapes(params);
  require(pose_vector.size() == params.input_dim, Errc::ShapeMismatch,
          "pose vector has " + std::to_string(pose_vector.size()) + " entries, encoder expects " +
              std::to_string(params.input_dim));
  const bool dropout_on = train_mode && params.dropout_rate > 0.0;
  std::mt19937_64 rng(rng_seed);

  EncoderForward out;
  ActivationCache& c = out.cache;
  c.input.assign(pose_vector.begin(), pose_vector.end());
  auto l1 = detail::encoder_layer(params.w1, params.b1, params.ln1_gain, params.ln1_bias, c.input,
                                  params.dropout_rate, dropout_on, rng);
  auto l2 = detail::encoder_layer(params.w2, params.b2, params.ln2_gain, params.ln2_bias, l1.z,
                                  params.dropout_rate, dropout_on, rng);

  const std::size_t half = params.hidden / 2;
  c.pool_argmax.resize(half);
  c.pooled.resize(half);
  for (std::size_t i = 0; i < half; ++i) {
    const double left = l2.z[2 * i] + l1.z[2 * i];
    const double right = l2.z[2 * i + 1] + l1.z[2 * i + 1];
    const bool take_right = right > left;
    c.pool_argmax[i] = take_right ? 2 * i + 1 : 2 * i;
    c.pooled[i] = take_right ? right : left;
  }

  out.embedding = {matvec(params.proj_gamma, c.pooled), Modality::Pose, frame_index};
  c.xhat1 = std::move(l1.xhat);
  c.inv_std1 = std::move(l1.inv_std);
  c.y1 = std::move(l1.y);
  c.mask1 = std::move(l1.mask);
  c.z1 = std::move(l1.z);
  c.xhat2 = std::move(l2.xhat);
  c.inv_std2 = std::move(l2.inv_std);
  c.y2 = std::move(l2.y);
  c.mask2 = std::move(l2.mask);
  c.z2 = std::move(l2.z);
  return out;
}

inline EncoderForward pose_encoder_forward(const EncoderParams& params, const NormalizedPose& pose, bool train_mode,
                                           std::uint64_t rng_seed, std::size_t frame_index = 0) {
  const auto v = flatten(pose);
  return pose_encoder_forward(params, v, train_mode, rng_seed, frame_index);
}

/// Accumulates d(grad_out . P)/d(theta) into `grads` and returns d/d(input).
/// The dropout mask is replayed from the cache.
inline Vector pose_encoder_backward_into(const EncoderParams& params, const ActivationCache& cache,
                                         std::span<const double> grad_out, EncoderParams& grads) {
  detail::check_encoder_shapes(params);
  const std::size_t h = params.hidden;
  const std::size_t half = h / 2;
  const bool cache_ok = cache.input.size() == params.input_dim && cache.z1.size() == h && cache.z2.size() == h &&
                        cache.xhat1.size() == h && cache.xhat2.size() == h && cache.mask1.size() == h &&
                        cache.mask2.size() == h && cache.pool_argmax.size() == half &&
                        cache.pooled.size() == half && cache.inv_std1.size() == 1 && cache.inv_std2.size() == 1;
  require(cache_ok, Errc::StaleCache, "activation cache does not match encoder parameters");
  require(grad_out.size() == params.embed_dim, Errc::ShapeMismatch, "encoder grad_out size");
  require(grads.hidden == h && grads.input_dim == params.input_dim && grads.embed_dim == params.embed_dim,
          Errc::ShapeMismatch, "encoder gradient accumulator shape");

  Vector dpooled = linear_backward(params.proj_gamma, cache.pooled, grad_out, grads.proj_gamma);
  Vector dsum(h, 0.0);
  for (std::size_t i = 0; i < half; ++i) dsum[cache.pool_argmax[i]] = dpooled[i];

  Vector da2 = detail::encoder_layer_backward(params.ln2_gain, cache.xhat2, cache.inv_std2[0], cache.y2, cache.mask2,
                                              dsum, grads.ln2_gain, grads.ln2_bias);
  for (std::size_t i = 0; i < h; ++i) grads.b2[i] += da2[i];
  Vector dz1 = linear_backward(params.w2, cache.z1, da2, grads.w2);
  for (std::size_t i = 0; i < h; ++i) dz1[i] += dsum[i];  // residual

  Vector da1 = detail::encoder_layer_backward(params.ln1_gain, cache.xhat1, cache.inv_std1[0], cache.y1, cache.mask1,
                                              dz1, grads.ln1_gain, grads.ln1_bias);
  for (std::size_t i = 0; i < h; ++i) grads.b1[i] += da1[i];
  return linear_backward(params.w1, cache.input, da1, grads.w1);
}

inline EncoderGradients pose_encoder_backward(const EncoderParams& params, const ActivationCache& cache,
                                              std::span<const double> grad_out) {
  EncoderGradients g{EncoderParams::zeros(params.input_dim, params.hidden, params.embed_dim, params.dropout_rate), {}};
  g.input = pose_encoder_backward_into(params, cache, grad_out, g.params);
  return g;
}

inline Embedding rgb_project(const ProjectionParams& params, std::span<const double> feature,
                             std::size_t frame_index = 0) {
  require(feature.size() == params.input_dim(), Errc::ShapeMismatch,
          "feature has " + std::to_string(feature.size()) + " entries, projection expects " +
              std::to_string(params.input_dim()));
  return {affine(params.w, feature, params.b), Modality::Rgb, frame_index};
}

/// Accumulates the projection gradient for upstream grad_out and returns
/// d/d(feature).
inline Vector rgb_project_backward_into(const ProjectionParams& params, std::span<const double> feature,
                                        std::span<const double> grad_out, ProjectionParams& grads) {
  require(feature.size() == params.input_dim() && grad_out.size() == params.embed_dim(), Errc::ShapeMismatch,
          "rgb_project_backward shapes");
  for (std::size_t i = 0; i < grad_out.size(); ++i) grads.b[i] += grad_out[i];
  return linear_backward(params.w, feature, grad_out, grads.w);
}

}  // namespace posecl

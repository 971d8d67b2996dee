#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posecl/embedding_nets.hpp"
#include "posecl/error.hpp"
#include "posecl/pose_geometry.hpp"
#include "posecl/tensor.hpp"

namespace posecl {

enum class MiningStrategy { Vanilla, PoseSupervised };

inline constexpr double kDefaultDelta = 0.15;
inline constexpr double kDefaultTau = 0.07;
inline constexpr double kNormFloor = 1e-12;

struct MiningConfig {
  MiningStrategy strategy = MiningStrategy::PoseSupervised;
  double delta = kDefaultDelta;
  double tau = kDefaultTau;

  void validate() const {
    require(std::isfinite(tau) && tau > 0.0, Errc::ConfigError, "tau must be > 0");
    require(std::isfinite(delta) && delta >= 0.0, Errc::ConfigError, "delta must be >= 0");
  }
};

/// Cross-modal positives and negatives for one anchor frame.
struct PairSets {
  std::size_t anchor = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;

  bool operator==(const PairSets&) const = default;
};

struct LossReport {
  double l_i2p = 0.0;
  double l_p2i = 0.0;
  double l_con = 0.0;
  double l_segment = 0.0;
  double l_final = 0.0;
};

/// Positives are always {t}. Vanilla takes every other frame as a negative;
/// pose-supervised keeps only frames whose pose is at least delta away.
inline PairSets mine_pairs(const MiningConfig& config, std::span<const NormalizedPose> poses, std::size_t t) {
  config.validate();
  require(t < poses.size(), Errc::IndexOutOfRange,
          "anchor " + std::to_string(t) + " outside [0, " + std::to_string(poses.size()) + ")");
  PairSets out{t, {t}, {}};
  for (std::size_t j = 0; j < poses.size(); ++j) {
    if (j == t) continue;
    if (config.strategy == MiningStrategy::Vanilla || pose_distance(poses[t], poses[j]) >= config.delta)
      out.negatives.push_back(j);
  }
  return out;
}

inline std::vector<PairSets> mine_all(const MiningConfig& config, std::span<const NormalizedPose> poses) {
  config.validate();
  const std::size_t n = poses.size();
  std::vector<PairSets> out(n);
  for (std::size_t t = 0; t < n; ++t) out[t] = {t, {t}, {}};
  if (config.strategy == MiningStrategy::Vanilla) {
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < n; ++j)
        if (j != t) out[t].negatives.push_back(j);
    return out;
  }
  // Distance is symmetric, so evaluate each pair once.
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = t + 1; j < n; ++j) dist[t * n + j] = dist[j * n + t] = pose_distance(poses[t], poses[j]);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < n; ++j)
      if (j != t && dist[t * n + j] >= config.delta) out[t].negatives.push_back(j);
  return out;
}

struct ContrastiveResult {
  double l_i2p = 0.0;
  double l_p2i = 0.0;
  double l_con = 0.0;
  std::vector<Vector> grad_rgb;
  std::vector<Vector> grad_pose;
};

namespace detail {

struct UnitVector {
  Vector dir;     // v / max(|v|, floor)
  double norm;    // max(|v|, floor)
  bool floored;   // norm was clamped; the projection term vanishes
};

inline UnitVector to_unit(std::span<const double> v) {
  const double n = norm2(v);
  UnitVector u{Vector(v.begin(), v.end()), std::max(n, kNormFloor), n < kNormFloor};
  for (double& x : u.dir) x /= u.norm;
  return u;
}

}  // namespace detail

/// Symmetric InfoNCE loss l_con = l_i2p + l_p2i with cosine similarity and
/// temperature tau, plus exact gradients for all 2T embeddings.
///
/// For anchor t in one modality, candidates come from the other modality:
/// loss_t = logsumexp_{j in A(t) u N(t)} s_tj/tau - logsumexp_{i in A(t)} s_ti/tau.
/// Anchors with no negatives contribute exactly zero. Both directions use the
/// same pair sets.
inline ContrastiveResult contrastive_loss(std::span<const Embedding> rgb, std::span<const Embedding> pose,
                                          std::span<const PairSets> pairs, const MiningConfig& config) {
  config.validate();
  const std::size_t n = rgb.size();
  require(n > 0, Errc::EmptySequence, "contrastive_loss needs at least one frame");
  require(pose.size() == n && pairs.size() == n, Errc::ShapeMismatch,
          "contrastive_loss: rgb, pose and pair-set counts differ");
  const std::size_t dim = rgb[0].vector.size();
  for (std::size_t t = 0; t < n; ++t) {
    require(rgb[t].vector.size() == dim && pose[t].vector.size() == dim, Errc::ShapeMismatch,
            "contrastive_loss: embedding dimensions differ");
    require(pairs[t].anchor == t, Errc::ShapeMismatch, "pair sets must be ordered by anchor");
    for (auto j : pairs[t].positives) require(j < n, Errc::IndexOutOfRange, "positive index out of range");
    for (auto j : pairs[t].negatives) require(j < n, Errc::IndexOutOfRange, "negative index out of range");
  }

  std::vector<detail::UnitVector> iu, pu;
  iu.reserve(n);
  pu.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    iu.push_back(detail::to_unit(rgb[t].vector));
    pu.push_back(detail::to_unit(pose[t].vector));
  }
  // sim[t][j] = cos(I_t, P_j)
  std::vector<double> sim(n * n);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < n; ++j) sim[t * n + j] = dot(iu[t].dir, pu[j].dir);

  // dsim[t][j] = dL/d sim[t][j], filled by both directions.
  std::vector<double> dsim(n * n, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);

  auto direction = [&](bool rgb_anchor) {
    double total = 0.0;
    std::vector<std::size_t> cand;
    std::vector<double> logits, weights;
    for (std::size_t t = 0; t < n; ++t) {
      const auto& ps = pairs[t];
      if (ps.negatives.empty()) continue;
      cand.assign(ps.positives.begin(), ps.positives.end());
      const std::size_t num_pos = cand.size();
      cand.insert(cand.end(), ps.negatives.begin(), ps.negatives.end());
      logits.resize(cand.size());
      for (std::size_t k = 0; k < cand.size(); ++k) {
        const std::size_t j = cand[k];
        logits[k] = (rgb_anchor ? sim[t * n + j] : sim[j * n + t]) / config.tau;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z_all = 0.0;
      double z_pos = 0.0;
      weights.resize(cand.size());
      for (std::size_t k = 0; k < cand.size(); ++k) {
        weights[k] = std::exp(logits[k] - mx);
        z_all += weights[k];
        if (k < num_pos) z_pos += weights[k];
      }
      total += std::log(z_all) - std::log(z_pos);
      for (std::size_t k = 0; k < cand.size(); ++k) {
        double g = weights[k] / z_all;
        if (k < num_pos) g -= weights[k] / z_pos;
        g *= inv_n / config.tau;
        const std::size_t j = cand[k];
        (rgb_anchor ? dsim[t * n + j] : dsim[j * n + t]) += g;
      }
    }
    return total * inv_n;
  };

  ContrastiveResult out;
  out.l_i2p = direction(true);
  out.l_p2i = direction(false);
  out.l_con = out.l_i2p + out.l_p2i;

  out.grad_rgb.assign(n, Vector(dim, 0.0));
  out.grad_pose.assign(n, Vector(dim, 0.0));
  // d cos(u, v)/du = (v_hat - cos * u_hat) / |u|, without the second term when |u| is floored.
  for (std::size_t t = 0; t < n; ++t) {
    Vector& gi = out.grad_rgb[t];
    double radial = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double g = dsim[t * n + j];
      if (g == 0.0) continue;
      radial += g * sim[t * n + j];
      for (std::size_t d = 0; d < dim; ++d) gi[d] += g * pu[j].dir[d];
    }
    if (iu[t].floored) radial = 0.0;
    for (std::size_t d = 0; d < dim; ++d) gi[d] = (gi[d] - radial * iu[t].dir[d]) / iu[t].norm;
  }
  for (std::size_t j = 0; j < n; ++j) {
    Vector& gp = out.grad_pose[j];
    double radial = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double g = dsim[t * n + j];
      if (g == 0.0) continue;
      radial += g * sim[t * n + j];
      for (std::size_t d = 0; d < dim; ++d) gp[d] += g * iu[t].dir[d];
    }
    if (pu[j].floored) radial = 0.0;
    for (std::size_t d = 0; d < dim; ++d) gp[d] = (gp[d] - radial * pu[j].dir[d]) / pu[j].norm;
  }
  return out;
}

/// splitmix64 finalizer; derives independent per-frame dropout seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct EmbedContrastResult {
  double l_i2p = 0.0;
  double l_p2i = 0.0;
  double l_con = 0.0;
  EncoderParams encoder_grad;
  ProjectionParams projection_grad;
  std::size_t participating_frames = 0;
};

/// Embeds both modalities of one video, mines pairs from the normalized
/// poses and backpropagates the contrastive loss into both networks.
///
/// Frames whose pose is absent do not take part, neither as anchors nor as
/// candidates. With fewer than one participating frame the loss is zero.
inline EmbedContrastResult embed_and_contrast(const EncoderParams& encoder, const ProjectionParams& projection,
                                              std::span<const std::optional<NormalizedPose>> poses,
                                              const Matrix& features, const MiningConfig& config,
                                              std::uint64_t train_seed, bool train_mode = true) {
  config.validate();
  require(poses.size() == features.rows, Errc::ShapeMismatch,
          "embed_and_contrast: " + std::to_string(poses.size()) + " poses vs " + std::to_string(features.rows) +
              " feature rows");
  EmbedContrastResult out{0.0, 0.0, 0.0,
                          EncoderParams::zeros(encoder.input_dim, encoder.hidden, encoder.embed_dim,
                                               encoder.dropout_rate),
                          ProjectionParams::zeros(projection.input_dim(), projection.embed_dim()), 0};

  std::vector<std::size_t> frames;
  std::vector<NormalizedPose> valid;
  for (std::size_t t = 0; t < poses.size(); ++t)
    if (poses[t]) {
      frames.push_back(t);
      valid.push_back(*poses[t]);
    }
  out.participating_frames = frames.size();
  if (frames.empty()) return out;

  std::vector<Embedding> rgb, pose;
  std::vector<ActivationCache> caches;
  rgb.reserve(frames.size());
  pose.reserve(frames.size());
  caches.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::size_t t = frames[i];
    rgb.push_back(rgb_project(projection, features.row(t), t));
    auto fwd = pose_encoder_forward(encoder, valid[i], train_mode, mix_seed(train_seed, t), t);
    pose.push_back(std::move(fwd.embedding));
    caches.push_back(std::move(fwd.cache));
  }
  const auto pairs = mine_all(config, valid);
  const auto loss = contrastive_loss(rgb, pose, pairs, config);
  out.l_i2p = loss.l_i2p;
  out.l_p2i = loss.l_p2i;
  out.l_con = loss.l_con;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    rgb_project_backward_into(projection, features.row(frames[i]), loss.grad_rgb[i], out.projection_grad);
    pose_encoder_backward_into(encoder, caches[i], loss.grad_pose[i], out.encoder_grad);
  }
  return out;
}

}  // namespace posecl

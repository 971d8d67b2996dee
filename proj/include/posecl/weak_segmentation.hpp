#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "posecl/contrastive.hpp"
#include "posecl/embedding_nets.hpp"
#include "posecl/error.hpp"
#include "posecl/pose_geometry.hpp"
#include "posecl/tensor.hpp"

namespace posecl {

/// Ordered action ids known to occur in a video, without timing.
struct Transcript {
  std::vector<int> actions;

  std::size_t size() const { return actions.size(); }
  bool operator==(const Transcript&) const = default;
};

struct Segment {
  int action = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

struct Segmentation {
  std::vector<Segment> segments;

  std::size_t num_frames() const {
    std::size_t total = 0;
    for (const auto& s : segments) total += s.length;
    return total;
  }

  std::vector<int> frame_labels() const {
    std::vector<int> out;
    out.reserve(num_frames());
    for (const auto& s : segments) out.insert(out.end(), s.length, s.action);
    return out;
  }

  /// Run-length decomposition of a per-frame label stream.
  static Segmentation from_labels(std::span<const int> labels) {
    Segmentation out;
    for (int label : labels) {
      if (!out.segments.empty() && out.segments.back().action == label)
        ++out.segments.back().length;
      else
        out.segments.push_back({label, 1});
    }
    return out;
  }

  bool operator==(const Segmentation&) const = default;
};

/// Linear frame classifier producing per-class scores.
struct ClassifierHead {
  Matrix w;  // C x D
  Vector b;  // C

  std::size_t num_classes() const { return w.rows; }

  static ClassifierHead zeros(std::size_t input_dim, std::size_t classes) {
    return {Matrix(classes, input_dim), Vector(classes, 0.0)};
  }
  static ClassifierHead initialize(std::size_t input_dim, std::size_t classes, std::uint64_t seed) {
    ClassifierHead h = zeros(input_dim, classes);
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
    fill_uniform(h.w.data, bound, rng);
    fill_uniform(h.b, bound, rng);
    return h;
  }

  std::vector<TensorRef> tensors() { return {{"head.w", {w.rows, w.cols}, w.data}, {"head.b", {b.size()}, b}}; }
  std::vector<ConstTensorRef> tensors() const {
    return {{"head.w", {w.rows, w.cols}, w.data}, {"head.b", {b.size()}, b}};
  }

  bool operator==(const ClassifierHead&) const = default;
};

namespace detail {

inline void log_softmax_inplace(std::span<double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (double& v : row) v -= lse;
}

}  // namespace detail

inline Matrix frame_logits(const ClassifierHead& head, const Matrix& inputs) {
  require(inputs.cols == head.w.cols && head.b.size() == head.w.rows, Errc::ShapeMismatch,
          "classifier expects inputs of width " + std::to_string(head.w.cols) + ", got " +
              std::to_string(inputs.cols));
  Matrix out(inputs.rows, head.num_classes());
  for (std::size_t t = 0; t < inputs.rows; ++t) {
    const Vector logits = affine(head.w, inputs.row(t), head.b);
    std::copy(logits.begin(), logits.end(), out.row(t).begin());
  }
  return out;
}

/// T x C log-probabilities: linear layer then a per-frame log-softmax.
inline Matrix frame_log_probs(const ClassifierHead& head, const Matrix& embeddings) {
  require(head.num_classes() > 0, Errc::ShapeMismatch, "classifier has no classes");
  Matrix out = frame_logits(head, embeddings);
  for (std::size_t t = 0; t < out.rows; ++t) detail::log_softmax_inplace(out.row(t));
  return out;
}

struct Alignment {
  Segmentation segmentation;
  double score = 0.0;
};

/// Best monotonic assignment of frames to the transcript entries in order,
/// every entry getting at least one contiguous frame. O(T n) time and memory.
///
/// Among equal-score alignments the later boundary wins: backtracking from
/// the last frame takes a segment start whenever it ties with staying.
inline Alignment align_offline(const Matrix& log_probs, const Transcript& transcript) {
  const std::size_t frames = log_probs.rows;
  const std::size_t n = transcript.size();
  require(n >= 1, Errc::InfeasibleTranscript, "empty transcript");
  require(n <= frames, Errc::InfeasibleTranscript,
          "transcript of " + std::to_string(n) + " actions cannot fit " + std::to_string(frames) + " frames");
  for (int a : transcript.actions)
    require(a >= 0 && static_cast<std::size_t>(a) < log_probs.cols, Errc::ShapeMismatch,
            "transcript action " + std::to_string(a) + " has no score column");

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> score(frames * n, kNegInf);
  std::vector<unsigned char> starts(frames * n, 0);  // 1: segment j begins at frame t
  auto lp = [&](std::size_t t, std::size_t j) { return log_probs(t, static_cast<std::size_t>(transcript.actions[j])); };

  score[0] = lp(0, 0);
  starts[0] = 1;
  for (std::size_t t = 1; t < frames; ++t) {
    const std::size_t jmax = std::min(t, n - 1);
    for (std::size_t j = 0; j <= jmax; ++j) {
      const double stay = score[(t - 1) * n + j];
      const double enter = j > 0 ? score[(t - 1) * n + j - 1] : kNegInf;
      const bool take_enter = j > 0 && enter >= stay;
      score[t * n + j] = lp(t, j) + (take_enter ? enter : stay);
      starts[t * n + j] = take_enter ? 1 : 0;
    }
  }

  Alignment out;
  out.score = score[(frames - 1) * n + n - 1];
  std::vector<std::size_t> lengths(n, 0);
  std::size_t j = n - 1;
  for (std::size_t t = frames; t-- > 0;) {
    ++lengths[j];
    if (starts[t * n + j] && j > 0) --j;
  }
  for (std::size_t k = 0; k < n; ++k) out.segmentation.segments.push_back({transcript.actions[k], lengths[k]});
  return out;
}

/// Causal decoder: each pushed frame is labeled from the best alignment of
/// the frames seen so far to any non-empty prefix of the transcript, and
/// that label is never revised. Equal scores favor the earlier transcript
/// position.
class OnlineDecoder {
 public:
  explicit OnlineDecoder(Transcript transcript) : transcript_(std::move(transcript)) {
    require(!transcript_.actions.empty(), Errc::InfeasibleTranscript, "empty transcript");
    for (int a : transcript_.actions) require(a >= 0, Errc::ShapeMismatch, "negative action id");
  }

  int push(std::span<const double> log_probs_row) {
    for (int a : transcript_.actions)
      require(static_cast<std::size_t>(a) < log_probs_row.size(), Errc::ShapeMismatch,
              "transcript action has no score column");
    const std::size_t n = transcript_.size();
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    auto lp = [&](std::size_t j) { return log_probs_row[static_cast<std::size_t>(transcript_.actions[j])]; };
    std::vector<double> next(n, kNegInf);
    if (best_.empty()) {
      next[0] = lp(0);
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        const double prev = j > 0 ? std::max(best_[j], best_[j - 1]) : best_[j];
        if (prev != kNegInf) next[j] = lp(j) + prev;
      }
    }
    best_ = std::move(next);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (best_[j] > best_[arg]) arg = j;
    committed_.push_back(transcript_.actions[arg]);
    return committed_.back();
  }

  const std::vector<int>& committed() const { return committed_; }
  const Transcript& transcript() const { return transcript_; }

 private:
  Transcript transcript_;
  std::vector<double> best_;
  std::vector<int> committed_;
};

inline std::vector<int> decode_online(const Matrix& log_probs, const Transcript& transcript) {
  OnlineDecoder decoder(transcript);
  for (std::size_t t = 0; t < log_probs.rows; ++t) decoder.push(log_probs.row(t));
  return decoder.committed();
}

struct SegmentLoss {
  double loss = 0.0;
  Matrix grad;  // d loss / d log_probs
};

/// Mean negative log-probability of the pseudo label at each frame.
inline SegmentLoss segmentation_loss(const Matrix& log_probs, const Segmentation& alignment) {
  const auto labels = alignment.frame_labels();
  require(labels.size() == log_probs.rows, Errc::ShapeMismatch,
          "alignment covers " + std::to_string(labels.size()) + " frames, log-probs have " +
              std::to_string(log_probs.rows));
  require(log_probs.rows > 0, Errc::ShapeMismatch, "segmentation_loss on empty video");
  SegmentLoss out{0.0, Matrix(log_probs.rows, log_probs.cols)};
  const double inv_t = 1.0 / static_cast<double>(log_probs.rows);
  for (std::size_t t = 0; t < log_probs.rows; ++t) {
    const auto c = static_cast<std::size_t>(labels[t]);
    require(labels[t] >= 0 && c < log_probs.cols, Errc::ShapeMismatch, "pseudo label out of range");
    out.loss -= log_probs(t, c);
    out.grad(t, c) = -inv_t;
  }
  out.loss *= inv_t;
  return out;
}

// ---------------------------------------------------------------------------
// Joint model and training

/// What the classifier head reads. SharedProjection routes it from the same
/// projected embedding used by the contrastive branch; RawFeatures puts it
/// directly on the RGB features, leaving the projection contrastive-only.
enum class HeadInput { SharedProjection, RawFeatures };

struct Model {
  EncoderParams encoder;
  ProjectionParams projection;
  ClassifierHead head;
  HeadInput head_input = HeadInput::SharedProjection;

  std::vector<TensorRef> tensors() {
    auto out = encoder.tensors();
    for (auto& t : projection.tensors()) out.push_back(t);
    for (auto& t : head.tensors()) out.push_back(t);
    return out;
  }
  std::vector<ConstTensorRef> tensors() const {
    auto out = encoder.tensors();
    for (auto& t : projection.tensors()) out.push_back(t);
    for (auto& t : head.tensors()) out.push_back(t);
    return out;
  }

  /// Zero-valued model of the same shape.
  Model zeros_like() const {
    return {EncoderParams::zeros(encoder.input_dim, encoder.hidden, encoder.embed_dim, encoder.dropout_rate),
            ProjectionParams::zeros(projection.input_dim(), projection.embed_dim()),
            ClassifierHead::zeros(head.w.cols, head.num_classes()), head_input};
  }

  bool operator==(const Model&) const = default;
};

/// One video as the trainer sees it. Poses are already normalized; frames
/// without a usable pose are nullopt.
struct VideoSample {
  std::string video_id;
  Matrix features;  // T x F
  std::vector<std::optional<NormalizedPose>> poses;
  Transcript transcript;
  std::optional<std::vector<int>> ground_truth;

  std::size_t num_frames() const { return features.rows; }
};

/// Inputs to the head for every frame of a video.
inline Matrix head_inputs(const Model& model, const Matrix& features) {
  if (model.head_input == HeadInput::RawFeatures) return features;
  Matrix out(features.rows, model.projection.embed_dim());
  for (std::size_t t = 0; t < features.rows; ++t) {
    const auto e = rgb_project(model.projection, features.row(t), t);
    std::copy(e.vector.begin(), e.vector.end(), out.row(t).begin());
  }
  return out;
}

inline Matrix model_log_probs(const Model& model, const Matrix& features) {
  return frame_log_probs(model.head, head_inputs(model, features));
}

struct JointConfig {
  std::optional<MiningConfig> mining;  // nullopt: no contrastive term
  double con_weight = 1.0;
};

struct JointResult {
  LossReport report;
  Model grad;
};

/// Joint objective l_final = con_weight * l_con + l_segment for one video
/// against fixed pseudo labels, with gradients for every parameter.
inline JointResult joint_loss(const Model& model, const VideoSample& video, const Segmentation& pseudo,
                              const JointConfig& config, std::uint64_t dropout_seed, bool train_mode = true) {
  JointResult out{{}, model.zeros_like()};
  const Matrix inputs = head_inputs(model, video.features);
  const Matrix logits = frame_logits(model.head, inputs);
  Matrix log_probs = logits;
  for (std::size_t t = 0; t < log_probs.rows; ++t) detail::log_softmax_inplace(log_probs.row(t));
  const SegmentLoss seg = segmentation_loss(log_probs, pseudo);
  out.report.l_segment = seg.loss;

  for (std::size_t t = 0; t < log_probs.rows; ++t) {
    // d/dlogits of log-softmax: g - softmax * sum(g)
    double gsum = 0.0;
    for (std::size_t c = 0; c < log_probs.cols; ++c) gsum += seg.grad(t, c);
    Vector dlogits(log_probs.cols);
    for (std::size_t c = 0; c < log_probs.cols; ++c)
      dlogits[c] = seg.grad(t, c) - std::exp(log_probs(t, c)) * gsum;
    for (std::size_t c = 0; c < dlogits.size(); ++c) out.grad.head.b[c] += dlogits[c];
    const Vector dinput = linear_backward(model.head.w, inputs.row(t), dlogits, out.grad.head.w);
    if (model.head_input == HeadInput::SharedProjection)
      rgb_project_backward_into(model.projection, video.features.row(t), dinput, out.grad.projection);
  }

  if (config.mining) {
    auto con = embed_and_contrast(model.encoder, model.projection, video.poses, video.features, *config.mining,
                                  dropout_seed, train_mode);
    out.report.l_i2p = config.con_weight * con.l_i2p;
    out.report.l_p2i = config.con_weight * con.l_p2i;
    out.report.l_con = out.report.l_i2p + out.report.l_p2i;
    const auto enc = con.encoder_grad.tensors();
    auto enc_out = out.grad.encoder.tensors();
    for (std::size_t k = 0; k < enc.size(); ++k)
      for (std::size_t i = 0; i < enc[k].values.size(); ++i) enc_out[k].values[i] += config.con_weight * enc[k].values[i];
    const auto proj = con.projection_grad.tensors();
    auto proj_out = out.grad.projection.tensors();
    for (std::size_t k = 0; k < proj.size(); ++k)
      for (std::size_t i = 0; i < proj[k].values.size(); ++i)
        proj_out[k].values[i] += config.con_weight * proj[k].values[i];
  }
  out.report.l_final = out.report.l_con + out.report.l_segment;
  return out;
}

inline constexpr double kDefaultLearningRate = 0.01;

struct TrainConfig {
  std::optional<MiningConfig> mining;
  double con_weight = 1.0;
  double learning_rate = kDefaultLearningRate;
  std::size_t iterations = 2000;
  std::uint64_t seed = 0;
  std::size_t hidden = 128;
  std::size_t embed_dim = 32;
  double dropout_rate = kDefaultDropout;
  HeadInput head_input = HeadInput::SharedProjection;

  void validate() const {
    if (mining) mining->validate();
    require(std::isfinite(learning_rate) && learning_rate >= 0.0, Errc::ConfigError, "learning rate must be >= 0");
    require(std::isfinite(con_weight) && con_weight >= 0.0, Errc::ConfigError, "contrastive weight must be >= 0");
    require(hidden > 0 && hidden % 2 == 0, Errc::ConfigError, "hidden width must be positive and even");
    require(embed_dim > 0, Errc::ConfigError, "embedding dimension must be positive");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, Errc::ConfigError, "dropout must be in [0, 1)");
  }
};

inline Model init_model(const TrainConfig& config, std::size_t keypoints, std::size_t feature_dim,
                        std::size_t classes) {
  config.validate();
  require(keypoints >= 2 && feature_dim > 0 && classes > 0, Errc::ConfigError, "dataset dimensions must be positive");
  Model m;
  m.encoder = EncoderParams::initialize(2 * keypoints, config.hidden, config.embed_dim, mix_seed(config.seed, 1),
                                        config.dropout_rate);
  m.projection = ProjectionParams::initialize(feature_dim, config.embed_dim, mix_seed(config.seed, 2));
  const std::size_t head_in = config.head_input == HeadInput::SharedProjection ? config.embed_dim : feature_dim;
  m.head = ClassifierHead::initialize(head_in, classes, mix_seed(config.seed, 3));
  m.head_input = config.head_input;
  return m;
}

struct IterationLog {
  std::size_t iteration = 0;  // 1-based
  std::string video_id;
  LossReport report;
};

struct TrainResult {
  Model model;
  std::vector<IterationLog> log;
};

inline void sgd_step(Model& model, const Model& grad, double lr) {
  auto params = model.tensors();
  const auto grads = grad.tensors();
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k].values.size(); ++i) params[k].values[i] -= lr * grads[k].values[i];
}

/// Iterative pseudo-label training. Every iteration draws the next video of
/// a seeded per-epoch shuffle, realigns it under the current parameters,
/// and takes one plain SGD step on l_final.
inline TrainResult train(std::span<const VideoSample> videos, const TrainConfig& config, std::size_t keypoints,
                         std::size_t classes, const std::function<void(const IterationLog&)>& on_iteration = {}) {
  config.validate();
  require(!videos.empty(), Errc::ConfigError, "no training videos");
  const std::size_t feature_dim = videos[0].features.cols;
  for (const auto& v : videos) {
    require(v.features.cols == feature_dim, Errc::ConfigError, "video " + v.video_id + " has inconsistent F");
    require(v.poses.size() == v.features.rows, Errc::ConfigError, "video " + v.video_id + " pose count != T");
    for (const auto& p : v.poses)
      require(!p || p->size() == keypoints, Errc::ConfigError, "video " + v.video_id + " has inconsistent K");
    for (int a : v.transcript.actions)
      require(a >= 0 && static_cast<std::size_t>(a) < classes, Errc::ConfigError,
              "video " + v.video_id + " transcript has an unknown class");
    require(v.transcript.size() <= v.features.rows && !v.transcript.actions.empty(), Errc::ConfigError,
            "video " + v.video_id + " transcript does not fit its frames");
  }

  TrainResult out{init_model(config, keypoints, feature_dim, classes), {}};
  const JointConfig joint{config.mining, config.con_weight};
  std::mt19937_64 order_rng(mix_seed(config.seed, 4));
  std::vector<std::size_t> order(videos.size());
  std::size_t cursor = order.size();

  for (std::size_t it = 1; it <= config.iterations; ++it) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    const VideoSample& video = videos[order[cursor++]];
    const Alignment pseudo = align_offline(model_log_probs(out.model, video.features), video.transcript);
    JointResult step = joint_loss(out.model, video, pseudo.segmentation, joint, mix_seed(config.seed, 1000 + it));
    if (!std::isfinite(step.report.l_final))
      fail(Errc::Divergence, "non-finite loss at iteration " + std::to_string(it));
    sgd_step(out.model, step.grad, config.learning_rate);
    IterationLog entry{it, video.video_id, step.report};
    if (on_iteration) on_iteration(entry);
    out.log.push_back(std::move(entry));
  }
  return out;
}

enum class DecodeMode { Offline, Online };

/// Anything carrying RGB features and a transcript can be segmented.
template <class V>
concept SegmentableVideo = requires(const V& v) {
  { v.features } -> std::convertible_to<const Matrix&>;
  { v.transcript } -> std::convertible_to<const Transcript&>;
};

/// RGB-only inference: features -> projection -> head -> decoder. Nothing
/// besides `features` and `transcript` is read from the video.
template <SegmentableVideo V>
Segmentation infer(const Model& model, const V& video, DecodeMode mode) {
  const Matrix& features = video.features;
  const Transcript& transcript = video.transcript;
  const Matrix lp = model_log_probs(model, features);
  if (mode == DecodeMode::Offline) return align_offline(lp, transcript).segmentation;
  require(transcript.size() <= lp.rows, Errc::InfeasibleTranscript, "transcript longer than video");
  const auto labels = decode_online(lp, transcript);
  return Segmentation::from_labels(labels);
}

}  // namespace posecl

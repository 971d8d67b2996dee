#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "posecl/dataio_synth.hpp"
#include "posecl/weak_segmentation.hpp"
#include "test_support.hpp"

namespace posecl {
namespace {

using testing::SplitMix;

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(values.size(), values.begin()->size());
  std::size_t r = 0;
  for (const auto& row : values) {
    std::size_t c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

struct BruteForce {
  double score;
  std::vector<std::size_t> lengths;
};

/// Exhaustive search over all ways to cut T frames into n non-empty runs.
/// Ties prefer the larger last boundary, then the larger one before it, etc.
BruteForce brute_force_align(const Matrix& lp, const Transcript& tr) {
  const std::size_t frames = lp.rows, n = tr.size();
  BruteForce best{-INFINITY, {}};
  std::vector<std::size_t> starts(n);  // starts[0] = 0
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t j, std::size_t from) {
    if (j == n) {
      double s = 0;
      std::size_t seg = 0;
      for (std::size_t t = 0; t < frames; ++t) {
        while (seg + 1 < n && starts[seg + 1] == t) ++seg;
        s += lp(t, static_cast<std::size_t>(tr.actions[seg]));
      }
      std::vector<std::size_t> lengths(n);
      for (std::size_t k = 0; k < n; ++k) lengths[k] = (k + 1 < n ? starts[k + 1] : frames) - starts[k];
      bool better = s > best.score;
      if (s == best.score) {
        for (std::size_t k = n; k-- > 1;) {
          const std::size_t mine = starts[k];
          std::size_t theirs = 0;
          for (std::size_t q = 0; q < k; ++q) theirs += best.lengths[q];
          if (mine != theirs) {
            better = mine > theirs;
            break;
          }
        }
      }
      if (better) best = {s, lengths};
      return;
    }
    for (std::size_t b = from; b + (n - j) <= frames; ++b) {
      starts[j] = b;
      rec(j + 1, b + 1);
    }
  };
  starts[0] = 0;
  if (n == 1) {
    rec(1, 1);
  } else {
    rec(1, 1);
  }
  return best;
}

TEST(FrameLogProbs, ZeroHeadIsUniform) {
  const auto lp = frame_log_probs(ClassifierHead::zeros(4, 5), Matrix(3, 4, 0.7));
  for (double v : lp.data) EXPECT_NEAR(v, std::log(1.0 / 5.0), 1e-15);
}

TEST(FrameLogProbs, RowsNormalizeAndShiftInvariance) {
  auto head = ClassifierHead::zeros(4, 3);
  SplitMix rng(1);
  testing::fill_splitmix(head, rng);
  Matrix emb(5, 4);
  rng.fill(emb.data);
  const auto lp = frame_log_probs(head, emb);
  for (std::size_t t = 0; t < lp.rows; ++t) {
    double z = 0;
    for (double v : lp.row(t)) z += std::exp(v);
    EXPECT_NEAR(std::log(z), 0.0, 1e-9);
  }
  auto shifted = head;
  for (double& b : shifted.b) b += 123.0;
  const auto lp2 = frame_log_probs(shifted, emb);
  for (std::size_t i = 0; i < lp.data.size(); ++i) EXPECT_NEAR(lp.data[i], lp2.data[i], 1e-12);
}

TEST(FrameLogProbs, GoldenFixture) {
  // tests/fixtures/gen_fixtures.py
  auto head = ClassifierHead::zeros(4, 3);
  SplitMix rng(3);
  testing::fill_splitmix(head, rng);
  Matrix emb(2, 4);
  rng.fill(emb.data);
  const auto lp = frame_log_probs(head, emb);
  const std::vector<double> expected{-0.9079887008358577, -1.3334722145928004, -1.0992980257545368,
                                     -1.7443452612345747, -2.357428475881647,  -0.31392025295856363};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(lp.data[i], expected[i], 1e-13);
  EXPECT_THROW(frame_log_probs(head, Matrix(2, 5)), Error);
}

TEST(AlignOffline, SingleActionCoversEverything) {
  const auto lp = rows({{-1, -2}, {-3, -0.5}, {-0.1, -4}});
  const auto a = align_offline(lp, {{1}});
  EXPECT_EQ(a.segmentation.segments, (std::vector<Segment>{{1, 3}}));
  EXPECT_DOUBLE_EQ(a.score, -6.5);
}

TEST(AlignOffline, WorkedTwoActionExample) {
  const auto lp = rows({{-0.1, -2}, {-0.2, -1.5}, {-2, -0.1}, {-2.5, -0.2}});
  const auto a = align_offline(lp, {{0, 1}});
  EXPECT_EQ(a.segmentation.segments, (std::vector<Segment>{{0, 2}, {1, 2}}));
  EXPECT_NEAR(a.score, -0.6, 1e-12);
}

TEST(AlignOffline, InfeasibleTranscript) {
  try {
    align_offline(Matrix(2, 3), {{0, 1, 2}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InfeasibleTranscript);
  }
}

TEST(AlignOffline, UniformScoresFavorLaterBoundaries) {
  const auto lp = frame_log_probs(ClassifierHead::zeros(2, 3), Matrix(7, 2));
  const auto a = align_offline(lp, {{2, 0, 1}});
  EXPECT_EQ(a.segmentation.segments, (std::vector<Segment>{{2, 5}, {0, 1}, {1, 1}}));
}

TEST(AlignOffline, MatchesBruteForceWithTies) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t frames = 1 + rng() % 10, classes = 2 + rng() % 3;
    const std::size_t n = 1 + rng() % std::min<std::size_t>(4, frames);
    Matrix lp(frames, classes);
    // Small integers make exact ties common and sums exact.
    for (double& v : lp.data) v = -static_cast<double>(rng() % 3);
    Transcript tr;
    for (std::size_t j = 0; j < n; ++j) tr.actions.push_back(static_cast<int>(rng() % classes));
    const auto dp = align_offline(lp, tr);
    const auto bf = brute_force_align(lp, tr);
    EXPECT_EQ(dp.score, bf.score);
    std::vector<std::size_t> lengths;
    for (const auto& s : dp.segmentation.segments) lengths.push_back(s.length);
    EXPECT_EQ(lengths, bf.lengths) << "trial " << trial;
    // Score additivity.
    const auto labels = dp.segmentation.frame_labels();
    double sum = 0;
    for (std::size_t t = 0; t < frames; ++t) sum += lp(t, static_cast<std::size_t>(labels[t]));
    EXPECT_NEAR(sum, dp.score, 1e-9);
  }
}

TEST(OnlineDecoder, SingleActionAndWorkedExample) {
  EXPECT_EQ(decode_online(Matrix(4, 3), {{2}}), (std::vector<int>{2, 2, 2, 2}));
  const auto lp = rows({{-0.1, -2}, {-0.2, -1.5}, {-2, -0.1}, {-2.5, -0.2}});
  EXPECT_EQ(decode_online(lp, {{0, 1}}), (std::vector<int>{0, 0, 1, 1}));
}

TEST(OnlineDecoder, CommitmentsArePrefixStable) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t frames = 5 + rng() % 20;
    Matrix lp(frames, 4);
    for (double& v : lp.data) v = g(rng);
    const Transcript tr{{0, 2, 1, 3}};
    OnlineDecoder stream(tr);
    for (std::size_t t = 0; t < frames; ++t) {
      stream.push(lp.row(t));
      Matrix prefix(t + 1, 4);
      std::copy(lp.data.begin(), lp.data.begin() + static_cast<long>((t + 1) * 4), prefix.data.begin());
      EXPECT_EQ(decode_online(prefix, tr), stream.committed());
    }
  }
}

TEST(SegmentationLoss, Examples) {
  const Segmentation seg{{{0, 1}, {1, 1}}};
  const auto r = segmentation_loss(rows({{std::log(0.9), std::log(0.1)}, {std::log(0.2), std::log(0.8)}}), seg);
  EXPECT_NEAR(r.loss, 0.164252033486018, 1e-12);
  EXPECT_NEAR(r.loss, -(std::log(0.9) + std::log(0.8)) / 2, 1e-15);
  EXPECT_EQ(r.grad(0, 0), -0.5);
  EXPECT_EQ(r.grad(0, 1), 0.0);

  EXPECT_EQ(segmentation_loss(rows({{0, -50}, {-50, 0}}), seg).loss, 0.0);
  const auto uniform = frame_log_probs(ClassifierHead::zeros(1, 3), Matrix(4, 1));
  EXPECT_NEAR(segmentation_loss(uniform, Segmentation{{{2, 4}}}).loss, std::log(3.0), 1e-12);
  EXPECT_THROW(segmentation_loss(uniform, Segmentation{{{2, 3}}}), Error);
}

VideoSample random_video(std::uint64_t seed, std::size_t frames, std::size_t features, std::size_t keypoints) {
  SplitMix rng(seed);
  std::mt19937_64 prng(seed);
  VideoSample v;
  v.video_id = "v" + std::to_string(seed);
  v.features = Matrix(frames, features);
  rng.fill(v.features.data);
  std::uniform_real_distribution<double> coord(0, 100);
  for (std::size_t t = 0; t < frames; ++t) {
    RawPose p;
    for (std::size_t k = 0; k < keypoints; ++k) p.keypoints.push_back({coord(prng), coord(prng)});
    v.poses.emplace_back(normalize_pose(p).pose);
  }
  v.transcript = {{0, 2, 1}};
  return v;
}

TEST(JointLoss, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.embed_dim = 4;
    cfg.dropout_rate = 0.0;
    cfg.seed = seed;
    Model model = init_model(cfg, 2, 5, 3);
    const VideoSample video = random_video(seed, 6, 5, 2);
    const auto pseudo = align_offline(model_log_probs(model, video.features), video.transcript).segmentation;
    const JointConfig joint{MiningConfig{MiningStrategy::PoseSupervised, 0.3, 0.5}, 1.0};
    const auto r = joint_loss(model, video, pseudo, joint, 0);
    EXPECT_NEAR(r.report.l_final, r.report.l_con + r.report.l_segment, 1e-12);
    auto loss = [&] { return joint_loss(model, video, pseudo, joint, 0).report.l_final; };
    auto params = model.tensors();
    const auto grads = r.grad.tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto numeric = testing::central_differences(params[k].values, loss);
      for (std::size_t i = 0; i < numeric.size(); ++i)
        EXPECT_LT(testing::relative_error(grads[k].values[i], numeric[i]), 1e-4) << params[k].name << "[" << i << "]";
    }
  }
}

std::vector<VideoSample> small_dataset(std::uint64_t seed) {
  SynthConfig sc;
  sc.num_train = 6;
  sc.num_test = 0;
  sc.mean_segment_length = 8;
  sc.segment_jitter = 2;
  sc.seed = seed;
  std::vector<VideoSample> out;
  for (const auto& v : generate_synthetic_dataset(sc).videos)
    out.push_back({v.video_id, v.features, normalize_sequence(v.poses).first, v.transcript, v.labels});
  return out;
}

TEST(Train, ZeroLearningRateLeavesParametersUntouched) {
  const auto data = small_dataset(1);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.iterations = 5;
  cfg.hidden = 16;
  cfg.mining = MiningConfig{};
  const auto r = train(data, cfg, 17, 5);
  EXPECT_EQ(r.model, init_model(cfg, 17, 32, 5));
  EXPECT_EQ(r.log.size(), 5u);
}

TEST(Train, DeterministicAndAccountsForEveryTerm) {
  const auto data = small_dataset(2);
  TrainConfig cfg;
  cfg.iterations = 8;
  cfg.hidden = 16;
  cfg.mining = MiningConfig{};
  const auto a = train(data, cfg, 17, 5);
  const auto b = train(data, cfg, 17, 5);
  EXPECT_EQ(a.model, b.model);
  for (const auto& e : a.log) {
    EXPECT_NEAR(e.report.l_final, e.report.l_con + e.report.l_segment, 1e-12);
    EXPECT_NEAR(e.report.l_con, e.report.l_i2p + e.report.l_p2i, 1e-12);
    EXPECT_GT(e.report.l_con, 0.0);
  }
  cfg.mining.reset();
  for (const auto& e : train(data, cfg, 17, 5).log) EXPECT_EQ(e.report.l_con, 0.0);
}

TEST(Train, RejectsInconsistentShapes) {
  auto data = small_dataset(3);
  data[1].features = Matrix(data[1].features.rows, 7);
  try {
    train(data, TrainConfig{}, 17, 5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ConfigError);
  }
}

TEST(Train, LossDescendsOnDefaultSyntheticData) {
  std::vector<VideoSample> data;
  for (const auto& v : generate_synthetic_dataset(SynthConfig{}).videos)
    if (v.split == "train") data.push_back({v.video_id, v.features, normalize_sequence(v.poses).first, v.transcript, v.labels});
  for (bool with_pose : {false, true}) {
    TrainConfig cfg;
    cfg.iterations = 200;
    if (with_pose) cfg.mining = MiningConfig{};
    const auto r = train(data, cfg, 17, 5);
    EXPECT_LT(r.log[199].report.l_final, r.log[0].report.l_final) << "pose mining " << with_pose;
  }
}

struct PoseProbe {
  Matrix features;
  Transcript transcript;
  mutable int pose_reads = 0;
  std::vector<std::optional<NormalizedPose>> stored;
  const std::vector<std::optional<NormalizedPose>>& poses() const {
    ++pose_reads;
    return stored;
  }
};

Model one_hot_model(std::size_t classes) {
  Model m;
  m.encoder = EncoderParams::zeros(4, 2, classes);
  m.projection = ProjectionParams::zeros(classes, classes);
  m.head = ClassifierHead::zeros(classes, classes);
  for (std::size_t c = 0; c < classes; ++c) {
    m.projection.w(c, c) = 1.0;
    m.head.w(c, c) = 10.0;
  }
  return m;
}

TEST(Infer, RecoversWellSeparatedGroundTruthWithoutReadingPoses) {
  const std::vector<int> gt{3, 3, 3, 0, 0, 1, 1, 1, 1, 3, 3};
  PoseProbe probe{Matrix(gt.size(), 4), {{3, 0, 1, 3}}, 0, {}};
  for (std::size_t t = 0; t < gt.size(); ++t) probe.features(t, static_cast<std::size_t>(gt[t])) = 1.0;
  const Model model = one_hot_model(4);
  const auto offline = infer(model, probe, DecodeMode::Offline);
  const auto online = infer(model, probe, DecodeMode::Online);
  EXPECT_EQ(offline.frame_labels(), gt);
  EXPECT_EQ(online, offline);
  EXPECT_EQ(probe.pose_reads, 0);
}

TEST(Infer, ZeroHeadFallsBackToTieBreak) {
  Model model = one_hot_model(3);
  model.head = ClassifierHead::zeros(3, 3);
  const PoseProbe probe{Matrix(6, 3), {{1, 2}}, 0, {}};
  EXPECT_EQ(infer(model, probe, DecodeMode::Offline).segments, (std::vector<Segment>{{1, 5}, {2, 1}}));
  EXPECT_EQ(infer(model, probe, DecodeMode::Online).segments, (std::vector<Segment>{{1, 6}}));
}

}  // namespace
}  // namespace posecl

// Acceptance driver: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
#include <chrono>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "posecl/cli.hpp"
#include "posecl/posecl.hpp"
#include "test_support.hpp"

namespace {

using namespace posecl;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

RawPose random_raw_pose(std::mt19937_64& rng, std::size_t k) {
  std::uniform_real_distribution<double> coord(-50.0, 50.0);
  RawPose p;
  p.head_index = rng() % k;
  for (std::size_t i = 0; i < k; ++i) p.keypoints.push_back({coord(rng), coord(rng)});
  return p;
}

/// Max deviation of the NormalizedPose invariants: zero centroid, unit mean
/// distance, head on the non-negative x axis.
double invariant_violation(const NormalizedPose& p, std::size_t head) {
  double cx = 0, cy = 0, dist = 0;
  for (const auto& q : p.keypoints) {
    cx += q.x;
    cy += q.y;
    dist += std::hypot(q.x, q.y);
  }
  const double k = static_cast<double>(p.size());
  const auto& h = p.keypoints[head];
  return std::max({std::abs(cx / k), std::abs(cy / k), std::abs(dist / k - 1.0), std::abs(h.y), std::max(0.0, -h.x)});
}

Verdict normalization_invariance() {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> shift(-1e3, 1e3), logscale(-4.0, 4.0);
  const std::size_t ks[] = {2, 17, 133};
  double worst = 0, worst_inv = 0;
  for (int i = 0; i < 1000; ++i) {
    RawPose p = random_raw_pose(rng, ks[i % 3]);
    const double s = std::exp(logscale(rng)), tx = shift(rng), ty = shift(rng);
    RawPose q = p;
    for (auto& pt : q.keypoints) pt = {s * pt.x + tx, s * pt.y + ty};
    const auto a = normalize_pose(p).pose, b = normalize_pose(q).pose;
    for (std::size_t j = 0; j < a.size(); ++j)
      worst = std::max({worst, std::abs(a.keypoints[j].x - b.keypoints[j].x), std::abs(a.keypoints[j].y - b.keypoints[j].y)});
    worst_inv = std::max({worst_inv, invariant_violation(a, p.head_index), invariant_violation(b, p.head_index)});
  }
  const double secs = seconds_since(start);
  return {worst < 1e-6 && worst_inv < 1e-6 && secs < 5.0,
          fmt("max componentwise deviation %.2e, max invariant violation %.2e, %.2f s (limit 5 s)", worst, worst_inv, secs)};
}

Verdict rotation_canonicalization() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  const std::size_t ks[] = {2, 17, 133};
  double worst_y = 0, worst_x = 0;
  for (int i = 0; i < 1000; ++i) {
    RawPose p = random_raw_pose(rng, ks[i % 3]);
    double cx = 0, cy = 0;
    for (const auto& q : p.keypoints) {
      cx += q.x;
      cy += q.y;
    }
    cx /= static_cast<double>(p.keypoints.size());
    cy /= static_cast<double>(p.keypoints.size());
    const double th = angle(rng), c = std::cos(th), s = std::sin(th);
    for (auto& q : p.keypoints) q = {cx + c * (q.x - cx) - s * (q.y - cy), cy + s * (q.x - cx) + c * (q.y - cy)};
    const Point2 head = normalize_pose(p).pose.keypoints[p.head_index];
    worst_y = std::max(worst_y, std::abs(head.y));
    worst_x = std::max(worst_x, -head.x);
  }
  return {worst_y < 1e-6 && worst_x <= 1e-6, fmt("max |y_head| %.2e, min x_head %.2e", worst_y, -worst_x)};
}

Verdict gradient_oracle() {
  const auto start = Clock::now();
  double worst = 0;
  int configs = 0;
  for (std::uint64_t seed = 1; seed <= 24; ++seed, ++configs) {
    std::mt19937_64 rng(seed);
    const std::size_t frames = 2 + seed % 5, keypoints = 2 + seed % 3, features = 3 + seed % 4, classes = 2 + seed % 3;
    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.embed_dim = 4;
    cfg.dropout_rate = 0.0;
    cfg.seed = seed;
    cfg.head_input = seed % 4 == 0 ? HeadInput::RawFeatures : HeadInput::SharedProjection;
    Model model = init_model(cfg, keypoints, features, classes);
    VideoSample video;
    video.features = Matrix(frames, features);
    std::normal_distribution<double> g(0, 1);
    for (double& v : video.features.data) v = g(rng);
    for (std::size_t t = 0; t < frames; ++t) {
      if (t > 0 && rng() % 5 == 0) {
        video.poses.emplace_back(std::nullopt);
        continue;
      }
      video.poses.emplace_back(normalize_pose(random_raw_pose(rng, keypoints)).pose);
    }
    const std::size_t n = 1 + rng() % std::min<std::size_t>(frames, classes);
    for (std::size_t j = 0; j < n; ++j) video.transcript.actions.push_back(static_cast<int>((j + seed) % classes));
    const auto strategy = seed % 2 ? MiningStrategy::PoseSupervised : MiningStrategy::Vanilla;
    const JointConfig joint{MiningConfig{strategy, 0.5, 0.3}, 1.0};
    const auto pseudo = align_offline(model_log_probs(model, video.features), video.transcript).segmentation;
    const auto grad = joint_loss(model, video, pseudo, joint, 0).grad;
    auto loss = [&] { return joint_loss(model, video, pseudo, joint, 0).report.l_final; };
    auto params = model.tensors();
    const auto analytic = grad.tensors();
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto numeric = testing::central_differences(params[k].values, loss, 1e-5);
      for (std::size_t i = 0; i < numeric.size(); ++i)
        worst = std::max(worst, testing::relative_error(analytic[k].values[i], numeric[i]));
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 30.0,
          fmt("%d configurations, max relative error %.2e, %.2f s (limit 30 s)", configs, worst, secs)};
}

Embedding emb(Vector v, Modality m) { return {std::move(v), m, 0}; }

Verdict contrastive_closed_forms() {
  const MiningConfig vanilla{MiningStrategy::Vanilla, 0.0, 1.0};
  const auto single = contrastive_loss(std::vector{emb({1, 2}, Modality::Rgb)}, std::vector{emb({3, 4}, Modality::Pose)},
                                       std::vector<PairSets>{{0, {0}, {}}}, vanilla);

  double equal_dev = 0;
  for (std::size_t frames = 2; frames <= 6; ++frames) {
    const std::vector<Embedding> rgb(frames, emb({0.3, -1.2, 2.0}, Modality::Rgb));
    const std::vector<Embedding> pose(frames, emb({0.6, -2.4, 4.0}, Modality::Pose));
    const std::vector<NormalizedPose> poses(frames, NormalizedPose{{{1, 0}, {-1, 0}}});
    const MiningConfig cfg{MiningStrategy::Vanilla, 0.0, 0.07};
    const auto r = contrastive_loss(rgb, pose, mine_all(cfg, poses), cfg);
    const double expected = std::log(1.0 + static_cast<double>(frames - 1));
    equal_dev = std::max({equal_dev, std::abs(r.l_i2p - expected), std::abs(r.l_p2i - expected)});
  }

  const auto worked = contrastive_loss(
      std::vector{emb({1, 0}, Modality::Rgb), emb({0, 1}, Modality::Rgb)},
      std::vector{emb({1, 0}, Modality::Pose), emb({0, 1}, Modality::Pose)},
      std::vector<PairSets>{{0, {0}, {1}}, {1, {1}, {0}}}, vanilla);
  const double worked_dev = std::abs(worked.l_con - 2.0 * std::log1p(std::exp(-1.0)));

  return {single.l_con == 0.0 && equal_dev < 1e-9 && worked_dev < 1e-9,
          fmt("T=1 l_con %g, equal-similarity deviation %.2e, worked T=2 deviation %.2e", single.l_con, equal_dev,
              worked_dev)};
}

Verdict mining_equivalence() {
  std::mt19937_64 rng(505);
  std::size_t mismatches = 0, nesting_violations = 0;
  for (int seq = 0; seq < 500; ++seq) {
    const std::size_t frames = 1 + rng() % 20, k = 2 + rng() % 16;
    std::vector<NormalizedPose> poses;
    for (std::size_t t = 0; t < frames; ++t) {
      if (t > 0 && rng() % 6 == 0) poses.push_back(poses.back());  // exact repeats have distance 0
      else poses.push_back(normalize_pose(random_raw_pose(rng, k)).pose);
    }
    const auto vanilla = mine_all({MiningStrategy::Vanilla, 0.0, 0.07}, poses);
    if (mine_all({MiningStrategy::PoseSupervised, 0.0, 0.07}, poses) != vanilla) ++mismatches;
    std::vector<PairSets> previous = vanilla;
    for (int g = 1; g <= 10; ++g) {
      const auto cur = mine_all({MiningStrategy::PoseSupervised, 0.25 * g, 0.07}, poses);
      for (std::size_t t = 0; t < frames; ++t)
        if (!std::includes(previous[t].negatives.begin(), previous[t].negatives.end(), cur[t].negatives.begin(),
                           cur[t].negatives.end()))
          ++nesting_violations;
      previous = cur;
    }
  }
  return {mismatches == 0 && nesting_violations == 0,
          fmt("500 sequences: %zu delta=0 mismatches, %zu nesting violations over a 10-point grid", mismatches,
              nesting_violations)};
}

/// Exhaustive alignment: every placement of n-1 cuts, ties resolved toward
/// later boundaries (compared from the last boundary backwards).
std::pair<double, std::vector<std::size_t>> exhaustive_align(const Matrix& lp, const Transcript& tr) {
  const std::size_t frames = lp.rows, n = tr.size();
  double best = -INFINITY;
  std::vector<std::size_t> best_starts;
  std::vector<std::size_t> starts(n, 0);
  std::function<void(std::size_t)> rec = [&](std::size_t j) {
    if (j == n) {
      double s = 0;
      for (std::size_t seg = 0; seg < n; ++seg) {
        const std::size_t end = seg + 1 < n ? starts[seg + 1] : frames;
        for (std::size_t t = starts[seg]; t < end; ++t) s += lp(t, static_cast<std::size_t>(tr.actions[seg]));
      }
      const bool later = std::lexicographical_compare(best_starts.rbegin(), best_starts.rend(), starts.rbegin(), starts.rend());
      if (s > best || (s == best && later)) {
        best = s;
        best_starts = starts;
      }
      return;
    }
    for (std::size_t b = starts[j - 1] + 1; b + (n - j) <= frames; ++b) {
      starts[j] = b;
      rec(j + 1);
    }
  };
  rec(1);
  return {best, best_starts};
}

Verdict alignment_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(606);
  std::normal_distribution<double> g(0, 1);
  std::size_t score_mismatch = 0, argmax_mismatch = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t frames = 1 + rng() % 12, classes = 2 + rng() % 4;
    const std::size_t n = 1 + rng() % std::min<std::size_t>(4, frames);
    Matrix lp(frames, classes);
    // Half the instances use small integers so exact ties exercise the tie-break.
    const bool integer = trial % 2 == 0;
    for (double& v : lp.data) v = integer ? -static_cast<double>(rng() % 3) : g(rng);
    Transcript tr;
    for (std::size_t j = 0; j < n; ++j) tr.actions.push_back(static_cast<int>(rng() % classes));
    const auto dp = align_offline(lp, tr);
    const auto [score, starts] = exhaustive_align(lp, tr);
    std::vector<std::size_t> dp_starts;
    std::size_t at = 0;
    for (const auto& s : dp.segmentation.segments) {
      dp_starts.push_back(at);
      at += s.length;
    }
    if (std::abs(dp.score - score) > 1e-9 * std::max(1.0, std::abs(score))) ++score_mismatch;
    if (dp_starts != starts) ++argmax_mismatch;
  }
  const double secs = seconds_since(start);
  return {score_mismatch == 0 && argmax_mismatch == 0 && secs < 60.0,
          fmt("2000 instances: %zu score mismatches, %zu argmax mismatches, %.2f s (limit 60 s)", score_mismatch,
              argmax_mismatch, secs)};
}

Verdict online_causality() {
  std::mt19937_64 rng(707);
  std::normal_distribution<double> g(0, 1);
  std::size_t changed = 0;
  for (int video = 0; video < 200; ++video) {
    const std::size_t frames = 1 + rng() % 60, classes = 2 + rng() % 5;
    const std::size_t n = 1 + rng() % std::min<std::size_t>(6, frames);
    Matrix lp(frames, classes);
    for (double& v : lp.data) v = g(rng);
    Transcript tr;
    for (std::size_t j = 0; j < n; ++j) tr.actions.push_back(static_cast<int>(rng() % classes));
    OnlineDecoder stream(tr);
    std::vector<int> committed;
    for (std::size_t t = 0; t < frames; ++t) {
      committed.push_back(stream.push(lp.row(t)));
      Matrix prefix(t + 1, classes);
      std::copy_n(lp.data.begin(), (t + 1) * classes, prefix.data.begin());
      if (decode_online(prefix, tr) != committed || stream.committed() != committed) ++changed;
    }
  }
  return {changed == 0, fmt("200 videos: %zu prefixes whose commitments changed", changed)};
}

Verdict metric_fixtures() {
  using L = std::vector<int>;
  const L gt{0, 0, 1, 1}, pred{0, 0, 0, 1};
  const double acc = frame_accuracy(pred, gt);
  const double iou = segmental_iou(pred, gt).value;
  const double edit = edit_score(L{0, 2}, L{0, 1, 2});
  const double f1a = f1_at_threshold(pred, gt).mean.value;
  const double f1b = f1_at_threshold(L{0, 1, 1, 1}, L{0, 0, 0, 0}).mean.value;
  const auto perfect = evaluate(L{2, 2, 0, 1, 1, 1, 0}, L{2, 2, 0, 1, 1, 1, 0});
  const double dev = std::max({std::abs(acc - 0.75), std::abs(iou - 7.0 / 12.0), std::abs(edit - 200.0 / 3.0),
                               std::abs(f1a - 1.0), std::abs(f1b - 0.0)});
  const bool perfect_ok = perfect.acc == 1.0 && perfect.iou == 1.0 && perfect.edit == 100.0 && perfect.f1_at_50 == 1.0;
  return {dev < 1e-9 && std::abs(edit - 66.667) < 1e-3 && perfect_ok,
          fmt("acc %.6f, iou %.6f, edit %.3f, f1 %.1f/%.1f, perfect (%g, %g, %g, %g)", acc, iou, edit, f1a, f1b,
              perfect.acc, perfect.iou, perfect.edit, perfect.f1_at_50)};
}

// ---------------------------------------------------------------------------
// End-to-end directional experiment and its determinism.

struct Method {
  const char* name;
  std::optional<MiningConfig> mining;
};

const std::vector<Method>& methods() {
  static const std::vector<Method> m{{"baseline", std::nullopt},
                                     {"vanilla", MiningConfig{MiningStrategy::Vanilla, kDefaultDelta, kDefaultTau}},
                                     {"pose", MiningConfig{MiningStrategy::PoseSupervised, kDefaultDelta, kDefaultTau}}};
  return m;
}

constexpr int kSeeds = 5;

struct RunRecord {
  std::string run_log, checkpoint;
  double test_iou = 0;
};

std::vector<RunRecord> run_directional(const Dataset& ds) {
  std::vector<RunRecord> out;
  for (const auto& method : methods())
    for (int seed = 0; seed < kSeeds; ++seed) {
      TrainConfig cfg;
      cfg.mining = method.mining;
      cfg.seed = static_cast<std::uint64_t>(seed);
      auto art = cli::run_training(ds, cfg);
      std::vector<MetricReport> reports;
      for (const auto& v : ds.videos) {
        if (v.split != "test") continue;
        const auto labels = infer(art.result.model, v.sample, DecodeMode::Offline).frame_labels();
        reports.push_back(evaluate(labels, *v.sample.ground_truth));
      }
      out.push_back({std::move(art.run_log), std::move(art.checkpoint), mean_report(reports).iou});
    }
  return out;
}

Dataset default_dataset(const testing::TempDir& dir) {
  generate_synthetic(SynthConfig{}, dir.path());
  return load_dataset(dir / "manifest.json");
}

std::vector<RunRecord> first_runs;
bool have_first_runs = false;

Verdict directional_claim() {
  const auto start = Clock::now();
  testing::TempDir dir("accept9");
  first_runs = run_directional(default_dataset(dir));
  have_first_runs = true;
  double mean[3] = {0, 0, 0};
  std::string per_seed;
  for (std::size_t m = 0; m < 3; ++m) {
    per_seed += std::string(m ? "; " : "") + methods()[m].name + " [";
    for (int s = 0; s < kSeeds; ++s) {
      const double v = first_runs[m * kSeeds + static_cast<std::size_t>(s)].test_iou;
      mean[m] += v / kSeeds;
      per_seed += fmt(s ? " %.3f" : "%.3f", v);
    }
    per_seed += "]";
  }
  const double secs = seconds_since(start);
  const bool ordered = mean[2] >= mean[1] && mean[1] >= mean[0];
  const bool margin = mean[2] - mean[0] >= 0.02;
  return {ordered && margin && secs < 600.0,
          fmt("mean test IoU pose %.4f >= vanilla %.4f >= baseline %.4f, pose - baseline %.4f (need 0.02), %.1f s "
              "(limit 600 s)",
              mean[2], mean[1], mean[0], mean[2] - mean[0], secs) +
              "\n        per seed: " + per_seed};
}

Verdict determinism() {
  if (!have_first_runs) return {false, "criterion 9 did not produce runs"};
  testing::TempDir dir("accept10");
  const auto again = run_directional(default_dataset(dir));
  std::size_t log_diff = 0, ckpt_diff = 0;
  for (std::size_t i = 0; i < again.size(); ++i) {
    log_diff += again[i].run_log != first_runs[i].run_log;
    ckpt_diff += again[i].checkpoint != first_runs[i].checkpoint;
  }
  return {log_diff == 0 && ckpt_diff == 0,
          fmt("%zu runs repeated: %zu run logs and %zu checkpoints differ", again.size(), log_diff, ckpt_diff)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Verdict (*)()>> criteria{
      {"normalization invariance", normalization_invariance},
      {"rotation canonicalization", rotation_canonicalization},
      {"gradient oracle", gradient_oracle},
      {"contrastive closed forms", contrastive_closed_forms},
      {"mining equivalence and monotonicity", mining_equivalence},
      {"alignment oracle", alignment_oracle},
      {"online causality", online_causality},
      {"metric fixtures", metric_fixtures},
      {"end-to-end directional claim", directional_claim},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s  %2zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}

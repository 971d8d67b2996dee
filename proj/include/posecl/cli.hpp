#pragma once

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "posecl/dataio_synth.hpp"
#include "posecl/error.hpp"
#include "posecl/metrics.hpp"
#include "posecl/weak_segmentation.hpp"

namespace posecl::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kIoError = 3,
  kDiverged = 4,
  kLengthMismatch = 5,
};

inline int exit_code_for(Errc code) {
  switch (code) {
    case Errc::IoError:
    case Errc::ParseError:
    case Errc::DimensionError: return kIoError;
    case Errc::Divergence: return kDiverged;
    case Errc::LengthMismatch: return kLengthMismatch;
    default: return kConfigError;
  }
}

// ---------------------------------------------------------------------------
// Option structs; each one serializes to the resolved config that replays it.

struct SynthOptions {
  SynthConfig config;
  std::string out;

  json resolved() const {
    json j = config.to_json();
    j["subcommand"] = "synth";
    j["out"] = out;
    return j;
  }
};

struct TrainOptions {
  std::string manifest;
  std::string out;
  std::string mining = "pose";
  double delta = kDefaultDelta;
  double tau = kDefaultTau;
  double lr = kDefaultLearningRate;
  std::size_t iters = TrainConfig{}.iterations;
  std::uint64_t seed = 0;
  double con_weight = 1.0;
  std::size_t hidden = TrainConfig{}.hidden;
  std::size_t embed_dim = TrainConfig{}.embed_dim;
  double dropout = kDefaultDropout;
  std::string head_input = "projected";

  TrainConfig to_config() const {
    TrainConfig c;
    if (mining == "vanilla") c.mining = MiningConfig{MiningStrategy::Vanilla, delta, tau};
    else if (mining == "pose") c.mining = MiningConfig{MiningStrategy::PoseSupervised, delta, tau};
    else require(mining == "none", Errc::ConfigError, "unknown mining strategy '" + mining + "'");
    c.con_weight = con_weight;
    c.learning_rate = lr;
    c.iterations = iters;
    c.seed = seed;
    c.hidden = hidden;
    c.embed_dim = embed_dim;
    c.dropout_rate = dropout;
    require(head_input == "projected" || head_input == "features", Errc::ConfigError,
            "unknown head input '" + head_input + "'");
    c.head_input = head_input == "projected" ? HeadInput::SharedProjection : HeadInput::RawFeatures;
    c.validate();
    return c;
  }

  json resolved() const {
    return {{"subcommand", "train"}, {"manifest", manifest}, {"out", out},       {"mining", mining},
            {"delta", delta},        {"tau", tau},           {"lr", lr},         {"iters", iters},
            {"seed", seed},          {"con-weight", con_weight}, {"hidden", hidden}, {"embed-dim", embed_dim},
            {"dropout", dropout},    {"head-input", head_input}};
  }
};

struct InferOptions {
  std::string manifest;
  std::string checkpoint;
  std::string out;
  std::string mode = "offline";
  std::string split = "test";

  json resolved() const {
    return {{"subcommand", "infer"}, {"manifest", manifest}, {"checkpoint", checkpoint},
            {"out", out},            {"mode", mode},         {"split", split}};
  }
};

struct EvalOptions {
  std::string manifest;
  std::string pred;
  std::string split = "test";
  std::string csv;
  std::vector<std::string> background;

  json resolved() const {
    return {{"subcommand", "eval"}, {"manifest", manifest}, {"pred", pred},
            {"split", split},       {"csv", csv},           {"background", background}};
  }
};

// ---------------------------------------------------------------------------
// Library-level entry points, reused by the acceptance suite.

struct TrainArtifacts {
  TrainResult result;
  std::string run_log;
  std::string checkpoint;
};

inline TrainArtifacts run_training(const Dataset& dataset, const TrainConfig& config) {
  const auto videos = dataset.split("train");
  TrainArtifacts out;
  std::ostringstream log;
  out.result = train(videos, config, dataset.manifest.keypoints, dataset.manifest.num_classes,
                     [&](const IterationLog& e) { log << run_log_line(e); });
  out.run_log = log.str();
  out.checkpoint = encode_checkpoint(out.result.model);
  return out;
}

inline std::vector<Segmentation> run_inference(const Model& model, const Dataset& dataset, const std::string& split,
                                               DecodeMode mode) {
  std::vector<Segmentation> out;
  for (const auto& v : dataset.videos)
    if (split == "all" || v.split == split) out.push_back(infer(model, v.sample, mode));
  return out;
}

struct EvalRow {
  std::string video_id;
  MetricReport report;
};

inline std::string format_metric_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out << "video_id,acc,iou,edit,f1_at_50\n";
  auto line = [&](const std::string& id, const MetricReport& r) {
    out << id << ',' << std::fixed << std::setprecision(6) << r.acc << ',' << r.iou << ',' << r.edit << ','
        << r.f1_at_50 << '\n';
  };
  std::vector<MetricReport> reports;
  for (const auto& row : rows) {
    line(row.video_id, row.report);
    reports.push_back(row.report);
  }
  line("mean", mean_report(reports));
  return out.str();
}

// ---------------------------------------------------------------------------
// Subcommands

inline void write_resolved(const fs::path& dir, const json& resolved) {
  write_file(dir / "config.json", resolved.dump(2) + "\n");
}

inline int cmd_synth(const SynthOptions& opt, std::ostream& out) {
  const auto manifest = generate_synthetic(opt.config, opt.out);
  write_resolved(opt.out, opt.resolved());
  out << (fs::path(opt.out) / "manifest.json").string() << '\n';
  (void)manifest;
  return kOk;
}

inline int cmd_train(const TrainOptions& opt, std::ostream& out) {
  const TrainConfig config = opt.to_config();
  const Dataset dataset = load_dataset(opt.manifest);
  const fs::path dir = opt.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(Errc::IoError, dir.string() + ": " + ec.message());
  write_resolved(dir, opt.resolved());
  std::ofstream log(dir / "run_log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) fail(Errc::IoError, (dir / "run_log.jsonl").string() + ": cannot open");
  const auto videos = dataset.split("train");
  const auto result = train(videos, config, dataset.manifest.keypoints, dataset.manifest.num_classes,
                            [&](const IterationLog& e) { log << run_log_line(e); });
  log.close();
  save_checkpoint(result.model, dir / "checkpoint.bin");
  out << (dir / "checkpoint.bin").string() << '\n';
  return kOk;
}

inline int cmd_infer(const InferOptions& opt, std::ostream& out) {
  require(opt.mode == "offline" || opt.mode == "online", Errc::ConfigError, "mode must be offline or online");
  require(opt.split == "train" || opt.split == "test" || opt.split == "all", Errc::ConfigError,
          "split must be train, test or all");
  const Model model = load_checkpoint(opt.checkpoint);
  const Dataset dataset = load_dataset(opt.manifest);
  require(model.projection.input_dim() == dataset.manifest.feature_dim &&
              model.head.num_classes() == dataset.manifest.num_classes,
          Errc::ConfigError, "checkpoint does not match dataset dimensions");
  const DecodeMode mode = opt.mode == "online" ? DecodeMode::Online : DecodeMode::Offline;
  const fs::path dir = opt.out;
  std::size_t written = 0;
  for (const auto& v : dataset.videos) {
    if (opt.split != "all" && v.split != opt.split) continue;
    const auto seg = infer(model, v.sample, mode);
    write_file(dir / (v.sample.video_id + ".txt"), encode_labels(seg.frame_labels(), dataset.manifest.class_names));
    ++written;
  }
  write_resolved(dir, opt.resolved());
  out << written << " predictions written to " << dir.string() << '\n';
  return kOk;
}

inline int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  const Dataset dataset = load_dataset(opt.manifest);
  const auto index = dataset.manifest.class_index();
  std::set<int> background;
  for (const auto& name : opt.background) {
    const auto it = index.find(name);
    require(it != index.end(), Errc::ConfigError, "unknown background class '" + name + "'");
    background.insert(it->second);
  }
  std::vector<EvalRow> rows;
  for (const auto& v : dataset.videos) {
    if (opt.split != "all" && v.split != opt.split) continue;
    require(v.sample.ground_truth.has_value(), Errc::ParseError, v.sample.video_id + ": no ground-truth labels");
    const auto pred = decode_name_lines(fs::path(opt.pred) / (v.sample.video_id + ".txt"), index);
    const auto& gt = *v.sample.ground_truth;
    require(pred.size() == gt.size(), Errc::LengthMismatch,
            v.sample.video_id + ": " + std::to_string(pred.size()) + " predicted vs " + std::to_string(gt.size()) +
                " ground-truth frames");
    rows.push_back({v.sample.video_id, evaluate(pred, gt, background)});
  }
  const std::string csv = format_metric_csv(rows);
  if (!opt.csv.empty()) write_file(opt.csv, csv);
  out << csv;
  return kOk;
}

/// Turns a resolved config back into command-line arguments.
inline std::vector<std::string> replay_args(const json& resolved) {
  require(resolved.is_object() && resolved.contains("subcommand"), Errc::ConfigError,
          "resolved config lacks a subcommand");
  std::vector<std::string> args{"posecl", resolved.at("subcommand").get<std::string>()};
  static const std::map<std::string, std::string> synth_keys{
      {"num_train", "train-videos"}, {"num_test", "test-videos"}, {"num_classes", "classes"},
      {"keypoints", "keypoints"},    {"feature_dim", "feature-dim"}, {"min_actions", "min-actions"},
      {"max_actions", "max-actions"}, {"mean_segment_length", "segment-length"}, {"segment_jitter", "segment-jitter"},
      {"prototypes_per_action", "prototypes"}, {"pose_pool_size", "pose-pool"}, {"prototype_spread", "prototype-spread"}, {"pose_noise", "pose-noise"},
      {"feature_noise", "feature-noise"}, {"missing_pose_fraction", "missing-pose"}, {"seed", "seed"}, {"out", "out"}};
  for (auto it = resolved.begin(); it != resolved.end(); ++it) {
    if (it.key() == "subcommand") continue;
    std::string key = it.key();
    if (args[1] == "synth") {
      const auto m = synth_keys.find(key);
      require(m != synth_keys.end(), Errc::ConfigError, "unknown synth key '" + key + "'");
      key = m->second;
    }
    if (it.value().is_array()) {
      for (const auto& v : it.value()) {
        args.push_back("--" + key);
        args.push_back(v.get<std::string>());
      }
      continue;
    }
    if (it.value().is_string() && it.value().get<std::string>().empty()) continue;
    args.push_back("--" + key);
    args.push_back(it.value().is_string() ? it.value().get<std::string>() : it.value().dump());
  }
  return args;
}

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

inline int run_replay(const std::string& path, std::ostream& out, std::ostream& err) {
  json resolved;
  try {
    resolved = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(Errc::ParseError, path + ": " + e.what());
  }
  return run(replay_args(resolved), out, err);
}

/// Parses and dispatches one invocation. Diagnostics go to `err`, data to
/// `out` or files.
inline int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pose-supervised contrastive learning for weakly-supervised action segmentation", "posecl"};
  app.require_subcommand(1);

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
  synth->add_option("--out", so.out, "Output directory")->required();
  synth->add_option("--seed", so.config.seed, "Random seed");
  synth->add_option("--train-videos", so.config.num_train);
  synth->add_option("--test-videos", so.config.num_test);
  synth->add_option("--classes", so.config.num_classes);
  synth->add_option("--keypoints", so.config.keypoints);
  synth->add_option("--feature-dim", so.config.feature_dim);
  synth->add_option("--min-actions", so.config.min_actions);
  synth->add_option("--max-actions", so.config.max_actions);
  synth->add_option("--segment-length", so.config.mean_segment_length, "Mean segment length in frames");
  synth->add_option("--segment-jitter", so.config.segment_jitter);
  synth->add_option("--prototypes", so.config.prototypes_per_action, "Pose prototypes per action");
  synth->add_option("--pose-pool", so.config.pose_pool_size, "Shared pose pool size (0: per-action poses)");
  synth->add_option("--prototype-spread", so.config.prototype_spread);
  synth->add_option("--pose-noise", so.config.pose_noise);
  synth->add_option("--feature-noise", so.config.feature_noise);
  synth->add_option("--missing-pose", so.config.missing_pose_fraction, "Fraction of frames without pose");

  TrainOptions to;
  auto* trn = app.add_subcommand("train", "Train encoder, projection and classifier");
  trn->add_option("--manifest", to.manifest)->required();
  trn->add_option("--out", to.out, "Output directory")->required();
  trn->add_option("--mining", to.mining, "none, vanilla or pose")
      ->check(CLI::IsMember({"none", "vanilla", "pose"}));
  trn->add_option("--delta", to.delta, "Pose-distance threshold for negatives");
  trn->add_option("--tau", to.tau, "Contrastive temperature");
  trn->add_option("--lr", to.lr, "SGD learning rate");
  trn->add_option("--iters", to.iters, "Training iterations");
  trn->add_option("--seed", to.seed);
  trn->add_option("--con-weight", to.con_weight, "Weight of the contrastive term");
  trn->add_option("--hidden", to.hidden, "Pose encoder hidden width (even)");
  trn->add_option("--embed-dim", to.embed_dim, "Joint embedding dimension");
  trn->add_option("--dropout", to.dropout);
  trn->add_option("--head-input", to.head_input, "projected or features")
      ->check(CLI::IsMember({"projected", "features"}));

  InferOptions io;
  auto* inf = app.add_subcommand("infer", "Segment videos from RGB features only");
  inf->add_option("--manifest", io.manifest)->required();
  inf->add_option("--checkpoint", io.checkpoint)->required();
  inf->add_option("--out", io.out, "Prediction directory")->required();
  inf->add_option("--mode", io.mode, "offline or online")->check(CLI::IsMember({"offline", "online"}));
  inf->add_option("--split", io.split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));

  EvalOptions eo;
  auto* evl = app.add_subcommand("eval", "Score predictions against ground truth");
  evl->add_option("--manifest", eo.manifest)->required();
  evl->add_option("--pred", eo.pred, "Prediction directory")->required();
  evl->add_option("--split", eo.split)->check(CLI::IsMember({"train", "test", "all"}));
  evl->add_option("--csv", eo.csv, "Also write the CSV here");
  evl->add_option("--background", eo.background, "Background class names");

  std::string replay_path;
  auto* rep = app.add_subcommand("replay", "Re-run from a resolved config.json");
  rep->add_option("--config", replay_path)->required();

  std::vector<std::string> reversed(argv.rbegin(), argv.rend() - (argv.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "posecl: " << e.what() << "\n" << app.help();
    return kConfigError;
  }

  try {
    if (*synth) return cmd_synth(so, out);
    if (*trn) return cmd_train(to, out);
    if (*inf) return cmd_infer(io, out);
    if (*evl) return cmd_eval(eo, out);
    if (*rep) return run_replay(replay_path, out, err);
  } catch (const Error& e) {
    err << "posecl: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "posecl: " << e.what() << '\n';
    return kIoError;
  }
  return kConfigError;
}

}  // namespace posecl::cli

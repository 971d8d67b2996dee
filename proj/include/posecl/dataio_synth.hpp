#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "posecl/error.hpp"
#include "posecl/pose_geometry.hpp"
#include "posecl/tensor.hpp"
#include "posecl/weak_segmentation.hpp"

namespace posecl {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr std::string_view kFormatVersion = "1";
inline constexpr std::array<char, 4> kFeatureMagic{'P', 'C', 'L', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::array<char, 8> kCheckpointMagic{'P', 'C', 'L', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

// ---------------------------------------------------------------------------
// Small I/O helpers

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::ParseError, path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::IoError, path.string() + ": write failed");
}

/// Shortest text that round-trips the float32 value exactly.
inline std::string format_float(float v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_view(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::vector<std::string> read_lines(const fs::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> lines;
  for (auto sv : split_view(text, '\n')) {
    if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
    lines.emplace_back(sv);
  }
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}
inline void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
inline double get_f32(std::string_view in, std::size_t at) {
  return static_cast<double>(std::bit_cast<float>(get_u32(in, at)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Feature files: "PCLF", u32 version, u32 T, u32 F, then T*F float32, all LE.

inline std::string encode_features(const Matrix& m) {
  std::string out(kFeatureMagic.begin(), kFeatureMagic.end());
  detail::put_u32(out, kFeatureVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols));
  out.reserve(out.size() + 4 * m.data.size());
  for (double v : m.data) detail::put_f32(out, v);
  return out;
}

inline Matrix decode_features(std::string_view bytes, const std::string& origin) {
  require(bytes.size() >= 16 && std::equal(kFeatureMagic.begin(), kFeatureMagic.end(), bytes.begin()),
          Errc::ParseError, origin + ": not a feature file");
  const auto version = detail::get_u32(bytes, 4);
  require(version == kFeatureVersion, Errc::ParseError, origin + ": unsupported feature version " + std::to_string(version));
  const std::size_t rows = detail::get_u32(bytes, 8);
  const std::size_t cols = detail::get_u32(bytes, 12);
  require(bytes.size() == 16 + 4 * rows * cols, Errc::ParseError,
          origin + ": payload size does not match header " + std::to_string(rows) + "x" + std::to_string(cols));
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = detail::get_f32(bytes, 16 + 4 * i);
  return m;
}

// ---------------------------------------------------------------------------
// Pose CSV: header "frame_index,x0,y0,...", one row per frame, empty cells
// for a frame without pose.

inline std::string encode_poses(const std::vector<std::optional<RawPose>>& poses, std::size_t keypoints) {
  std::string out = "frame_index";
  for (std::size_t k = 0; k < keypoints; ++k) out += ",x" + std::to_string(k) + ",y" + std::to_string(k);
  out += '\n';
  for (std::size_t t = 0; t < poses.size(); ++t) {
    out += std::to_string(t);
    if (poses[t]) {
      require(poses[t]->keypoints.size() == keypoints, Errc::DimensionError, "pose with wrong keypoint count");
      for (const auto& p : poses[t]->keypoints) {
        out += ',' + format_float(static_cast<float>(p.x));
        out += ',' + format_float(static_cast<float>(p.y));
      }
    } else {
      out.append(2 * keypoints, ',');
    }
    out += '\n';
  }
  return out;
}

inline std::vector<std::optional<RawPose>> decode_poses(const fs::path& path, std::size_t keypoints,
                                                        std::size_t head_index) {
  if (!fs::exists(path)) fail(Errc::ParseError, path.string() + ": pose file not found");
  const auto lines = read_lines(path);
  require(!lines.empty(), Errc::ParseError, path.string() + ":1: missing header");
  const std::size_t cells = 1 + 2 * keypoints;
  require(split_view(lines[0], ',').size() == cells, Errc::ParseError,
          path.string() + ":1: header does not have " + std::to_string(cells) + " columns");
  std::vector<std::optional<RawPose>> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    const auto parts = split_view(lines[i], ',');
    require(parts.size() == cells, Errc::ParseError, where + ": expected " + std::to_string(cells) + " cells");
    const auto idx = parse_number(parts[0]);
    require(idx && *idx == static_cast<double>(i - 1), Errc::ParseError, where + ": bad frame index");
    const bool all_empty = std::all_of(parts.begin() + 1, parts.end(), [](std::string_view c) {
      return c.find_first_not_of(" \t\r") == std::string_view::npos;
    });
    if (all_empty) {
      out.emplace_back(std::nullopt);
      continue;
    }
    RawPose pose;
    pose.head_index = head_index;
    for (std::size_t k = 0; k < keypoints; ++k) {
      const auto x = parse_number(parts[1 + 2 * k]);
      const auto y = parse_number(parts[2 + 2 * k]);
      require(x && y, Errc::ParseError, where + ": bad coordinate for keypoint " + std::to_string(k));
      pose.keypoints.push_back({*x, *y});
    }
    out.emplace_back(std::move(pose));
  }
  return out;
}

inline std::string encode_name_lines(const std::vector<int>& ids, const std::vector<std::string>& names) {
  std::string out;
  for (int id : ids) out += names.at(static_cast<std::size_t>(id)) + '\n';
  return out;
}

inline std::vector<int> decode_name_lines(const fs::path& path, const std::map<std::string, int>& index) {
  if (!fs::exists(path)) fail(Errc::ParseError, path.string() + ": file not found");
  const auto lines = read_lines(path);
  std::vector<int> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto it = index.find(lines[i]);
    require(it != index.end(), Errc::ParseError,
            path.string() + ":" + std::to_string(i + 1) + ": unknown class '" + lines[i] + "'");
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct VideoEntry {
  std::string video_id;
  std::string split;  // "train" or "test"
  std::string feature_file;
  std::string pose_file;
  std::string transcript_file;
  std::optional<std::string> label_file;
};

struct DatasetManifest {
  fs::path root;
  std::vector<VideoEntry> videos;
  std::size_t keypoints = 0;
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  std::size_t head_index = 0;
  std::vector<std::string> class_names;
  std::string format_version{kFormatVersion};

  std::map<std::string, int> class_index() const {
    std::map<std::string, int> out;
    for (std::size_t i = 0; i < class_names.size(); ++i) out[class_names[i]] = static_cast<int>(i);
    return out;
  }
};

inline json manifest_to_json(const DatasetManifest& m, const json& extra = json::object()) {
  json videos = json::array();
  for (const auto& v : m.videos) {
    json e{{"video_id", v.video_id},
           {"split", v.split},
           {"features", v.feature_file},
           {"poses", v.pose_file},
           {"transcript", v.transcript_file}};
    if (v.label_file) e["labels"] = *v.label_file;
    videos.push_back(std::move(e));
  }
  json j{{"format_version", m.format_version},
         {"keypoints", m.keypoints},
         {"feature_dim", m.feature_dim},
         {"num_classes", m.num_classes},
         {"head_index", m.head_index},
         {"classes", m.class_names},
         {"videos", videos}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

inline DatasetManifest read_manifest(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) fail(Errc::ParseError, manifest_path.string() + ": manifest not found");
  json j;
  try {
    j = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    fail(Errc::ParseError, manifest_path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = manifest_path.parent_path();
  try {
    m.format_version = j.at("format_version").get<std::string>();
    require(m.format_version == kFormatVersion, Errc::ParseError,
            manifest_path.string() + ": unsupported format_version " + m.format_version);
    m.keypoints = j.at("keypoints").get<std::size_t>();
    m.feature_dim = j.at("feature_dim").get<std::size_t>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.head_index = j.value("head_index", std::size_t{0});
    m.class_names = j.at("classes").get<std::vector<std::string>>();
    for (const auto& v : j.at("videos")) {
      VideoEntry e;
      e.video_id = v.at("video_id").get<std::string>();
      e.split = v.value("split", std::string("train"));
      e.feature_file = v.at("features").get<std::string>();
      e.pose_file = v.at("poses").get<std::string>();
      e.transcript_file = v.at("transcript").get<std::string>();
      if (v.contains("labels")) e.label_file = v.at("labels").get<std::string>();
      m.videos.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    fail(Errc::ParseError, manifest_path.string() + ": " + e.what());
  }
  require(m.class_names.size() == m.num_classes, Errc::DimensionError,
          manifest_path.string() + ": class table size differs from num_classes");
  require(m.keypoints >= 2 && m.head_index < m.keypoints, Errc::DimensionError,
          manifest_path.string() + ": invalid keypoint count or head index");
  return m;
}

// ---------------------------------------------------------------------------
// Loading

enum class PoseStatus { Valid, Missing, DegenerateSubstituted, DegenerateDropped };

struct LoadedVideo {
  std::string split;
  VideoSample sample;
  std::vector<std::optional<RawPose>> raw_poses;
  std::vector<PoseStatus> pose_status;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<LoadedVideo> videos;

  std::vector<VideoSample> split(std::string_view name) const {
    std::vector<VideoSample> out;
    for (const auto& v : videos)
      if (name == "all" || v.split == name) out.push_back(v.sample);
    return out;
  }
};

/// Normalizes every raw pose. A degenerate frame takes the nearest preceding
/// usable pose; without one it is left out of the contrastive loss.
inline std::pair<std::vector<std::optional<NormalizedPose>>, std::vector<PoseStatus>> normalize_sequence(
    const std::vector<std::optional<RawPose>>& raw) {
  std::vector<std::optional<NormalizedPose>> out(raw.size());
  std::vector<PoseStatus> status(raw.size(), PoseStatus::Missing);
  std::optional<NormalizedPose> last_valid;
  for (std::size_t t = 0; t < raw.size(); ++t) {
    if (!raw[t]) continue;
    try {
      out[t] = normalize_pose(*raw[t]).pose;
      status[t] = PoseStatus::Valid;
      last_valid = out[t];
    } catch (const Error& e) {
      if (e.code() != Errc::DegeneratePose) throw;
      if (last_valid) {
        out[t] = last_valid;
        status[t] = PoseStatus::DegenerateSubstituted;
      } else {
        status[t] = PoseStatus::DegenerateDropped;
      }
    }
  }
  return {std::move(out), std::move(status)};
}

inline Dataset load_dataset(const fs::path& manifest_path) {
  Dataset ds{read_manifest(manifest_path), {}};
  const auto& m = ds.manifest;
  const auto index = m.class_index();
  for (const auto& e : m.videos) {
    LoadedVideo lv;
    lv.split = e.split;
    lv.sample.video_id = e.video_id;
    const fs::path fpath = m.root / e.feature_file;
    if (!fs::exists(fpath)) fail(Errc::ParseError, fpath.string() + ": feature file not found");
    lv.sample.features = decode_features(read_file(fpath), fpath.string());
    require(lv.sample.features.cols == m.feature_dim, Errc::DimensionError,
            fpath.string() + ": F=" + std::to_string(lv.sample.features.cols) + ", manifest says " +
                std::to_string(m.feature_dim));
    const std::size_t frames = lv.sample.features.rows;
    require(frames >= 1, Errc::DimensionError, fpath.string() + ": video has no frames");

    const fs::path ppath = m.root / e.pose_file;
    lv.raw_poses = decode_poses(ppath, m.keypoints, m.head_index);
    require(lv.raw_poses.size() == frames, Errc::DimensionError,
            ppath.string() + ": " + std::to_string(lv.raw_poses.size()) + " pose rows for " + std::to_string(frames) +
                " feature rows");
    auto [poses, status] = normalize_sequence(lv.raw_poses);
    lv.sample.poses = std::move(poses);
    lv.pose_status = std::move(status);

    const fs::path tpath = m.root / e.transcript_file;
    lv.sample.transcript.actions = decode_name_lines(tpath, index);
    require(!lv.sample.transcript.actions.empty() && lv.sample.transcript.size() <= frames, Errc::DimensionError,
            tpath.string() + ": transcript length must be in [1, T]");

    if (e.label_file) {
      const fs::path lpath = m.root / *e.label_file;
      auto labels = decode_name_lines(lpath, index);
      require(labels.size() == frames, Errc::DimensionError,
              lpath.string() + ": " + std::to_string(labels.size()) + " labels for " + std::to_string(frames) +
                  " feature rows");
      lv.sample.ground_truth = std::move(labels);
    }
    ds.videos.push_back(std::move(lv));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generator

/// Instructional-video simulator. Each action is a fixed progression through
/// its own pose prototypes (sub-actions); RGB features are a fixed random
/// linear image of the (action, prototype) code plus noise, so pose carries
/// the sub-action structure cleanly while features carry it noisily.
struct SynthConfig {
  std::size_t num_train = 40;
  std::size_t num_test = 10;
  std::size_t num_classes = 5;
  std::size_t keypoints = 17;
  std::size_t feature_dim = 32;
  std::size_t min_actions = 3;
  std::size_t max_actions = 5;
  std::size_t mean_segment_length = 30;
  std::size_t segment_jitter = 6;
  std::size_t prototypes_per_action = 2;
  /// When > 0, actions draw their prototypes from a shared pool of this many
  /// poses, so the same pose recurs across actions. 0: every action owns its
  /// prototypes.
  std::size_t pose_pool_size = 0;
  double prototype_spread = 0.35;  // body units
  double pose_noise = 0.02;        // body units
  double feature_noise = 1.0;
  double missing_pose_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    require(num_train + num_test > 0, Errc::ConfigError, "need at least one video");
    require(num_classes >= 2, Errc::ConfigError, "need at least two classes");
    require(keypoints >= 2 && feature_dim >= 1, Errc::ConfigError, "keypoints >= 2 and feature_dim >= 1");
    require(min_actions >= 1 && min_actions <= max_actions, Errc::ConfigError, "need 1 <= min_actions <= max_actions");
    require(prototypes_per_action >= 1, Errc::ConfigError, "need at least one prototype per action");
    require(pose_pool_size == 0 || pose_pool_size >= prototypes_per_action, Errc::ConfigError,
            "pose pool must hold at least prototypes_per_action poses");
    require(mean_segment_length >= 1 && segment_jitter < mean_segment_length, Errc::ConfigError,
            "segment jitter must be smaller than the mean segment length");
    require(pose_noise >= 0.0 && feature_noise >= 0.0 && prototype_spread >= 0.0, Errc::ConfigError,
            "noise levels must be >= 0");
    require(missing_pose_fraction >= 0.0 && missing_pose_fraction < 1.0, Errc::ConfigError,
            "missing pose fraction must be in [0, 1)");
  }

  json to_json() const {
    return {{"num_train", num_train},
            {"num_test", num_test},
            {"num_classes", num_classes},
            {"keypoints", keypoints},
            {"feature_dim", feature_dim},
            {"min_actions", min_actions},
            {"max_actions", max_actions},
            {"mean_segment_length", mean_segment_length},
            {"segment_jitter", segment_jitter},
            {"prototypes_per_action", prototypes_per_action},
            {"pose_pool_size", pose_pool_size},
            {"prototype_spread", prototype_spread},
            {"pose_noise", pose_noise},
            {"feature_noise", feature_noise},
            {"missing_pose_fraction", missing_pose_fraction},
            {"seed", seed}};
  }
};

struct SynthVideo {
  std::string video_id;
  std::string split;
  Matrix features;
  std::vector<std::optional<RawPose>> poses;
  Transcript transcript;
  std::vector<int> labels;
  std::vector<int> prototype_of_frame;
};

struct SynthDataset {
  SynthConfig config;
  std::vector<std::string> class_names;
  std::vector<SynthVideo> videos;
};

inline SynthDataset generate_synthetic_dataset(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t K = config.keypoints;
  const std::size_t P = config.prototypes_per_action;
  const std::size_t C = config.num_classes;

  SynthDataset ds;
  ds.config = config;
  for (std::size_t c = 0; c < C; ++c) ds.class_names.push_back("action_" + std::to_string(c));

  // Shared body, then per-(action, prototype) displacements of it.
  std::vector<Point2> body(K);
  for (auto& p : body) p = {gauss(rng), gauss(rng)};
  const std::size_t pool = config.pose_pool_size > 0 ? config.pose_pool_size : C * P;
  std::vector<std::vector<Point2>> pool_poses(pool, body);
  for (auto& proto : pool_poses)
    for (auto& p : proto) {
      p.x += config.prototype_spread * gauss(rng);
      p.y += config.prototype_spread * gauss(rng);
    }
  // pose_of_code[a * P + p]: pool entry shown by sub-action p of action a.
  std::vector<std::size_t> pose_of_code(C * P);
  std::iota(pose_of_code.begin(), pose_of_code.end(), std::size_t{0});
  if (config.pose_pool_size > 0) {
    std::vector<std::size_t> entries(pool);
    for (std::size_t a = 0; a < C; ++a) {
      std::iota(entries.begin(), entries.end(), std::size_t{0});
      std::shuffle(entries.begin(), entries.end(), rng);
      for (std::size_t p = 0; p < P; ++p) pose_of_code[a * P + p] = entries[p];
    }
  }

  // Fixed random linear image of the one-hot code.
  Matrix code_to_feature(config.feature_dim, C * P);
  for (double& v : code_to_feature.data) v = gauss(rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t total = config.num_train + config.num_test;
  for (std::size_t vi = 0; vi < total; ++vi) {
    SynthVideo v;
    const bool is_train = vi < config.num_train;
    v.split = is_train ? "train" : "test";
    v.video_id = (is_train ? "train_" : "test_") + std::to_string(is_train ? vi : vi - config.num_train);

    const std::size_t n = std::uniform_int_distribution<std::size_t>(config.min_actions, config.max_actions)(rng);
    std::uniform_int_distribution<int> pick_class(0, static_cast<int>(C) - 1);
    for (std::size_t i = 0; i < n; ++i) {
      int a = pick_class(rng);
      while (i > 0 && a == v.transcript.actions.back()) a = pick_class(rng);
      v.transcript.actions.push_back(a);
    }
    std::uniform_int_distribution<std::size_t> seg_len(config.mean_segment_length - config.segment_jitter,
                                                       config.mean_segment_length + config.segment_jitter);
    for (int a : v.transcript.actions) {
      const std::size_t len = std::max(seg_len(rng), P);
      for (std::size_t i = 0; i < len; ++i) {
        v.labels.push_back(a);
        v.prototype_of_frame.push_back(static_cast<int>(i * P / len));
      }
    }
    const std::size_t frames = v.labels.size();

    // Per-video camera: scale, in-plane rotation and offset in pixels.
    const double scale = 60.0 + 80.0 * unit(rng);
    const double theta = (unit(rng) - 0.5) * 0.8;
    const double tx = 200.0 + 400.0 * unit(rng);
    const double ty = 150.0 + 300.0 * unit(rng);
    const double cs = std::cos(theta), sn = std::sin(theta);

    v.features = Matrix(frames, config.feature_dim);
    v.poses.resize(frames);
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t code = static_cast<std::size_t>(v.labels[t]) * P + static_cast<std::size_t>(v.prototype_of_frame[t]);
      for (std::size_t f = 0; f < config.feature_dim; ++f)
        v.features(t, f) = code_to_feature(f, code) + config.feature_noise * gauss(rng);
      RawPose pose;
      pose.head_index = 0;
      for (std::size_t k = 0; k < K; ++k) {
        const auto& proto = pool_poses[pose_of_code[code]];
        const double bx = proto[k].x + config.pose_noise * gauss(rng);
        const double by = proto[k].y + config.pose_noise * gauss(rng);
        pose.keypoints.push_back({tx + scale * (cs * bx - sn * by), ty + scale * (sn * bx + cs * by)});
      }
      const bool missing = unit(rng) < config.missing_pose_fraction;
      if (!missing) v.poses[t] = std::move(pose);
    }
    ds.videos.push_back(std::move(v));
  }
  return ds;
}

/// Writes the dataset tree and its manifest.json under out_dir.
inline DatasetManifest write_dataset(const SynthDataset& ds, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(Errc::IoError, out_dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.root = out_dir;
  m.keypoints = ds.config.keypoints;
  m.feature_dim = ds.config.feature_dim;
  m.num_classes = ds.config.num_classes;
  m.head_index = 0;
  m.class_names = ds.class_names;
  for (const auto& v : ds.videos) {
    VideoEntry e{v.video_id,
                 v.split,
                 "features/" + v.video_id + ".bin",
                 "poses/" + v.video_id + ".csv",
                 "transcripts/" + v.video_id + ".txt",
                 "labels/" + v.video_id + ".txt"};
    write_file(out_dir / e.feature_file, encode_features(v.features));
    write_file(out_dir / e.pose_file, encode_poses(v.poses, ds.config.keypoints));
    write_file(out_dir / e.transcript_file, encode_name_lines(v.transcript.actions, ds.class_names));
    write_file(out_dir / *e.label_file, encode_name_lines(v.labels, ds.class_names));
    m.videos.push_back(std::move(e));
  }
  write_file(out_dir / "manifest.json", manifest_to_json(m, {{"synth_config", ds.config.to_json()}}).dump(2) + "\n");
  return m;
}

inline DatasetManifest generate_synthetic(const SynthConfig& config, const fs::path& out_dir) {
  return write_dataset(generate_synthetic_dataset(config), out_dir);
}

// ---------------------------------------------------------------------------
// Checkpoints: 8-byte magic, u64 header length, JSON header, float32 LE data
// in header order.

inline std::string_view to_string(HeadInput h) {
  return h == HeadInput::SharedProjection ? "projected" : "features";
}

inline std::string encode_checkpoint(const Model& model) {
  json tensors = json::array();
  for (const auto& t : model.tensors()) tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  const json header{{"format_version", kFormatVersion},
                    {"input_dim", model.encoder.input_dim},
                    {"hidden", model.encoder.hidden},
                    {"embed_dim", model.encoder.embed_dim},
                    {"feature_dim", model.projection.input_dim()},
                    {"num_classes", model.head.num_classes()},
                    {"dropout_rate", model.encoder.dropout_rate},
                    {"head_input", to_string(model.head_input)},
                    {"tensors", tensors}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u64(out, h.size());
  out += h;
  for (const auto& t : model.tensors())
    for (double v : t.values) detail::put_f32(out, v);
  return out;
}

inline Model decode_checkpoint(std::string_view bytes, const std::string& origin) {
  require(bytes.size() >= 16 && std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()),
          Errc::ParseError, origin + ": not a checkpoint");
  const std::uint64_t hlen = detail::get_u64(bytes, 8);
  require(16 + hlen <= bytes.size(), Errc::ParseError, origin + ": truncated header");
  json header;
  Model m;
  try {
    header = json::parse(bytes.substr(16, hlen));
    require(header.at("format_version").get<std::string>() == kFormatVersion, Errc::ParseError,
            origin + ": unsupported checkpoint version");
    const auto head_input = header.at("head_input").get<std::string>();
    require(head_input == "projected" || head_input == "features", Errc::ParseError, origin + ": bad head_input");
    m.head_input = head_input == "projected" ? HeadInput::SharedProjection : HeadInput::RawFeatures;
    const auto embed = header.at("embed_dim").get<std::size_t>();
    const auto features = header.at("feature_dim").get<std::size_t>();
    m.encoder = EncoderParams::zeros(header.at("input_dim").get<std::size_t>(), header.at("hidden").get<std::size_t>(),
                                     embed, header.at("dropout_rate").get<double>());
    m.projection = ProjectionParams::zeros(features, embed);
    m.head = ClassifierHead::zeros(m.head_input == HeadInput::SharedProjection ? embed : features,
                                   header.at("num_classes").get<std::size_t>());
  } catch (const json::exception& e) {
    fail(Errc::ParseError, origin + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::ParseError) throw;
    fail(Errc::ParseError, origin + ": " + e.what());
  }
  auto tensors = m.tensors();
  std::size_t at = 16 + hlen;
  try {
    const auto& listed = header.at("tensors");
    require(listed.is_array() && listed.size() == tensors.size(), Errc::ParseError, origin + ": tensor count mismatch");
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      require(listed[k].value("name", "") == tensors[k].name &&
                  listed[k].value("shape", std::vector<std::size_t>{}) == tensors[k].shape,
              Errc::ParseError, origin + ": unexpected tensor " + listed[k].dump());
      require(at + 4 * tensors[k].values.size() <= bytes.size(), Errc::ParseError, origin + ": truncated data");
      for (double& v : tensors[k].values) {
        v = detail::get_f32(bytes, at);
        at += 4;
      }
    }
  } catch (const json::exception& e) {
    fail(Errc::ParseError, origin + ": " + e.what());
  }
  require(at == bytes.size(), Errc::ParseError, origin + ": trailing bytes");
  return m;
}

inline void save_checkpoint(const Model& model, const fs::path& path) { write_file(path, encode_checkpoint(model)); }

inline Model load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) fail(Errc::IoError, path.string() + ": checkpoint not found");
  return decode_checkpoint(read_file(path), path.string());
}

/// One JSON object per line for the training run log.
inline std::string run_log_line(const IterationLog& entry) {
  const json j{{"iteration", entry.iteration},      {"video_id", entry.video_id},
               {"l_i2p", entry.report.l_i2p},       {"l_p2i", entry.report.l_p2i},
               {"l_con", entry.report.l_con},       {"l_segment", entry.report.l_segment},
               {"l_final", entry.report.l_final}};
  return j.dump() + "\n";
}

inline std::string encode_labels(const std::vector<int>& labels, const std::vector<std::string>& names) {
  return encode_name_lines(labels, names);
}

}  // namespace posecl

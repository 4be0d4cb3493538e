// Copyright 2026 The seg4d Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seg4d/class_table.hpp"
#include "seg4d/dataset_io.hpp"
#include "seg4d/fusion.hpp"
#include "seg4d/instance_labels.hpp"
#include "seg4d/metrics.hpp"
#include "seg4d/motion_encoding.hpp"
#include "seg4d/predictor.hpp"
#include "seg4d/refinement.hpp"
#include "seg4d/synth.hpp"

namespace seg4d {

/// Failure inside one pipeline stage of one frame.
class StageError : public Error {
 public:
  StageError(std::string stage, std::size_t frame, const std::string& what)
      : Error("frame " + std::to_string(frame) + ", stage '" + stage + "': " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

enum class InstanceSource { kLabels, kFile };
enum class PredictorKind { kHeuristic, kOracle, kRandom, kExternal };
enum class FusionMode { kManual, kMsfm, kBoth };

struct PipelineConfig {
  EncoderParams encoder;
  ClassTable classes = ClassTable::semantic_kitti();
  PoseConvention pose_convention = PoseConvention::kCameraFrame;
  InstanceConfig clustering;
  InstanceSource instance_source = InstanceSource::kLabels;
  std::string instance_file;
  PredictorKind predictor = PredictorKind::kHeuristic;
  double residual_threshold = 0.3;
  bool semantic_from_labels = true;
  std::string external_command;
  FusionMode fusion = FusionMode::kBoth;
  std::string fusion_weights;  // empty: seeded random weights
  std::size_t fusion_channels = 32;
  std::uint64_t seed = 0;
  RefinementParams refinement;
  std::optional<ClassMergeTable> merge;
  std::size_t workers = 1;

  ClassMergeTable merge_table() const { return merge ? *merge : ClassMergeTable::from_class_table(classes); }

  void validate() const {
    encoder.validate();
    refinement.validate();
    if (!(clustering.radius > 0.0)) throw ContractError("config: clustering radius must be positive");
    if (!(residual_threshold > 0.0)) throw ContractError("config: residual threshold must be positive");
    if (fusion_channels == 0) throw ContractError("config: fusion channel count must be positive");
    if (workers == 0) throw ContractError("config: workers must be at least 1");
    if (instance_source == InstanceSource::kFile && instance_file.empty()) {
      throw ContractError("config: instance source 'file' needs instances.file");
    }
    if (predictor == PredictorKind::kExternal && external_command.empty()) {
      throw ContractError("config: external predictor needs predictor.command");
    }
    if (merge && merge->size() != classes.semantic_count()) throw ContractError("config: merge table size mismatch");
  }

  /// Relative paths inside the document resolve against `base`.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = ".") {
    PipelineConfig c;
    auto path_of = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? p : (base / p).string(); };
    auto range = [](const nlohmann::json& a, double& lo, double& hi) {
      if (!a.is_array() || a.size() != 2) throw ParseError("config: ranges must be [min, max]");
      lo = a[0].get<double>();
      hi = a[1].get<double>();
    };
    try {
      if (j.contains("class_table")) c.classes = ClassTable::load(path_of(j["class_table"].get<std::string>()));
      if (j.contains("encoder")) {
        const auto& e = j["encoder"];
        if (e.contains("x")) range(e["x"], c.encoder.x_min, c.encoder.x_max);
        if (e.contains("y")) range(e["y"], c.encoder.y_min, c.encoder.y_max);
        if (e.contains("z")) range(e["z"], c.encoder.z_min, c.encoder.z_max);
        c.encoder.resolution = e.value("resolution", c.encoder.resolution);
        c.encoder.window = e.value("window", c.encoder.window);
      }
      if (j.contains("pose_convention")) {
        const auto s = j["pose_convention"].get<std::string>();
        if (s == "camera") c.pose_convention = PoseConvention::kCameraFrame;
        else if (s == "lidar") c.pose_convention = PoseConvention::kLidarFrame;
        else throw ParseError("config: pose_convention must be 'camera' or 'lidar'");
      }
      if (j.contains("clustering")) {
        const auto& k = j["clustering"];
        c.clustering.radius = k.value("radius", c.clustering.radius);
        c.clustering.min_points_vehicle = k.value("min_points_vehicle", c.clustering.min_points_vehicle);
        c.clustering.min_points_small = k.value("min_points_small", c.clustering.min_points_small);
      }
      if (j.contains("instances")) {
        const auto& k = j["instances"];
        c.instance_source = parse_instance_source(k.value("source", std::string("labels")));
        if (k.contains("file")) c.instance_file = path_of(k["file"].get<std::string>());
      }
      if (j.contains("predictor")) {
        const auto& k = j["predictor"];
        const auto type = k.value("type", std::string("heuristic"));
        if (type == "heuristic") c.predictor = PredictorKind::kHeuristic;
        else if (type == "oracle") c.predictor = PredictorKind::kOracle;
        else if (type == "random") c.predictor = PredictorKind::kRandom;
        else if (type == "external") c.predictor = PredictorKind::kExternal;
        else throw ParseError("config: unknown predictor type '" + type + "'");
        c.residual_threshold = k.value("threshold", c.residual_threshold);
        c.semantic_from_labels = k.value("semantic_from_labels", c.semantic_from_labels);
        c.external_command = k.value("command", c.external_command);
      }
      if (j.contains("fusion")) {
        const auto& k = j["fusion"];
        if (k.contains("mode")) c.fusion = parse_fusion_mode(k["mode"].get<std::string>());
        if (k.contains("weights")) c.fusion_weights = path_of(k["weights"].get<std::string>());
        c.fusion_channels = k.value("channels", c.fusion_channels);
      }
      c.seed = j.value("seed", c.seed);
      if (j.contains("refinement")) {
        const auto& k = j["refinement"];
        auto& r = c.refinement;
        r.vote_fraction = k.value("vote_fraction", r.vote_fraction);
        r.relaxed_fraction = k.value("relaxed_fraction", r.relaxed_fraction);
        r.dynamic_scene_min_vehicles = k.value("dynamic_scene_min_vehicles", r.dynamic_scene_min_vehicles);
        r.confirm_k = k.value("confirm_k", r.confirm_k);
        r.history_len = k.value("history_len", r.history_len);
        r.symmetric_static = k.value("symmetric_static", r.symmetric_static);
        r.association_radius = k.value("association_radius", r.association_radius);
      }
      if (j.contains("merge_table")) {
        std::ifstream in(path_of(j["merge_table"].get<std::string>()));
        if (!in) throw Error("cannot open merge table");
        c.merge = ClassMergeTable::parse(in, c.classes);
      }
      c.workers = j.value("workers", c.workers);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("config: ") + e.what());
    }
    return c;
  }

  static PipelineConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ": " + e.what());
    }
    return from_json(j, std::filesystem::path(path).parent_path());
  }

  static InstanceSource parse_instance_source(const std::string& s) {
    if (s == "labels") return InstanceSource::kLabels;
    if (s == "file") return InstanceSource::kFile;
    throw ParseError("instance source must be 'labels' or 'file'");
  }

  static FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "manual") return FusionMode::kManual;
    if (s == "msfm") return FusionMode::kMsfm;
    if (s == "both") return FusionMode::kBoth;
    throw ParseError("fusion mode must be 'manual', 'msfm' or 'both'");
  }
};

/// Everything one frame needs from its data source.
struct FrameInput {
  ScanSequence window;           // current scan first
  std::optional<LabelSet> labels;  // ground truth of the current scan
  Pose pose;                     // LiDAR-to-world of the current scan
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::size_t size() const = 0;
  virtual FrameInput load(std::size_t frame, std::size_t window) const = 0;
};

class DirectorySource : public FrameSource {
 public:
  explicit DirectorySource(const std::filesystem::path& root, PoseConvention convention = PoseConvention::kCameraFrame)
      : dir_(root, convention) {}

  std::size_t size() const override { return dir_.size(); }

  FrameInput load(std::size_t frame, std::size_t window) const override {
    FrameInput in;
    in.window = dir_.window(frame, window, false);
    if (dir_.has_labels(frame)) in.labels = dir_.labels(frame, in.window.scans[0].size());
    in.pose = dir_.world_poses().at(frame);
    return in;
  }

  const SequenceDir& directory() const { return dir_; }

 private:
  SequenceDir dir_;
};

class SynthSource : public FrameSource {
 public:
  SynthSource(SynthSpec spec, ClassTable table) : spec_(std::move(spec)), table_(std::move(table)) {}

  std::size_t size() const override { return spec_.frames; }

  FrameInput load(std::size_t frame, std::size_t window) const override {
    FrameInput in;
    in.window = synth_window(spec_, table_, frame, window);
    in.labels = in.window.labels.front();
    in.pose = synth_ego_pose(spec_, frame);
    return in;
  }

 private:
  SynthSpec spec_;
  ClassTable table_;
};

/// A directory in KITTI layout, or a synthetic scene description (.json).
inline std::unique_ptr<FrameSource> open_source(const std::filesystem::path& path, const PipelineConfig& config) {
  if (std::filesystem::is_regular_file(path) && path.extension() == ".json") {
    return std::make_unique<SynthSource>(load_synth_spec(path.string(), config.classes), config.classes);
  }
  return std::make_unique<DirectorySource>(path, config.pose_convention);
}

struct StageTiming {
  std::string stage;
  double ms = 0.0;
};

struct FrameResult {
  std::size_t frame = 0;
  PointCloud cloud;
  MotionLabels motion_raw;  // argmax of the motion head
  MotionLabels motion;      // after instance refinement
  ClassLabels semantic;
  ClassLabels multiscan_manual;
  ClassLabels multiscan_msfm;
  InstanceSet instances;
  RefineResult refinement;
  std::vector<StageTiming> timings;

  std::size_t size() const { return cloud.size(); }

  double total_ms() const {
    double t = 0.0;
    for (const auto& s : timings) t += s.ms;
    return t;
  }
};

/// Confusion matrices accumulated over a run; id 0 is ignored everywhere.
struct PipelineMetrics {
  explicit PipelineMetrics(const ClassTable& t)
      : motion_raw(kMotionClasses, 0),
        motion(kMotionClasses, 0),
        semantic(t.semantic_count(), 0),
        manual(t.multiscan_count(), 0),
        msfm(t.multiscan_count(), 0) {}

  ConfusionMatrix motion_raw;
  ConfusionMatrix motion;
  ConfusionMatrix semantic;
  ConfusionMatrix manual;
  ConfusionMatrix msfm;
  std::size_t frames_with_truth = 0;
};

struct GroundTruth {
  ClassLabels semantic;
  MotionLabels motion;
  ClassLabels multiscan;
};

inline GroundTruth decode_ground_truth(const LabelSet& labels, const ClassTable& table, const ClassMergeTable& merge) {
  GroundTruth gt;
  gt.semantic.resize(labels.size());
  gt.motion.resize(labels.size());
  gt.multiscan.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto m = table.decode(labels.semantic[i]);
    gt.semantic[i] = m.class_id;
    gt.motion[i] = to_id(m.motion);
    gt.multiscan[i] = merge.map(m.class_id, m.motion);
  }
  return gt;
}

namespace detail {

/// Runs `f`, appends its wall time to `r`, and tags any exception with `stage`.
template <typename F>
auto timed(FrameResult& r, const char* stage, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  auto record = [&] {
    r.timings.push_back({stage, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count()});
  };
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      record();
    } else {
      auto v = f();
      record();
      return v;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, r.frame, e.what());
  }
}

}  // namespace detail

/// Loads the configured weight file, or draws seeded random weights.
inline FusionWeights<double> fusion_weights_for(const PipelineConfig& config) {
  const auto c = static_cast<Eigen::Index>(config.classes.semantic_count());
  const auto cm = static_cast<Eigen::Index>(config.classes.multiscan_count());
  if (config.fusion_weights.empty()) {
    return FusionWeights<double>::random(config.seed, c, cm, static_cast<Eigen::Index>(config.fusion_channels));
  }
  auto w = load_fusion_weights(config.fusion_weights);
  if (w.semantic_classes() != c || w.multiscan_classes() != cm) {
    throw ContractError("fusion weights were trained for a different class table");
  }
  return w;
}

/// Output of the parallel half of one frame (load through logits_to_labels).
struct FramePrediction {
  FrameResult result;
  PredictorOutput logits;
  std::optional<GroundTruth> truth;
  Pose pose;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config) : config_(std::move(config)), merge_(config_.merge_table()) {
    config_.validate();
    weights_ = fusion_weights_for(config_);
    weights_f_ = weights_.cast<float>();
    if (config_.instance_source == InstanceSource::kFile) {
      std::ifstream in(config_.instance_file);
      if (!in) throw Error("cannot open instance file " + config_.instance_file);
      external_instances_ = read_instances(in);
    }
  }

  const PipelineConfig& config() const { return config_; }
  const ClassMergeTable& merge_table() const { return merge_; }

  /// Clears metrics and refinement history.
  void reset() {
    metrics_ = std::make_unique<PipelineMetrics>(config_.classes);
    state_ = SceneState{};
  }
  const PipelineMetrics& metrics() const { return *metrics_; }
  const FusionWeights<double>& weights() const { return weights_; }

  /// Runs every frame of `source`. Frames are encoded and predicted on
  /// `config.workers` threads; refinement and fusion consume them in order.
  /// `sink` (optional) receives each finished frame.
  std::vector<FrameResult> run(const FrameSource& source,
                               const std::function<void(const FrameResult&)>& sink = {}, bool keep = true) {
    reset();
    std::vector<FrameResult> results;
    const std::size_t n = source.size();
    const std::size_t chunk = std::max<std::size_t>(1, config_.workers * 2);
    for (std::size_t begin = 0; begin < n; begin += chunk) {
      const std::size_t end = std::min(n, begin + chunk);
      std::vector<FramePrediction> partial(end - begin);
      std::vector<std::exception_ptr> errors(end - begin);
      std::atomic<std::size_t> next{begin};
      auto worker = [&] {
        for (std::size_t f = next++; f < end; f = next++) {
          try {
            partial[f - begin] = predict_frame(source, f);
          } catch (...) {
            errors[f - begin] = std::current_exception();
          }
        }
      };
      if (config_.workers == 1) {
        worker();
      } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < std::min(config_.workers, end - begin); ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
      }
      for (std::size_t f = begin; f < end; ++f) {
        if (errors[f - begin]) std::rethrow_exception(errors[f - begin]);
        auto result = finish_frame(std::move(partial[f - begin]));
        if (sink) sink(result);
        if (keep) results.push_back(std::move(result));
      }
    }
    return results;
  }

  /// Load, encode, instances, predict and argmax for one frame. Thread-safe.
  FramePrediction predict_frame(const FrameSource& source, std::size_t frame) const {
    FramePrediction p;
    auto& r = p.result;
    r.frame = frame;
    auto input = detail::timed(r, "load", [&] { return source.load(frame, config_.encoder.window); });
    p.pose = input.pose;
    if (input.labels) {
      p.truth = detail::timed(r, "truth", [&] { return decode_ground_truth(*input.labels, config_.classes, merge_); });
    }
    auto encoded = detail::timed(r, "encode", [&] { return encode_motion_full(input.window, config_.encoder); });
    r.cloud = std::move(input.window.scans[0]);

    r.instances = detail::timed(r, "instances", [&] {
      if (config_.instance_source == InstanceSource::kFile) {
        auto it = external_instances_.find(frame);
        InstanceSet s;
        s.frame = frame;
        if (it != external_instances_.end()) s = it->second;
        return s;
      }
      if (!p.truth) throw Error("instance source 'labels' needs ground-truth labels");
      return generate_instances(r.cloud, p.truth->semantic, config_.classes, config_.clustering, frame);
    });

    p.logits = detail::timed(r, "predict", [&] {
      const auto c = config_.classes.semantic_count();
      std::unique_ptr<Predictor> predictor;
      switch (config_.predictor) {
        case PredictorKind::kHeuristic: {
          std::optional<ClassLabels> source_labels;
          if (config_.semantic_from_labels && p.truth) source_labels = p.truth->semantic;
          predictor = std::make_unique<HeuristicPredictor>(config_.residual_threshold, c, std::move(source_labels));
          break;
        }
        case PredictorKind::kOracle:
          if (!p.truth) throw Error("oracle predictor needs ground-truth labels");
          predictor = std::make_unique<OraclePredictor>(p.truth->motion, p.truth->semantic, c);
          break;
        case PredictorKind::kRandom:
          predictor = std::make_unique<RandomPredictor>(config_.seed + frame, c);
          break;
        case PredictorKind::kExternal:
          predictor = std::make_unique<ExternalPredictor>(
              config_.external_command,
              std::filesystem::temp_directory_path() / ("seg4d-predict-" + std::to_string(frame)), c);
          break;
      }
      auto out = predictor->predict(encoded.features, r.instances);
      check_predictor_output(out, r.cloud.size(), c);
      return out;
    });
    detail::timed(r, "labels", [&] {
      r.motion_raw = motion_labels_from_logits(p.logits.motion);
      r.semantic = logits_to_labels(p.logits.semantic);
    });
    return p;
  }

  /// Refinement, fusion and metrics. Frames must arrive in order.
  FrameResult finish_frame(FramePrediction p) {
    auto& r = p.result;
    detail::timed(r, "refine", [&] {
      r.instances = associate_instances(state_, r.instances, p.pose, config_.refinement);
      r.refinement = refine(r.cloud, r.instances, r.motion_raw, state_, config_.refinement, config_.classes);
      r.motion = r.refinement.labels;
    });
    if (config_.fusion != FusionMode::kMsfm) {
      detail::timed(r, "fuse_manual", [&] { r.multiscan_manual = manual_fuse(r.semantic, r.motion, merge_); });
    }
    if (config_.fusion != FusionMode::kManual && r.cloud.size() > 0) {
      detail::timed(r, "fuse_msfm", [&] {
        const RowMatrix<float> s = p.logits.semantic.cast<float>();
        const RowMatrix<float> m = p.logits.motion.cast<float>();
        r.multiscan_msfm = msfm_forward(s, m, weights_f_).labels;
      });
    }
    if (p.truth) {
      detail::timed(r, "metrics", [&] {
        metrics_->motion_raw.accumulate(p.truth->motion, r.motion_raw);
        metrics_->motion.accumulate(p.truth->motion, r.motion);
        metrics_->semantic.accumulate(p.truth->semantic, r.semantic);
        if (!r.multiscan_manual.empty()) metrics_->manual.accumulate(p.truth->multiscan, r.multiscan_manual);
        if (!r.multiscan_msfm.empty()) metrics_->msfm.accumulate(p.truth->multiscan, r.multiscan_msfm);
        ++metrics_->frames_with_truth;
      });
    }
    return std::move(r);
  }

 private:
  PipelineConfig config_;
  ClassMergeTable merge_;
  FusionWeights<double> weights_;
  FusionWeights<float> weights_f_;
  std::map<std::size_t, InstanceSet> external_instances_;
  std::unique_ptr<PipelineMetrics> metrics_;
  SceneState state_;
};

inline std::vector<std::string> motion_class_names() { return {"unlabeled", "static", "moving"}; }

inline std::vector<std::string> semantic_names(const ClassTable& t) {
  std::vector<std::string> out;
  for (std::uint16_t i = 0; i < t.semantic_count(); ++i) out.push_back(t.info(i).name);
  return out;
}

inline std::vector<std::string> multiscan_names(const ClassTable& t) {
  std::vector<std::string> out;
  for (std::uint16_t i = 0; i < t.multiscan_count(); ++i) out.push_back(t.multiscan_name(i));
  return out;
}

template <typename Label>
void write_class_labels(const std::vector<Label>& labels, const std::string& path) {
  std::vector<std::uint32_t> records(labels.begin(), labels.end());
  write_label_records(records, path);
}

/// Per-frame label files under `out`: motion/, motion_raw/, semantic/,
/// multiscan_manual/, multiscan_msfm/ (one uint32 class id per point).
inline void write_frame_result(const FrameResult& r, const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  auto put = [&](const char* dir, const auto& labels) {
    if (labels.empty() && r.size() > 0) return;
    fs::create_directories(out / dir);
    write_class_labels(labels, (out / dir / frame_filename(r.frame, ".label")).string());
  };
  put("motion", r.motion);
  put("motion_raw", r.motion_raw);
  put("semantic", r.semantic);
  put("multiscan_manual", r.multiscan_manual);
  put("multiscan_msfm", r.multiscan_msfm);
}

inline void write_timing_line(std::ostream& out, const FrameResult& r) {
  out << r.frame;
  for (const auto& s : r.timings) out << ' ' << s.stage << '=' << s.ms;
  out << " total=" << r.total_ms() << '\n';
}

inline void write_pipeline_report(std::ostream& out, const PipelineMetrics& m, const ClassTable& t,
                                  ReportFormat format) {
  write_metrics_report(out, m.motion, motion_class_names(), "mos", format);
  write_metrics_report(out, m.motion_raw, motion_class_names(), "mos_raw", format);
  write_metrics_report(out, m.semantic, semantic_names(t), "single_scan", format);
  if (m.manual.total() > 0) write_metrics_report(out, m.manual, multiscan_names(t), "multi_scan_manual", format);
  if (m.msfm.total() > 0) write_metrics_report(out, m.msfm, multiscan_names(t), "multi_scan_msfm", format);
}

}  // namespace seg4d

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

// seg4d command-line front end. Every subcommand loads and validates the
// configuration before it reads any data.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seg4d/pipeline.hpp"
#include "seg4d/ply.hpp"

namespace fs = std::filesystem;
using namespace seg4d;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string instances;
  std::string instance_file;
  std::string fusion;
  std::string report = "text";
  std::string pose_convention;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON pipeline configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Seed for random fusion weights and the random predictor");
  cmd->add_option("--workers", o.workers, "Threads for the per-frame stages (refinement always runs in order)");
  cmd->add_option("--instances", o.instances, "Instance source")->check(CLI::IsMember({"labels", "file"}));
  cmd->add_option("--instance-file", o.instance_file, "Instance file when --instances file");
  cmd->add_option("--fusion", o.fusion, "Multi-scan fusion variant")->check(CLI::IsMember({"manual", "msfm", "both"}));
  cmd->add_option("--report", o.report, "Report format")->check(CLI::IsMember({"text", "kv"}));
  cmd->add_option("--poses", o.pose_convention, "Frame of poses.txt")->check(CLI::IsMember({"camera", "lidar"}));
}

PipelineConfig resolve_config(const CommonOptions& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : PipelineConfig::load(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (!o.instances.empty()) c.instance_source = PipelineConfig::parse_instance_source(o.instances);
  if (!o.instance_file.empty()) c.instance_file = o.instance_file;
  if (!o.fusion.empty()) c.fusion = PipelineConfig::parse_fusion_mode(o.fusion);
  if (o.pose_convention == "lidar") c.pose_convention = PoseConvention::kLidarFrame;
  if (o.pose_convention == "camera") c.pose_convention = PoseConvention::kCameraFrame;
  c.validate();
  return c;
}

ReportFormat report_format(const CommonOptions& o) {
  return o.report == "kv" ? ReportFormat::kKeyValue : ReportFormat::kText;
}

/// Frames [first, first + count) clipped to the source; count 0 means all.
std::vector<std::size_t> frame_range(const FrameSource& source, std::optional<std::size_t> frame) {
  std::vector<std::size_t> out;
  if (frame) {
    if (*frame >= source.size()) throw Error("frame " + std::to_string(*frame) + " is outside the sequence");
    out.push_back(*frame);
  } else {
    for (std::size_t f = 0; f < source.size(); ++f) out.push_back(f);
  }
  return out;
}

/// Sorted files with extension `ext` under `dir`.
std::vector<fs::path> list_files(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw Error(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <typename Label>
std::vector<Label> read_class_labels(const std::string& path, std::size_t expected) {
  const auto records = read_label_records(path);
  if (records.size() != expected) {
    throw ParseError(path + ": " + std::to_string(records.size()) + " labels for " + std::to_string(expected) +
                     " points");
  }
  return std::vector<Label>(records.begin(), records.end());
}

GroundTruth truth_for(const FrameInput& in, const PipelineConfig& c, std::size_t frame) {
  if (!in.labels) throw Error("frame " + std::to_string(frame) + " has no ground-truth labels");
  return decode_ground_truth(*in.labels, c.classes, c.merge_table());
}

int cmd_synth(const PipelineConfig& c, const std::string& spec_path, const std::string& out) {
  const auto spec = load_synth_spec(spec_path, c.classes);
  write_synth_sequence(spec, c.classes, out);
  std::cout << "wrote " << spec.frames << " frames to " << out << '\n';
  return 0;
}

int cmd_encode(const PipelineConfig& c, const std::string& seq, const fs::path& out, std::optional<std::size_t> frame,
               bool images) {
  const auto source = open_source(seq, c);
  fs::create_directories(out / "features");
  for (std::size_t f : frame_range(*source, frame)) {
    const auto in = source->load(f, c.encoder.window);
    const auto enc = encode_motion_full(in.window, c.encoder);
    export_features(enc.features, (out / "features" / frame_filename(f, ".mat")).string());
    if (images) {
      fs::create_directories(out / "bev");
      export_bev_pgm(enc.bev[0], c.encoder, (out / "bev" / frame_filename(f, ".pgm")).string());
      for (std::size_t j = 0; j < enc.residuals.depth; ++j) {
        const auto dir = out / ("residual_" + std::to_string(j + 1));
        fs::create_directories(dir);
        export_residual_pgm(enc.residuals, j, c.encoder, (dir / frame_filename(f, ".pgm")).string());
      }
    }
  }
  return 0;
}

int cmd_gen_instances(const PipelineConfig& c, const std::string& seq, const std::string& out) {
  const auto source = open_source(seq, c);
  std::ofstream file(out);
  if (!file) throw Error("cannot write " + out);
  for (std::size_t f = 0; f < source->size(); ++f) {
    const auto in = source->load(f, 1);
    const auto gt = truth_for(in, c, f);
    write_instances(file, generate_instances(in.window.scans[0], gt.semantic, c.classes, c.clustering, f));
  }
  return 0;
}

int cmd_predict(const PipelineConfig& c, const std::string& seq, const fs::path& out) {
  const auto source = open_source(seq, c);
  Pipeline pipeline(c);
  fs::create_directories(out / "logits");
  std::ofstream inst(out / "instances.txt");
  for (std::size_t f = 0; f < source->size(); ++f) {
    const auto p = pipeline.predict_frame(*source, f);
    write_logits((out / "logits" / frame_filename(f, ".mat")).string(), p.logits);
    write_instances(inst, p.result.instances);
  }
  return 0;
}

int cmd_fuse(const PipelineConfig& c, const fs::path& logits_dir, const std::string& motion_dir, const fs::path& out) {
  const auto merge = c.merge_table();
  const auto weights = fusion_weights_for(c).cast<float>();
  for (const auto& path : list_files(logits_dir, ".mat")) {
    const auto name = path.stem().string() + ".label";
    const auto logits = read_logits(path.string());
    check_predictor_output(logits, static_cast<std::size_t>(logits.motion.rows()), c.classes.semantic_count());
    const auto semantic = logits_to_labels(logits.semantic);
    if (c.fusion != FusionMode::kMsfm) {
      const auto motion = motion_dir.empty()
                              ? motion_labels_from_logits(logits.motion)
                              : read_class_labels<std::uint8_t>((fs::path(motion_dir) / name).string(), semantic.size());
      fs::create_directories(out / "multiscan_manual");
      write_class_labels(manual_fuse(semantic, motion, merge), (out / "multiscan_manual" / name).string());
    }
    if (c.fusion != FusionMode::kManual && !semantic.empty()) {
      const RowMatrix<float> s = logits.semantic.cast<float>();
      const RowMatrix<float> m = logits.motion.cast<float>();
      fs::create_directories(out / "multiscan_msfm");
      write_class_labels(msfm_forward(s, m, weights).labels, (out / "multiscan_msfm" / name).string());
    }
  }
  return 0;
}

int cmd_refine(const PipelineConfig& c, const std::string& seq, const fs::path& motion_dir, const fs::path& out) {
  const auto source = open_source(seq, c);
  std::map<std::size_t, InstanceSet> external;
  if (c.instance_source == InstanceSource::kFile) {
    std::ifstream in(c.instance_file);
    if (!in) throw Error("cannot open instance file " + c.instance_file);
    external = read_instances(in);
  }
  fs::create_directories(out / "motion");
  std::ofstream report(out / "refinement.txt");
  SceneState state;
  for (std::size_t f = 0; f < source->size(); ++f) {
    const auto in = source->load(f, 1);
    const auto& cloud = in.window.scans[0];
    const auto name = frame_filename(f, ".label");
    const auto motion = read_class_labels<std::uint8_t>((motion_dir / name).string(), cloud.size());
    InstanceSet instances;
    instances.frame = f;
    if (c.instance_source == InstanceSource::kFile) {
      if (auto it = external.find(f); it != external.end()) instances = it->second;
    } else {
      instances = generate_instances(cloud, truth_for(in, c, f).semantic, c.classes, c.clustering, f);
    }
    instances = associate_instances(state, instances, in.pose, c.refinement);
    const auto r = refine(cloud, instances, motion, state, c.refinement, c.classes);
    write_class_labels(r.labels, (out / "motion" / name).string());
    write_refinement_report(report, f, r, c.classes);
  }
  return 0;
}

int cmd_eval(const PipelineConfig& c, const std::string& seq, const fs::path& pred_dir, const std::string& task,
             ReportFormat format) {
  const auto source = open_source(seq, c);
  std::vector<std::string> names;
  if (task == "motion") names = motion_class_names();
  else if (task == "semantic") names = semantic_names(c.classes);
  else names = multiscan_names(c.classes);
  ConfusionMatrix cm(names.size(), 0);
  std::size_t frames = 0;
  for (std::size_t f = 0; f < source->size(); ++f) {
    const auto path = pred_dir / frame_filename(f, ".label");
    if (!fs::exists(path)) continue;
    const auto in = source->load(f, 1);
    const auto gt = truth_for(in, c, f);
    const auto pred = read_class_labels<std::uint16_t>(path.string(), in.window.scans[0].size());
    if (task == "motion") cm.accumulate(gt.motion, pred);
    else if (task == "semantic") cm.accumulate(gt.semantic, pred);
    else cm.accumulate(gt.multiscan, pred);
    ++frames;
  }
  if (frames == 0) throw Error("no prediction files found in " + pred_dir.string());
  write_metrics_report(std::cout, cm, names, task, format);
  return 0;
}

int cmd_run(const PipelineConfig& c, const std::string& seq, const fs::path& out, ReportFormat format) {
  const auto source = open_source(seq, c);
  Pipeline pipeline(c);
  fs::create_directories(out);
  std::ofstream timing(out / "timing.txt");
  std::ofstream refinement(out / "refinement.txt");
  timing << "# frame stage=ms ... total=ms\n";
  double total = 0.0;
  std::size_t points = 0;
  pipeline.run(
      *source,
      [&](const FrameResult& r) {
        write_frame_result(r, out);
        write_timing_line(timing, r);
        write_refinement_report(refinement, r.frame, r.refinement, c.classes);
        total += r.total_ms();
        points += r.size();
      },
      false);
  std::ofstream report(out / "report.txt");
  write_pipeline_report(report, pipeline.metrics(), c.classes, format);
  if (pipeline.metrics().frames_with_truth > 0) {
    write_pipeline_report(std::cout, pipeline.metrics(), c.classes, format);
  }
  std::cerr << "seg4d: " << source->size() << " frames, " << points << " points, " << total << " ms\n";
  return 0;
}

int cmd_export(const PipelineConfig& c, const std::string& seq, std::size_t frame, const std::string& labels_path,
               const std::string& task, const std::string& out) {
  const auto source = open_source(seq, c);
  frame_range(*source, frame);
  const auto in = source->load(frame, 1);
  const auto& cloud = in.window.scans[0];
  std::vector<std::uint16_t> labels;
  if (!labels_path.empty()) {
    labels = read_class_labels<std::uint16_t>(labels_path, cloud.size());
  } else {
    const auto gt = truth_for(in, c, frame);
    if (task == "motion") labels.assign(gt.motion.begin(), gt.motion.end());
    else if (task == "semantic") labels = gt.semantic;
    else labels = gt.multiscan;
  }
  std::size_t classes = c.classes.multiscan_count();
  for (auto l : labels) classes = std::max<std::size_t>(classes, std::size_t{l} + 1);
  export_ply(cloud, labels, default_palette(classes), out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seg4d: motion-aware 4D LiDAR segmentation toolkit"};
  app.require_subcommand(1);
  CommonOptions common;
  std::string sequence, out, spec, motion_dir, logits_dir, pred_dir, labels_path, task = "motion";
  std::optional<std::size_t> frame;
  bool images = false;
  int status = 0;

  auto wrap = [&](auto body) {
    return [&, body] { status = body(resolve_config(common)); };
  };

  auto* synth = app.add_subcommand("synth", "Write a synthetic sequence in KITTI layout");
  add_common(synth, common);
  synth->add_option("--spec", spec, "Synthetic scene JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output sequence directory")->required();
  synth->callback(wrap([&](const PipelineConfig& c) { return cmd_synth(c, spec, out); }));

  auto* encode = app.add_subcommand("encode", "Motion features (and optional BEV images) per frame");
  add_common(encode, common);
  encode->add_option("--sequence", sequence, "Sequence directory or synthetic JSON")->required();
  encode->add_option("--out", out, "Output directory")->required();
  encode->add_option("--frame", frame, "Single frame to encode");
  encode->add_flag("--images", images, "Also write BEV and residual PGM images");
  encode->callback(wrap([&](const PipelineConfig& c) { return cmd_encode(c, sequence, out, frame, images); }));

  auto* gen = app.add_subcommand("gen-instances", "Boxes from ground-truth semantic labels");
  add_common(gen, common);
  gen->add_option("--sequence", sequence, "Sequence directory or synthetic JSON")->required();
  gen->add_option("--out", out, "Instance file")->required();
  gen->callback(wrap([&](const PipelineConfig& c) { return cmd_gen_instances(c, sequence, out); }));

  auto* predict = app.add_subcommand("predict", "Motion and semantic logits per frame");
  add_common(predict, common);
  predict->add_option("--sequence", sequence, "Sequence directory or synthetic JSON")->required();
  predict->add_option("--out", out, "Output directory")->required();
  predict->callback(wrap([&](const PipelineConfig& c) { return cmd_predict(c, sequence, out); }));

  auto* fuse = app.add_subcommand("fuse", "Multi-scan labels from logits");
  add_common(fuse, common);
  fuse->add_option("--logits", logits_dir, "Directory of logits matrices")->required()->check(CLI::ExistingDirectory);
  fuse->add_option("--motion", motion_dir, "Refined motion labels to use for manual fusion")
      ->check(CLI::ExistingDirectory);
  fuse->add_option("--out", out, "Output directory")->required();
  fuse->callback(wrap([&](const PipelineConfig& c) { return cmd_fuse(c, logits_dir, motion_dir, out); }));

  auto* refine_cmd = app.add_subcommand("refine", "Instance-level refinement of motion labels");
  add_common(refine_cmd, common);
  refine_cmd->add_option("--sequence", sequence, "Sequence directory or synthetic JSON")->required();
  refine_cmd->add_option("--motion", motion_dir, "Directory of motion label files")->required()
      ->check(CLI::ExistingDirectory);
  refine_cmd->add_option("--out", out, "Output directory")->required();
  refine_cmd->callback(wrap([&](const PipelineConfig& c) { return cmd_refine(c, sequence, motion_dir, out); }));

  auto* eval = app.add_subcommand("eval", "IoU report against ground truth");
  add_common(eval, common);
  eval->add_option("--sequence", sequence, "Sequence directory or synthetic JSON")->required();
  eval->add_option("--pred", pred_dir, "Directory of predicted label files")->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--task", task, "Label space")->check(CLI::IsMember({"motion", "semantic", "multiscan"}));
  eval->callback(
      wrap([&](const PipelineConfig& c) { return cmd_eval(c, sequence, pred_dir, task, report_format(common)); }));

  auto* run = app.add_subcommand("run", "Full pipeline over a sequence");
  add_common(run, common);
  run->add_option("--sequence", sequence, "Sequence directory or synthetic JSON")->required();
  run->add_option("--out", out, "Output directory")->required();
  run->callback(wrap([&](const PipelineConfig& c) { return cmd_run(c, sequence, out, report_format(common)); }));

  auto* exp = app.add_subcommand("export", "Colored PLY of one frame");
  add_common(exp, common);
  exp->add_option("--sequence", sequence, "Sequence directory or synthetic JSON")->required();
  exp->add_option("--frame", frame, "Frame index")->required();
  exp->add_option("--labels", labels_path, "Label file to color by (default: ground truth)");
  exp->add_option("--task", task, "Ground-truth label space")->check(CLI::IsMember({"motion", "semantic", "multiscan"}));
  exp->add_option("--out", out, "Output .ply")->required();
  exp->callback(
      wrap([&](const PipelineConfig& c) { return cmd_export(c, sequence, frame.value_or(0), labels_path, task, out); }));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const StageError& e) {
    std::cerr << "seg4d: error in " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    const auto used = app.get_subcommands();
    std::cerr << "seg4d " << (used.empty() ? std::string("config") : used.front()->get_name()) << ": " << e.what()
              << '\n';
    return 2;
  }
  return status;
}

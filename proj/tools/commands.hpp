#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "motionbev/checks.hpp"
#include "motionbev/error.hpp"
#include "motionbev/geometry.hpp"
#include "motionbev/ingest.hpp"
#include "motionbev/motion.hpp"
#include "motionbev/netcore.hpp"
#include "motionbev/objective.hpp"
#include "motionbev/synth.hpp"
#include "motionbev/toy_model.hpp"

// Command implementations behind the motionbev executable. Each returns the
// process exit code: 0 success, 1 check failure, 2 usage or input error
// (input errors surface as motionbev::Error and are mapped by the caller).

namespace motionbev::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public Error {
 public:
  using Error::Error;
};

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Writes to a sibling temp file and renames, so readers never see a
/// partial document.
inline void write_json_atomic(const json& doc, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing " + tmp.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline json read_json(const fs::path& path) {
  try {
    return json::parse(detail::read_text(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

struct RunManifest {
  std::string command;
  std::string config;
  json inputs = json::object();
  json outputs = json::object();
  std::uint64_t seed = 0;
  std::map<std::string, double> timing_ms;
  json extra = json::object();

  json to_json() const {
    json j = {{"command", command}, {"config", config},   {"inputs", inputs},
              {"outputs", outputs}, {"seed", seed},       {"timing_ms", timing_ms},
              {"version", kVersion}};
    for (const auto& [k, v] : extra.items()) j[k] = v;
    return j;
  }
};

inline PipelineConfig load_pipeline_config(const std::optional<fs::path>& path) {
  if (!path) return {};
  if (!fs::exists(*path)) throw UsageError("config file not found: " + path->string());
  auto cfg = load_config(*path);
  for (const auto& w : cfg.warnings) std::cerr << "warning: " << path->string() << ": " << w << '\n';
  return cfg;
}

inline std::string frame_name(std::int64_t frame, const char* ext) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%06lld%s", static_cast<long long>(frame), ext);
  return buf;
}

/// Files with the given extension, ordered by the frame number in the stem.
inline std::vector<fs::path> frame_files(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    const auto fa = frame_index_from_stem(a), fb = frame_index_from_stem(b);
    return fa != fb ? fa < fb : a.filename() < b.filename();
  });
  return out;
}

// ---------------------------------------------------------------------------
// featurize

struct FeaturizeOptions {
  fs::path scan_dir;
  fs::path pose_file;
  std::optional<fs::path> calib;
  std::optional<fs::path> config;
  fs::path out_dir;
  FeatureMode mode = FeatureMode::Complete;
  unsigned workers = 1;
  std::uint64_t seed = 0;
};

inline int cmd_featurize(const FeaturizeOptions& o, std::ostream& log = std::cout) {
  const auto t_start = Clock::now();
  const auto pc = load_pipeline_config(o.config);
  const GridConfig& cfg = pc.grid;
  if (!fs::exists(o.pose_file)) throw UsageError("pose file not found: " + o.pose_file.string());
  if (o.calib && !fs::exists(*o.calib)) throw UsageError("calibration file not found: " + o.calib->string());
  const auto scans = frame_files(o.scan_dir, ".bin");
  const auto poses = read_poses(o.pose_file, o.calib);
  std::int64_t prev = -1;
  for (const auto& s : scans) {
    const auto f = frame_index_from_stem(s);
    if (f <= prev) throw UsageError("scan file names must be distinct frame numbers: " + s.filename().string());
    if (f >= static_cast<std::int64_t>(poses.size()))
      throw UsageError("no pose for frame " + std::to_string(f) + " (" + o.pose_file.string() + " has " +
                       std::to_string(poses.size()) + " lines)");
    prev = f;
  }
  fs::create_directories(o.out_dir);

  RunManifest m;
  m.command = "featurize";
  m.config = o.config ? o.config->string() : "";
  m.seed = o.seed;
  m.inputs = {{"scan_dir", o.scan_dir.string()}, {"pose_file", o.pose_file.string()}};
  if (o.calib) m.inputs["calib"] = o.calib->string();
  const bool complete = o.mode == FeatureMode::Complete;
  const auto n = static_cast<std::size_t>(cfg.window);

  WindowState ws(cfg, o.mode, o.workers);
  double read_ms = 0, push_ms = 0, write_ms = 0;
  json files = json::array(), warmup = json::array(), unemitted = json::array();
  std::vector<std::int64_t> frames;
  auto emit = [&](const MotionFeatures& mf) {
    const auto t0 = Clock::now();
    const auto name = frame_name(mf.frame_index, ".mbev");
    write_motion_features(mf, o.out_dir / name);
    write_ms += ms_since(t0);
    files.push_back(name);
    if (!mf.complete()) warmup.push_back(mf.frame_index);
  };
  for (const auto& s : scans) {
    auto t0 = Clock::now();
    auto cloud = read_scan(s);
    read_ms += ms_since(t0);
    frames.push_back(cloud.frame_index);
    const auto pose = poses[static_cast<std::size_t>(cloud.frame_index)];
    t0 = Clock::now();
    auto mf = ws.push(std::move(cloud), pose);
    push_ms += ms_since(t0);
    if (mf) emit(*mf);
  }
  // frames that never received a file: the trailing N-1 in complete mode,
  // the leading N-1 in delay-free mode
  const std::size_t missing = std::min(frames.size(), n - 1);
  if (complete) {
    for (std::size_t i = frames.size() - missing; i < frames.size(); ++i) unemitted.push_back(frames[i]);
  } else {
    for (std::size_t i = 0; i < missing; ++i) {
      unemitted.push_back(frames[i]);
      warmup.push_back(frames[i]);
    }
  }
  json warnings = json::array();
  for (const auto& w : pc.warnings) warnings.push_back(w);
  if (frames.size() < n)
    warnings.push_back("sequence has " + std::to_string(frames.size()) + " frames, fewer than the window N=" +
                       std::to_string(n) + "; no feature files written");

  const double per_frame = frames.empty() ? 0.0 : push_ms / static_cast<double>(frames.size());
  m.outputs = {{"out_dir", o.out_dir.string()}, {"files", files}};
  m.timing_ms = {{"read", read_ms}, {"featurize", push_ms}, {"write", write_ms}, {"total", ms_since(t_start)}};
  m.extra = {{"mode", complete ? "complete" : "delay-free"},
             {"grid", config_to_json(cfg)},
             {"frames", frames.size()},
             {"warmup_frames", warmup},
             {"unemitted_frames", unemitted},
             {"warnings", warnings},
             {"mean_frame_latency_ms", per_frame},
             {"workers", o.workers}};
  write_json_atomic(m.to_json(), o.out_dir / "manifest.json");
  for (const auto& w : warnings) log << "warning: " << w.get<std::string>() << '\n';
  log << "featurize: " << frames.size() << " frames, " << files.size() << " feature files, mean latency " << per_frame
      << " ms/frame (read " << read_ms << " ms, featurize " << push_ms << " ms, write " << write_ms << " ms)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// check

struct CheckOptions {
  std::string suite = "all";
  std::uint64_t seed = 1;
  double fault = 0.0;  // added to the ring-conv kernel gradient
  std::optional<fs::path> report;
};

inline int cmd_check(const CheckOptions& o, std::ostream& log = std::cout) {
  const double saved = netcore::testing::ring_conv_backward_fault;
  netcore::testing::ring_conv_backward_fault = o.fault;
  std::vector<checks::CheckResult> rs;
  const auto t0 = Clock::now();
  try {
    rs = checks::run_suite(o.suite, o.seed);
  } catch (const ValidationError& e) {
    netcore::testing::ring_conv_backward_fault = saved;
    throw UsageError(e.what());
  }
  netcore::testing::ring_conv_backward_fault = saved;
  json items = json::array();
  for (const auto& r : rs) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s  %-48s measured %.3e  tolerance %.1e", r.pass ? "PASS" : "FAIL",
                  r.name.c_str(), r.measured, r.tolerance);
    log << line << (r.detail.empty() ? "" : "  (" + r.detail + ")") << '\n';
    items.push_back({{"name", r.name}, {"measured", r.measured}, {"tolerance", r.tolerance}, {"pass", r.pass},
                     {"detail", r.detail}});
  }
  const bool ok = checks::all_pass(rs);
  std::vector<std::string> failed;
  for (const auto& r : rs)
    if (!r.pass) failed.push_back(r.name);
  log << (ok ? "all " + std::to_string(rs.size()) + " checks passed"
             : std::to_string(failed.size()) + " of " + std::to_string(rs.size()) + " checks failed")
      << '\n';
  if (o.report) {
    RunManifest m;
    m.command = "check";
    m.seed = o.seed;
    m.timing_ms = {{"total", ms_since(t0)}};
    m.extra = {{"suite", o.suite}, {"pass", ok}, {"results", items}, {"failed", failed}};
    write_json_atomic(m.to_json(), *o.report);
  }
  return ok ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  fs::path pred_dir;
  fs::path gt_dir;
  std::optional<fs::path> config;
  std::optional<fs::path> out;
};

inline json counts_json(const ConfusionCounts& c) {
  return {{"iou", iou(c)}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

/// Label files under `root`, keyed by path relative to it.
inline std::map<std::string, fs::path> label_files(const fs::path& root) {
  if (!fs::is_directory(root)) throw UsageError("not a directory: " + root.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".label")
      out.emplace(fs::relative(e.path(), root).generic_string(), e.path());
  return out;
}

/// Sequence a label file belongs to: its directory relative to the root,
/// without a trailing "labels" component; "." for files at the top.
inline std::string sequence_of(const std::string& rel) {
  fs::path dir = fs::path(rel).parent_path();
  if (dir.filename() == "labels") dir = dir.parent_path();
  return dir.empty() ? "." : dir.generic_string();
}

inline int cmd_eval(const EvalOptions& o, std::ostream& log = std::cout) {
  const auto t0 = Clock::now();
  const auto pc = load_pipeline_config(o.config);
  const auto gt = label_files(o.gt_dir);
  const auto pred = label_files(o.pred_dir);
  if (gt.empty()) throw UsageError("no .label files under " + o.gt_dir.string());
  for (const auto& [rel, _] : gt)
    if (!pred.count(rel)) throw UsageError("prediction missing for " + rel);
  std::map<std::string, ConfusionCounts> per_seq;
  ConfusionCounts total;
  for (const auto& [rel, gpath] : gt) {
    const auto g = read_labels(gpath, pc.labels);
    const auto p = read_labels(pred.at(rel), pc.labels);
    if (g.size() != p.size())
      throw UsageError(rel + ": prediction has " + std::to_string(p.size()) + " labels, ground truth " +
                       std::to_string(g.size()));
    std::vector<MosClass> gc(g.size()), pcls(p.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      gc[i] = g[i].cls;
      pcls[i] = p[i].cls == MosClass::Moving ? MosClass::Moving : MosClass::Static;
    }
    ConfusionCounts c;
    accumulate(c, pcls, gc);
    per_seq[sequence_of(rel)] += c;
    total += c;
  }
  json seqs = json::object();
  for (const auto& [s, c] : per_seq) seqs[s] = counts_json(c);
  json report = {{"command", "eval"},
                 {"version", kVersion},
                 {"pred_dir", o.pred_dir.string()},
                 {"gt_dir", o.gt_dir.string()},
                 {"frames", gt.size()},
                 {"sequences", seqs},
                 {"overall", counts_json(total)},
                 {"timing_ms", {{"total", ms_since(t0)}}}};
  for (const auto& [s, c] : per_seq)
    log << "sequence " << s << ": IoU " << iou(c) << " (TP " << c.tp << ", FP " << c.fp << ", FN " << c.fn << ")\n";
  log << "overall: IoU " << iou(total) << " (TP " << total.tp << ", FP " << total.fp << ", FN " << total.fn << ")\n";
  if (o.out) write_json_atomic(report, *o.out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// synth

// Dataset spec:
//   {"grid": {<pipeline config keys>},
//    "sequences": [{"name": "00", "split": "train",
//                   "random": {"seed": 101, "frames": 32, "moving": 2, "parked": 2}}
//                  | {"name": ..., "split": ..., "scene": {<scene keys>}}],
//    "training": {...}}          (copied through to dataset.json)
// A bare scene document (no "sequences") yields one sequence "00".
struct SynthOptions {
  fs::path spec_file;
  fs::path out_dir;
  std::uint64_t seed = 0;  // added to every scene seed
};

inline synth::SceneSpec scene_of(const json& entry, const GridConfig& grid, std::uint64_t seed_offset) {
  synth::SceneSpec s;
  if (entry.contains("random")) {
    const auto& r = entry.at("random");
    s = synth::random_scene(r.value("seed", std::uint64_t{0}) + seed_offset, r.value("frames", 32),
                            r.value("moving", 2), r.value("parked", 2), grid.rho_max);
  } else if (entry.contains("scene")) {
    s = synth::scene_from_json(entry.at("scene"));
    s.seed += seed_offset;
  } else {
    throw ConfigError("sequences", "each sequence needs a \"random\" or \"scene\" entry");
  }
  return s;
}

inline int cmd_synth(const SynthOptions& o, std::ostream& log = std::cout) {
  const auto t0 = Clock::now();
  if (!fs::exists(o.spec_file)) throw UsageError("spec file not found: " + o.spec_file.string());
  const json spec = read_json(o.spec_file);
  if (!spec.is_object()) throw ConfigError("<root>", "expected a JSON object");
  const auto pc = spec.contains("grid") ? parse_config(spec.at("grid")) : PipelineConfig{};
  json entries = spec.contains("sequences") ? spec.at("sequences")
                                            : json::array({{{"name", "00"}, {"split", "train"}, {"scene", spec}}});
  json splits = json::object(), seq_meta = json::array();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    char fallback[16];
    std::snprintf(fallback, sizeof(fallback), "%02zu", i);
    const std::string name = e.value("name", std::string(fallback));
    const std::string split = e.value("split", "train");
    const auto scene = scene_of(e, pc.grid, o.seed);
    const auto seq = synth::generate(scene);
    const fs::path dir = o.out_dir / "sequences" / name;
    synth::export_sequence(seq, dir);
    std::size_t points = 0, moving = 0;
    for (const auto& f : seq) {
      points += f.cloud.size();
      for (auto l : f.labels) moving += pc.labels.classify(l) == MosClass::Moving;
    }
    if (!splits.contains(split)) splits[split] = json::array();
    splits[split].push_back(name);
    seq_meta.push_back({{"name", name}, {"split", split}, {"frames", seq.size()}, {"seed", scene.seed},
                        {"objects", scene.objects.size()}, {"points", points}, {"moving_points", moving}});
    log << "synth: sequence " << name << " (" << split << "): " << seq.size() << " frames, " << points << " points\n";
  }
  json grid = config_to_json(pc.grid);
  json dataset = {{"grid", grid}, {"splits", splits}, {"sequences", seq_meta}};
  if (spec.contains("training")) dataset["training"] = spec.at("training");
  write_json_atomic(dataset, o.out_dir / "dataset.json");
  write_json_atomic(grid, o.out_dir / "config.json");

  RunManifest m;
  m.command = "synth";
  m.config = o.spec_file.string();
  m.seed = o.seed;
  m.inputs = {{"spec_file", o.spec_file.string()}};
  m.outputs = {{"out_dir", o.out_dir.string()}, {"dataset", "dataset.json"}, {"config", "config.json"}};
  m.timing_ms = {{"total", ms_since(t0)}};
  write_json_atomic(m.to_json(), o.out_dir / "manifest.json");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// toy-train

struct ToyTrainOptions {
  fs::path data_dir;
  std::optional<fs::path> config;
  fs::path out_model;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> channels;
  bool no_motion = false;
};

inline toy::ToyConfig training_config(const json& t) {
  toy::ToyConfig tc;
  tc.channels = t.value("channels", tc.channels);
  tc.mlp_hidden = t.value("mlp_hidden", tc.mlp_hidden);
  tc.epochs = t.value("epochs", tc.epochs);
  tc.batch = t.value("batch", tc.batch);
  tc.lr = t.value("lr", tc.lr);
  tc.momentum = t.value("momentum", tc.momentum);
  tc.weight_decay = t.value("weight_decay", tc.weight_decay);
  tc.lr_decay = t.value("lr_decay", tc.lr_decay);
  tc.seed = t.value("seed", tc.seed);
  tc.use_motion = t.value("use_motion", tc.use_motion);
  if (tc.channels == 0 || tc.mlp_hidden == 0 || tc.batch == 0) throw ConfigError("training", "sizes must be > 0");
  if (tc.epochs < 1 || tc.epochs > 10000) throw ConfigError("training.epochs", "expected 1..10000");
  if (!(tc.lr > 0)) throw ConfigError("training.lr", "must be > 0");
  return tc;
}

/// Labeled samples of the named sequences of a synth dataset tree.
inline std::vector<toy::Sample> load_split(const fs::path& data_dir, const json& names, const PipelineConfig& pc) {
  std::vector<toy::Sample> out;
  for (const auto& n : names) {
    const fs::path dir = data_dir / "sequences" / n.get<std::string>();
    const auto poses = read_poses(dir / "poses.txt");
    toy::LabeledSequence ls;
    for (const auto& scan : frame_files(dir / "velodyne", ".bin")) {
      auto cloud = read_scan(scan);
      const auto f = cloud.frame_index;
      if (f >= static_cast<std::int64_t>(poses.size())) throw UsageError("no pose for " + scan.string());
      const auto codes = read_label_codes(dir / "labels" / frame_name(f, ".label"));
      toy::add_frame(ls, std::move(cloud), poses[static_cast<std::size_t>(f)], codes, pc.labels);
    }
    auto s = toy::build_samples(ls, pc.grid);
    for (auto& x : s) out.push_back(std::move(x));
  }
  return out;
}

inline int cmd_toy_train(const ToyTrainOptions& o, std::ostream& log = std::cout) {
  const auto t0 = Clock::now();
  const fs::path ds_path = o.data_dir / "dataset.json";
  if (!fs::exists(ds_path)) throw UsageError("no dataset.json in " + o.data_dir.string() + " (run synth first)");
  const json ds = read_json(ds_path);
  auto pc = o.config ? load_pipeline_config(o.config) : parse_config(ds.value("grid", json::object()));
  auto tc = training_config(ds.value("training", json::object()));
  if (o.seed) tc.seed = *o.seed;
  if (o.epochs) tc.epochs = *o.epochs;
  if (o.lr) tc.lr = *o.lr;
  if (o.channels) tc.channels = *o.channels;
  if (o.no_motion) tc.use_motion = false;
  const auto& splits = ds.value("splits", json::object());
  if (!splits.contains("train")) throw UsageError(ds_path.string() + ": no train split");
  const auto val_names = splits.contains("val") ? splits.at("val") : splits.at("train");

  const auto t_load = Clock::now();
  const auto train = load_split(o.data_dir, splits.at("train"), pc);
  const auto val = load_split(o.data_dir, val_names, pc);
  const double load_ms = ms_since(t_load);
  if (train.empty()) throw UsageError("training split has no frame with a complete motion window");
  log << "toy-train: " << train.size() << " training frames, " << val.size() << " validation frames, "
      << (tc.use_motion ? "dual-branch" : "motion branch disabled") << '\n';

  const auto t_train = Clock::now();
  auto r = toy::toy_train(train, val, tc);
  const double train_ms = ms_since(t_train);
  json history = json::array();
  for (const auto& h : r.history) {
    history.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_iou", h.val_iou}, {"lr", h.lr},
                       {"seconds", h.seconds}});
    log << "epoch " << h.epoch << "  loss " << h.train_loss << "  val IoU " << h.val_iou << '\n';
  }
  if (o.out_model.has_parent_path()) fs::create_directories(o.out_model.parent_path());
  toy::save_model(r.params, o.out_model);

  RunManifest m;
  m.command = "toy-train";
  m.config = o.config ? o.config->string() : ds_path.string();
  m.seed = tc.seed;
  m.inputs = {{"data_dir", o.data_dir.string()}};
  m.outputs = {{"model", o.out_model.string()}};
  m.timing_ms = {{"load", load_ms}, {"train", train_ms}, {"total", ms_since(t0)}};
  m.extra = {{"training",
              {{"channels", tc.channels}, {"mlp_hidden", tc.mlp_hidden}, {"epochs", tc.epochs}, {"batch", tc.batch},
               {"lr", tc.lr}, {"momentum", tc.momentum}, {"weight_decay", tc.weight_decay},
               {"lr_decay", tc.lr_decay}, {"use_motion", tc.use_motion}}},
             {"grid", config_to_json(pc.grid)},
             {"motion_channels", pc.grid.window},
             {"history", history},
             {"final_val_iou", r.final_iou()}};
  write_json_atomic(m.to_json(), fs::path(o.out_model.string() + ".json"));
  log << "final validation IoU " << r.final_iou() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// export-ply

struct ExportOptions {
  fs::path scan;
  std::optional<fs::path> labels;
  std::optional<fs::path> features;
  std::optional<fs::path> config;
  fs::path out;
  int channel = 0;
};

struct Rgb {
  int r, g, b;
};

// Class colors: static gray, moving red, unlabeled dark blue.
inline Rgb class_color(MosClass c) {
  switch (c) {
    case MosClass::Moving: return {230, 40, 40};
    case MosClass::Static: return {170, 170, 170};
    default: return {40, 40, 110};
  }
}

// Residual magnitude ramp: 0 -> blue, d_max/2 -> yellow-green, >= d_max -> red.
// Points outside the grid are dark gray.
inline Rgb residual_color(double v, double vmax) {
  const double t = std::clamp(std::abs(v) / vmax, 0.0, 1.0);
  const double r = std::clamp(2.0 * t, 0.0, 1.0), b = std::clamp(1.0 - 2.0 * t, 0.0, 1.0);
  const double g = 1.0 - std::abs(2.0 * t - 1.0);
  return {static_cast<int>(std::lround(255 * r)), static_cast<int>(std::lround(255 * g)),
          static_cast<int>(std::lround(255 * b))};
}

inline int cmd_export_ply(const ExportOptions& o, std::ostream& log = std::cout) {
  if (o.labels.has_value() == o.features.has_value())
    throw UsageError("export-ply needs exactly one of --labels or --features");
  const auto pc = load_pipeline_config(o.config);
  const auto cloud = read_scan(o.scan);
  std::vector<Rgb> colors(cloud.size());
  std::string source;
  if (o.labels) {
    const auto labels = read_labels(*o.labels, pc.labels);
    if (labels.size() != cloud.size())
      throw UsageError("label/scan mismatch: " + std::to_string(labels.size()) + " labels, " +
                       std::to_string(cloud.size()) + " points");
    for (std::size_t i = 0; i < cloud.size(); ++i) colors[i] = class_color(labels[i].cls);
    source = "labels";
  } else {
    const auto mf = read_motion_features(*o.features);
    if (mf.data.dim(1) != static_cast<std::size_t>(pc.grid.h) || mf.data.dim(2) != static_cast<std::size_t>(pc.grid.w))
      throw UsageError("feature grid " + std::to_string(mf.data.dim(1)) + "x" + std::to_string(mf.data.dim(2)) +
                       " does not match config grid " + std::to_string(pc.grid.h) + "x" + std::to_string(pc.grid.w));
    if (o.channel < 0 || static_cast<std::size_t>(o.channel) >= mf.channels())
      throw UsageError("channel " + std::to_string(o.channel) + " out of range");
    const auto ch = mf.data.channel(static_cast<std::size_t>(o.channel));
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto c = cell_id(cloud.points[i], pc.grid);
      colors[i] = c < 0 ? Rgb{60, 60, 60} : residual_color(ch[static_cast<std::size_t>(c)], pc.grid.d_max);
    }
    source = "residual channel " + std::to_string(o.channel);
  }
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  const fs::path tmp = o.out.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing " + tmp.string());
    out << "ply\nformat ascii 1.0\ncomment motionbev " << source << "\nelement vertex " << cloud.size()
        << "\nproperty float x\nproperty float y\nproperty float z\n"
           "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
    char line[128];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto& p = cloud.points[i];
      std::snprintf(line, sizeof(line), "%.6g %.6g %.6g %d %d %d\n", p.x, p.y, p.z, colors[i].r, colors[i].g,
                    colors[i].b);
      out << line;
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, o.out);
  log << "export-ply: " << cloud.size() << " vertices colored by " << source << " -> " << o.out.string() << '\n';
  return kExitOk;
}

}  // namespace motionbev::cli

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "commands.hpp"
#include "test_util.hpp"

using namespace motionbev;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the built executable, capturing stdout and stderr together.
Run run(const std::string& args) {
  test::TempDir tmp;
  const auto log = tmp / "out.txt";
  const std::string cmd = std::string(MOTIONBEV_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small dataset spec: one explicit scene of `frames` frames on a 32 x 32 grid.
fs::path write_spec(const test::TempDir& dir, int frames, const std::string& name = "spec.json") {
  json spec = {{"grid", {{"h", 32}, {"w", 32}, {"rho_max", 16.0}, {"N", 8}}},
               {"sequences",
                {{{"name", "00"},
                  {"split", "train"},
                  {"scene",
                   {{"seed", 3},
                    {"frames", frames},
                    {"sample_rho_max", 16.0},
                    {"ground_spacing", 0.8},
                    {"ego", {{"path", "line"}, {"speed", 0.3}}},
                    {"objects",
                     {{{"size", {4.0, 2.0, 1.5}}, {"position", {8.0, 2.0}}, {"velocity", {0.6, 0.0}}},
                      {{"size", {4.0, 2.0, 1.5}}, {"position", {-6.0, -5.0}}}}}}}}}},
               {"training", {{"channels", 4}, {"mlp_hidden", 4}, {"epochs", 1}, {"batch", 4}}}};
  const auto path = dir / name;
  std::ofstream(path) << spec.dump(1);
  return path;
}

fs::path make_dataset(const test::TempDir& dir, int frames) {
  const auto out = dir / ("ds" + std::to_string(frames));
  const auto r = run("synth " + q(write_spec(dir, frames, "spec" + std::to_string(frames) + ".json")) + " " + q(out));
  EXPECT_EQ(r.code, 0) << r.out;
  return out;
}

Run featurize(const fs::path& ds, const fs::path& out, const std::string& extra = "") {
  const auto seq = ds / "sequences" / "00";
  return run("featurize " + q(seq / "velodyne") + " " + q(seq / "poses.txt") + " " + q(out) + " --config " +
             q(ds / "config.json") + " " + extra);
}

std::vector<std::string> mbev_files(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".mbev") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

void write_codes(const fs::path& p, std::vector<std::uint32_t> codes) {
  fs::create_directories(p.parent_path());
  write_label_codes(codes, p);
}

}  // namespace

TEST(CliSynth, WritesDatasetReadableByFeaturize) {
  test::TempDir dir;
  const auto ds = make_dataset(dir, 8);
  const auto d = cli::read_json(ds / "dataset.json");
  EXPECT_EQ(d.at("splits").at("train"), json::array({"00"}));
  EXPECT_EQ(d.at("grid").at("h"), 32);
  EXPECT_TRUE(fs::exists(ds / "manifest.json"));
  const auto seq = ds / "sequences" / "00";
  EXPECT_EQ(read_poses(seq / "poses.txt").size(), 8u);
  const auto cloud = read_scan(seq / "velodyne" / "000004.bin");
  EXPECT_EQ(read_label_codes(seq / "labels" / "000004.label").size(), cloud.size());
}

TEST(CliFeaturize, EightFramesCompleteModeGivesFrameZero) {
  test::TempDir dir;
  const auto ds = make_dataset(dir, 8);
  const auto r = featurize(ds, dir / "f");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(mbev_files(dir / "f"), std::vector<std::string>{"000000.mbev"});
  const auto m = cli::read_json(dir / "f" / "manifest.json");
  EXPECT_EQ(m.at("command"), "featurize");
  EXPECT_EQ(m.at("mode"), "complete");
  EXPECT_EQ(m.at("warmup_frames"), json::array({0}));
  EXPECT_EQ(m.at("unemitted_frames").size(), 7u);
  EXPECT_TRUE(m.at("timing_ms").contains("featurize"));
  EXPECT_GE(m.at("mean_frame_latency_ms").get<double>(), 0.0);
  const auto mf = read_motion_features(dir / "f" / "000000.mbev");
  EXPECT_EQ(mf.frame_index, 0);
  EXPECT_EQ(mf.channels(), 8u);
}

TEST(CliFeaturize, EightFramesDelayFreeGivesFrameSeven) {
  test::TempDir dir;
  const auto ds = make_dataset(dir, 8);
  const auto r = featurize(ds, dir / "f", "--mode delay-free");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(mbev_files(dir / "f"), std::vector<std::string>{"000007.mbev"});
  EXPECT_EQ(read_motion_features(dir / "f" / "000007.mbev").channels(), 1u);
  EXPECT_EQ(cli::read_json(dir / "f" / "manifest.json").at("warmup_frames").size(), 7u);
}

TEST(CliFeaturize, TooFewFramesWarnsAndWritesNothing) {
  test::TempDir dir;
  const auto ds = make_dataset(dir, 7);
  const auto r = featurize(ds, dir / "f");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(mbev_files(dir / "f").empty());
  const auto m = cli::read_json(dir / "f" / "manifest.json");
  ASSERT_EQ(m.at("warnings").size(), 1u);
  EXPECT_NE(m.at("warnings")[0].get<std::string>().find("fewer than the window"), std::string::npos);
}

TEST(CliFeaturize, RepeatedRunsAreBitIdentical) {
  test::TempDir dir;
  const auto ds = make_dataset(dir, 10);
  ASSERT_EQ(featurize(ds, dir / "a", "--workers 1").code, 0);
  ASSERT_EQ(featurize(ds, dir / "b", "--workers 3").code, 0);
  const auto names = mbev_files(dir / "a");
  ASSERT_EQ(names.size(), 3u);
  EXPECT_EQ(names, mbev_files(dir / "b"));
  for (const auto& n : names) EXPECT_EQ(slurp(dir / "a" / n), slurp(dir / "b" / n)) << n;
}

TEST(CliFeaturize, InputErrorsExitTwo) {
  test::TempDir dir;
  const auto ds = make_dataset(dir, 8);
  const auto seq = ds / "sequences" / "00";
  EXPECT_EQ(run("featurize " + q(dir / "nope") + " " + q(seq / "poses.txt") + " " + q(dir / "f")).code, 2);
  EXPECT_EQ(run("featurize " + q(seq / "velodyne") + " " + q(dir / "nope.txt") + " " + q(dir / "f")).code, 2);
  // fewer poses than scans
  std::ofstream(dir / "short.txt") << "1 0 0 0 0 1 0 0 0 0 1 0\n";
  const auto r = run("featurize " + q(seq / "velodyne") + " " + q(dir / "short.txt") + " " + q(dir / "f"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("no pose for frame 1"), std::string::npos) << r.out;
  // malformed config
  std::ofstream(dir / "bad.json") << "{\"h\": \"wide\"}";
  EXPECT_EQ(run("featurize " + q(seq / "velodyne") + " " + q(seq / "poses.txt") + " " + q(dir / "f") +
                " --config " + q(dir / "bad.json"))
                .code,
            2);
  EXPECT_EQ(run("featurize " + q(seq / "velodyne")).code, 2);
}

TEST(CliCheck, LossAndGeometrySuitesPass) {
  const auto r = run("check --suite loss");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PASS  weighted_ce.hand_example"), std::string::npos);
  EXPECT_EQ(run("check --suite geometry").code, 0);
}

TEST(CliCheck, RingConvFaultFailsGradientSuiteNamingTheOp) {
  test::TempDir dir;
  const auto r = run("check --suite gradients --fault-ring-conv 1e-3 --report " + q(dir / "r.json"));
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_NE(r.out.find("FAIL  ring_conv2d"), std::string::npos) << r.out;
  const auto rep = cli::read_json(dir / "r.json");
  EXPECT_FALSE(rep.at("pass").get<bool>());
  const auto failed = rep.at("failed").get<std::vector<std::string>>();
  EXPECT_NE(std::find(failed.begin(), failed.end(), "ring_conv2d"), failed.end());
  // the hook is restored afterwards
  EXPECT_EQ(netcore::testing::ring_conv_backward_fault, 0.0);
}

TEST(CliCheck, UnknownSuiteIsUsageError) { EXPECT_EQ(run("check --suite everything").code, 2); }

TEST(CliEval, Examples) {
  test::TempDir dir;
  const std::uint32_t m = 251, s = 9;
  write_codes(dir / "gt" / "a" / "labels" / "000000.label", {m, m, m, s, s});
  write_codes(dir / "gt" / "b" / "labels" / "000000.label", {s, s});
  // identical prediction
  write_codes(dir / "same" / "a" / "labels" / "000000.label", {m, m, m, s, s});
  write_codes(dir / "same" / "b" / "labels" / "000000.label", {s, s});
  auto r = run("eval " + q(dir / "same") + " " + q(dir / "gt") + " --out " + q(dir / "r1.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  auto rep = cli::read_json(dir / "r1.json");
  EXPECT_EQ(rep.at("overall").at("iou"), 1.0);
  EXPECT_EQ(rep.at("sequences").at("a").at("tp"), 3);
  // all static
  write_codes(dir / "static" / "a" / "labels" / "000000.label", {s, s, s, s, s});
  write_codes(dir / "static" / "b" / "labels" / "000000.label", {s, s});
  ASSERT_EQ(run("eval " + q(dir / "static") + " " + q(dir / "gt") + " --out " + q(dir / "r2.json")).code, 0);
  rep = cli::read_json(dir / "r2.json");
  EXPECT_EQ(rep.at("overall").at("iou"), 0.0);
  EXPECT_EQ(rep.at("overall").at("fn"), 3);
  // TP 3, FP 1, FN 0
  write_codes(dir / "fp" / "a" / "labels" / "000000.label", {m, m, m, m, s});
  write_codes(dir / "fp" / "b" / "labels" / "000000.label", {s, s});
  ASSERT_EQ(run("eval " + q(dir / "fp") + " " + q(dir / "gt") + " --out " + q(dir / "r3.json")).code, 0);
  rep = cli::read_json(dir / "r3.json");
  EXPECT_DOUBLE_EQ(rep.at("overall").at("iou").get<double>(), 0.75);
  EXPECT_EQ(rep.at("sequences").at("b").at("iou"), 1.0);
}

TEST(CliEval, MissingOrMismatchedPredictionExitsTwo) {
  test::TempDir dir;
  write_codes(dir / "gt" / "000000.label", {251, 9});
  write_codes(dir / "short" / "000000.label", {251});
  EXPECT_EQ(run("eval " + q(dir / "short") + " " + q(dir / "gt")).code, 2);
  fs::create_directories(dir / "empty");
  EXPECT_EQ(run("eval " + q(dir / "empty") + " " + q(dir / "gt")).code, 2);
}

TEST(CliExportPly, VertexCountMatchesPointCount) {
  test::TempDir dir;
  const auto ds = make_dataset(dir, 8);
  const auto seq = ds / "sequences" / "00";
  auto r = run("export-ply " + q(seq / "velodyne" / "000000.bin") + " " + q(dir / "a.ply") + " --labels " +
               q(seq / "labels" / "000000.label"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto n = read_scan(seq / "velodyne" / "000000.bin").size();
  std::ifstream in(dir / "a.ply");
  std::string line;
  std::size_t header = 0, vertices = 0, declared = 0, red = 0;
  bool body = false;
  while (std::getline(in, line)) {
    if (body) {
      ++vertices;
      if (line.ends_with(" 230 40 40")) ++red;
    } else {
      ++header;
      if (line.starts_with("element vertex ")) declared = std::stoul(line.substr(15));
      body = line == "end_header";
    }
  }
  EXPECT_EQ(declared, n);
  EXPECT_EQ(vertices, n);
  EXPECT_GT(red, 0u);

  ASSERT_EQ(featurize(ds, dir / "f").code, 0);
  r = run("export-ply " + q(seq / "velodyne" / "000000.bin") + " " + q(dir / "b.ply") + " --features " +
          q(dir / "f" / "000000.mbev") + " --config " + q(ds / "config.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  // grid of the features must match the config
  EXPECT_EQ(run("export-ply " + q(seq / "velodyne" / "000000.bin") + " " + q(dir / "c.ply") + " --features " +
                q(dir / "f" / "000000.mbev"))
                .code,
            2);
  EXPECT_EQ(run("export-ply " + q(seq / "velodyne" / "000000.bin") + " " + q(dir / "d.ply")).code, 2);
}

TEST(CliToyTrain, WritesModelAndHistory) {
  test::TempDir dir;
  const auto ds = make_dataset(dir, 16);
  const auto r = run("toy-train " + q(ds) + " " + q(dir / "model.mbev") + " --epochs 2 --seed 4");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto m = cli::read_json(dir / "model.mbev.json");
  EXPECT_EQ(m.at("history").size(), 2u);
  EXPECT_EQ(m.at("seed"), 4);
  EXPECT_EQ(m.at("training").at("channels"), 4);
  toy::ToyConfig tc;
  tc.channels = 4;
  tc.mlp_hidden = 4;
  EXPECT_NO_THROW(toy::load_model(dir / "model.mbev", 8, tc));
  EXPECT_EQ(run("toy-train " + q(dir / "nothing") + " " + q(dir / "m2.mbev")).code, 2);
}

TEST(CliManifest, AtomicWriteLeavesNoTempFile) {
  test::TempDir dir;
  cli::write_json_atomic({{"a", 1}}, dir / "sub" / "m.json");
  EXPECT_EQ(cli::read_json(dir / "sub" / "m.json").at("a"), 1);
  EXPECT_FALSE(fs::exists(dir / "sub" / "m.json.tmp"));
}

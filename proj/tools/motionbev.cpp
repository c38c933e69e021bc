#include <CLI11.hpp>

#include <iostream>
#include <thread>

#include "commands.hpp"

using namespace motionbev;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"MotionBEV: polar BEV motion features, checks, synthetic data and a toy model"};
  app.set_version_flag("--version", std::string(cli::kVersion));
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  bool seed_given = false;
  app.add_option_function<std::uint64_t>(
         "--seed", [&](std::uint64_t s) { seed = s, seed_given = true; }, "Random seed")
      ->configurable();

  // featurize
  cli::FeaturizeOptions fo;
  std::string mode = "complete";
  std::string calib, config_f;
  unsigned workers = 0;
  auto* feat = app.add_subcommand("featurize", "Compute per-frame motion features of a scan sequence");
  feat->add_option("scan_dir", fo.scan_dir, "Directory of NNNNNN.bin scans")->required();
  feat->add_option("pose_file", fo.pose_file, "KITTI-style pose file")->required();
  feat->add_option("out_dir", fo.out_dir, "Output directory")->required();
  feat->add_option("--calib", calib, "Calibration file with a Tr: line");
  feat->add_option("--config", config_f, "Pipeline config (JSON)");
  feat->add_option("--mode", mode, "complete or delay-free")->check(CLI::IsMember({"complete", "delay-free"}));
  feat->add_option("--workers", workers, "Worker threads (0 = hardware concurrency)");

  // check
  cli::CheckOptions co;
  std::string report;
  auto* chk = app.add_subcommand("check", "Run oracle and finite-difference checks");
  chk->add_option("--suite", co.suite, "geometry, motion, synthetic, gradients, loss or all")
      ->check(CLI::IsMember({"geometry", "motion", "synthetic", "gradients", "loss", "all"}));
  chk->add_option("--fault-ring-conv", co.fault, "Offset added to the ring-conv kernel gradient (fault injection)");
  chk->add_option("--report", report, "Write a JSON report");

  // eval
  cli::EvalOptions eo;
  std::string eval_config, eval_out;
  auto* ev = app.add_subcommand("eval", "Moving-class IoU of predicted against ground-truth labels");
  ev->add_option("pred_dir", eo.pred_dir, "Predicted .label files")->required();
  ev->add_option("gt_dir", eo.gt_dir, "Ground-truth .label files (same relative paths)")->required();
  ev->add_option("--config", eval_config, "Pipeline config (label code sets)");
  ev->add_option("--out", eval_out, "Write the JSON report here");

  // synth
  cli::SynthOptions so;
  auto* syn = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  syn->add_option("spec_file", so.spec_file, "Dataset or scene spec (JSON)")->required();
  syn->add_option("out_dir", so.out_dir, "Output directory")->required();

  // toy-train
  cli::ToyTrainOptions to;
  std::string train_config;
  int epochs = 0;
  double lr = 0;
  std::size_t channels = 0;
  auto* tt = app.add_subcommand("toy-train", "Train the toy dual-branch model on a synthetic dataset");
  tt->add_option("data_dir", to.data_dir, "Directory written by synth")->required();
  tt->add_option("out_model", to.out_model, "Model file to write")->required();
  tt->add_option("--config", train_config, "Pipeline config overriding the dataset grid");
  tt->add_option("--epochs", epochs, "Override training epochs")->check(CLI::Range(1, 10000));
  tt->add_option("--lr", lr, "Override the learning rate")->check(CLI::PositiveNumber);
  tt->add_option("--channels", channels, "Override the branch width")->check(CLI::Range(1, 512));
  tt->add_flag("--no-motion", to.no_motion, "Feed zeros to the motion branch (ablation)");

  // export-ply
  cli::ExportOptions xo;
  std::string labels, features, export_config;
  auto* xp = app.add_subcommand("export-ply", "Write a colored ASCII PLY of one scan");
  xp->add_option("scan", xo.scan, "Scan file (.bin)")->required();
  xp->add_option("out", xo.out, "Output .ply")->required();
  auto* lab = xp->add_option("--labels", labels, "Color by class from a .label file");
  auto* fea = xp->add_option("--features", features, "Color by residual magnitude from a .mbev file");
  lab->excludes(fea);
  xp->add_option("--channel", xo.channel, "Feature channel to color by");
  xp->add_option("--config", export_config, "Pipeline config (grid for --features)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  auto opt_path = [](const std::string& s) { return s.empty() ? std::optional<fs::path>{} : fs::path(s); };
  try {
    if (*feat) {
      fo.mode = mode == "complete" ? FeatureMode::Complete : FeatureMode::DelayFree;
      fo.calib = opt_path(calib);
      fo.config = opt_path(config_f);
      fo.workers = workers ? workers : std::max(1u, std::thread::hardware_concurrency());
      fo.seed = seed;
      return cli::cmd_featurize(fo);
    }
    if (*chk) {
      if (seed_given) co.seed = seed;
      co.report = opt_path(report);
      return cli::cmd_check(co);
    }
    if (*ev) {
      eo.config = opt_path(eval_config);
      eo.out = opt_path(eval_out);
      return cli::cmd_eval(eo);
    }
    if (*syn) {
      so.seed = seed;
      return cli::cmd_synth(so);
    }
    if (*tt) {
      to.config = opt_path(train_config);
      if (seed_given) to.seed = seed;
      if (epochs) to.epochs = epochs;
      if (lr > 0) to.lr = lr;
      if (channels) to.channels = channels;
      return cli::cmd_toy_train(to);
    }
    if (*xp) {
      xo.labels = opt_path(labels);
      xo.features = opt_path(features);
      xo.config = opt_path(export_config);
      return cli::cmd_export_ply(xo);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitUsage;
  }
  return cli::kExitUsage;
}

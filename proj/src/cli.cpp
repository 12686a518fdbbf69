// SPDX-License-Identifier: Apache-2.0
#include "renerf/cli.hpp"

#include "renerf/config.hpp"
#include "renerf/image.hpp"
#include "renerf/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>

namespace renerf::cli {

namespace fs = std::filesystem;

namespace {

void fail(const std::string& message) { std::cerr << "renerf: error: " << message << "\n"; }

bool has_entries(const fs::path& dir) { return fs::exists(dir) && !fs::is_empty(dir); }

// Removes only what a previous run of the same verb wrote.
void clear_run_outputs(const fs::path& dir) {
  if (!fs::exists(dir)) return;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("round_", 0) == 0 || name == "metrics.csv" || name == "manifest.txt" || name == "config.snapshot")
      fs::remove_all(entry.path());
  }
}

void clear_render_outputs(const fs::path& dir) {
  if (!fs::exists(dir)) return;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() == ".png" &&
        (name.rfind("color_", 0) == 0 || name.rfind("depth_", 0) == 0 || name.rfind("uncertainty_", 0) == 0))
      fs::remove(entry.path());
  }
}

}  // namespace

int cmd_run(const RunArgs& args, std::ostream& log) {
  Settings settings;
  ExperimentConfig config;
  try {
    if (args.config) settings = Settings::load(*args.config);
    for (const auto& o : args.overrides) settings.set(std::string_view(o));
    // Camera files resolve against the config directory; pin them so the snapshot runs from anywhere.
    for (const char* key : {"cameras.train_file", "cameras.test_file"}) {
      const auto it = settings.values().find(key);
      if (it != settings.values().end() && !it->second.empty()) {
        fs::path p = it->second;
        if (p.is_relative()) settings.set(key, fs::absolute(settings.base_dir() / p).lexically_normal().string());
      }
    }
    config = build_config(settings);
  } catch (const ConfigError& e) {
    fail(fmt::format("config key '{}': {}", e.key(), e.what()));
    return kConfigError;
  }

  if (has_entries(args.out) && !args.overwrite) {
    fail(fmt::format("{} is not empty; pass --overwrite to replace it", args.out.string()));
    return kWouldClobber;
  }
  try {
    clear_run_outputs(args.out);
    fs::create_directories(args.out);
    const std::string snapshot = format_config(settings);
    {
      std::ofstream out(args.out / "config.snapshot");
      out << snapshot;
    }

    const ExperimentContext context = ExperimentContext::build(config);
    std::vector<MetricsRow> all_metrics;
    ExperimentHooks hooks;
    hooks.on_round = [&](const RoundArtifacts& round) {
      write_round_directory(round, config, context, args.out);
      all_metrics.insert(all_metrics.end(), round.metrics.begin(), round.metrics.end());
      write_metrics_csv(args.out / "metrics.csv", all_metrics);
      if (!args.quiet)
        log << fmt::format("round {}: psnr {:.3f} ssim {:.4f} synthetic {} ({:.1f} s)\n", round.round,
                           round.mean_psnr(), round.mean_ssim(), round.synthetic.size(), round.wall_seconds);
    };
    const ExperimentResult result = run_experiment(config, context, &hooks);
    write_manifest(args.out / "manifest.txt", result, config, snapshot);
  } catch (const RoundFailed& e) {
    fail(fmt::format("training aborted in round {} at iteration {} ({}): {}", e.round(), e.cause().iteration(),
                     e.cause().block(), e.cause().what()));
    return kTrainingAborted;
  } catch (const TrainingAborted& e) {
    fail(fmt::format("training aborted at iteration {} ({}): {}", e.iteration(), e.block(), e.what()));
    return kTrainingAborted;
  } catch (const std::exception& e) {
    fail(e.what());
    return 1;
  }
  return kOk;
}

std::vector<ReportRow> build_report(const std::vector<fs::path>& runs) {
  std::vector<ReportRow> rows;
  std::map<int, ReportRow> first_run;
  ReportRow first_last;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const fs::path csv = runs[r] / "metrics.csv";
    if (!fs::exists(csv)) throw std::runtime_error(fmt::format("{}: no metrics.csv", runs[r].string()));
    std::vector<ReportRow> mine;
    for (const auto& m : read_metrics_csv(csv)) {
      if (m.view != "MEAN") continue;
      ReportRow row;
      row.run = runs[r].string();
      row.round = m.round;
      row.psnr = m.psnr;
      row.ssim = m.ssim;
      mine.push_back(row);
    }
    if (mine.empty()) throw std::runtime_error(fmt::format("{}: metrics.csv has no MEAN rows", csv.string()));
    std::sort(mine.begin(), mine.end(), [](const ReportRow& a, const ReportRow& b) { return a.round < b.round; });
    for (std::size_t k = 1; k < mine.size(); ++k) {
      mine[k].gain = mine[k].psnr - mine[k - 1].psnr;
      mine[k].saturated = *mine[k].gain < kSaturationGain;
    }
    if (r == 0) {
      for (const auto& row : mine) first_run[row.round] = row;
      first_last = mine.back();
    }
    for (auto& row : mine) {
      const auto it = first_run.find(row.round);
      const ReportRow& ref = it != first_run.end() ? it->second : first_last;
      row.delta_psnr = row.psnr - ref.psnr;
      row.delta_ssim = row.ssim - ref.ssim;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string format_report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "run,round,mean_psnr,mean_ssim,delta_psnr,delta_ssim,round_gain,saturated\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{:.6f},{:.6f},{:+.6f},{:+.6f},{},{}\n", r.run, r.round, r.psnr, r.ssim, r.delta_psnr,
                       r.delta_ssim, r.gain ? fmt::format("{:+.6f}", *r.gain) : std::string(), r.saturated ? 1 : 0);
  return out;
}

std::string format_report_text(const std::vector<ReportRow>& rows) {
  std::size_t width = 3;
  for (const auto& r : rows) width = std::max(width, r.run.size());
  std::string out = fmt::format("{:<{}}  {:>5}  {:>9}  {:>7}  {:>9}  {:>8}  {:>8}  {}\n", "run", width, "round", "psnr",
                                "ssim", "d_psnr", "d_ssim", "gain", "saturated");
  for (const auto& r : rows)
    out += fmt::format("{:<{}}  {:>5}  {:>9.3f}  {:>7.4f}  {:>+9.3f}  {:>+8.4f}  {:>8}  {}\n", r.run, width, r.round,
                       r.psnr, r.ssim, r.delta_psnr, r.delta_ssim, r.gain ? fmt::format("{:+.3f}", *r.gain) : "-",
                       r.saturated ? "yes" : "");
  return out;
}

int cmd_report(const ReportArgs& args, std::ostream& out) {
  std::vector<ReportRow> rows;
  try {
    rows = build_report(args.runs);
  } catch (const std::exception& e) {
    fail(e.what());
    return kConfigError;
  }
  out << format_report_text(rows);
  if (args.csv) {
    std::ofstream csv(*args.csv);
    if (!csv) {
      fail(fmt::format("cannot write {}", args.csv->string()));
      return 1;
    }
    csv << format_report_csv(rows);
  }
  return kOk;
}

int cmd_render(const RenderArgs& args, std::ostream& log) {
  VoxelGrid grid;
  std::vector<Camera> cameras;
  std::optional<UncertaintyField> sigma;
  try {
    grid = load_grid(args.grid);
  } catch (const std::exception& e) {
    fail(fmt::format("cannot read checkpoint {}: {}", args.grid.string(), e.what()));
    return kConfigError;
  }
  try {
    cameras = read_cameras(args.cameras);
    if (args.sigma) sigma = load_sigma_field(*args.sigma);
  } catch (const std::exception& e) {
    fail(e.what());
    return kConfigError;
  }
  if (args.samples < 1) {
    fail("--samples must be >= 1");
    return kConfigError;
  }
  if (has_entries(args.out) && !args.overwrite) {
    fail(fmt::format("{} is not empty; pass --overwrite to replace it", args.out.string()));
    return kWouldClobber;
  }
  try {
    clear_render_outputs(args.out);
    fs::create_directories(args.out);
    const RenderOptions options{args.samples, Vec3::Ones()};
    for (std::size_t i = 0; i < cameras.size(); ++i) {
      const RenderedView view = render_image(grid, cameras[i], options);
      write_png8(args.out / fmt::format("color_{:02d}.png", i), view.color);
      write_depth(args.out / fmt::format("depth_{:02d}.png", i), {}, view, cameras[i]);
      if (sigma) {
        const UncertaintyMap u = render_uncertainty(grid, *sigma, cameras[i], args.samples, options.background);
        double scale = 0.0;
        for (double v : u.values) scale = std::max(scale, v);
        write_png16(args.out / fmt::format("uncertainty_{:02d}.png", i), u.values, u.width, u.height, scale);
      }
    }
    log << fmt::format("rendered {} camera(s) to {}\n", cameras.size(), args.out.string());
  } catch (const std::exception& e) {
    fail(e.what());
    return 1;
  }
  return kOk;
}

int main(int argc, char** argv) {
  CLI::App app{"Voxel radiance field trainer with uncertainty-masked view augmentation"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  RunArgs run;
  std::string run_config;
  auto* run_cmd = app.add_subcommand("run", "Train every configured round and write a run directory");
  run_cmd->add_option("--config", run_config, "Config file")->check(CLI::ExistingFile);
  run_cmd->add_option("--set", run.overrides, "Override a config key (key=value), repeatable");
  run_cmd->add_option("--out", run.out, "Run directory")->required();
  run_cmd->add_flag("--overwrite", run.overwrite, "Replace an existing run directory");
  run_cmd->add_flag("--quiet", run.quiet, "No per-round progress lines");

  ReportArgs report;
  std::string report_csv;
  auto* report_cmd = app.add_subcommand("report", "Compare per-round metrics of one or more runs");
  report_cmd->add_option("runs", report.runs, "Run directories")->required();
  report_cmd->add_option("--out", report_csv, "Also write the table as CSV");

  RenderArgs render;
  std::string render_sigma;
  auto* render_cmd = app.add_subcommand("render", "Render colour, depth and uncertainty images of a checkpoint");
  render_cmd->add_option("--grid", render.grid, "Grid checkpoint (.rnfgrid)")->required();
  render_cmd->add_option("--cameras", render.cameras, "Camera table")->required();
  render_cmd->add_option("--out", render.out, "Output directory")->required();
  render_cmd->add_option("--sigma", render_sigma, "Uncertainty field (.rnfsigma)");
  render_cmd->add_option("--samples", render.samples, "Samples per ray");
  render_cmd->add_flag("--overwrite", render.overwrite, "Replace existing images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (run_cmd->parsed()) {
    if (!run_config.empty()) run.config = run_config;
    return cmd_run(run, std::cout);
  }
  if (report_cmd->parsed()) {
    if (!report_csv.empty()) report.csv = report_csv;
    return cmd_report(report, std::cout);
  }
  if (!render_sigma.empty()) render.sigma = render_sigma;
  return cmd_render(render, std::cout);
}

}  // namespace renerf::cli

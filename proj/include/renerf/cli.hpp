// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace renerf::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kTrainingAborted = 3,
  kWouldClobber = 4,
};

struct RunArgs {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;  // key=value
  std::filesystem::path out;
  bool overwrite = false;
  bool quiet = false;
};

struct ReportArgs {
  std::vector<std::filesystem::path> runs;
  std::optional<std::filesystem::path> csv;
};

struct RenderArgs {
  std::filesystem::path grid;
  std::filesystem::path cameras;
  std::filesystem::path out;
  std::optional<std::filesystem::path> sigma;
  int samples = 128;
  bool overwrite = false;
};

// Round-over-round PSNR gains below this flag a run as saturated.
inline constexpr double kSaturationGain = 0.05;

struct ReportRow {
  std::string run;
  int round = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double delta_psnr = 0.0;  // against the first run, same round (or its last round)
  double delta_ssim = 0.0;
  std::optional<double> gain;  // against the previous round of the same run
  bool saturated = false;
};

// Per-round MEAN rows of every run; throws std::runtime_error when a metrics.csv is missing.
std::vector<ReportRow> build_report(const std::vector<std::filesystem::path>& runs);
std::string format_report_csv(const std::vector<ReportRow>& rows);
std::string format_report_text(const std::vector<ReportRow>& rows);

int cmd_run(const RunArgs& args, std::ostream& log);
int cmd_report(const ReportArgs& args, std::ostream& out);
int cmd_render(const RenderArgs& args, std::ostream& log);

int main(int argc, char** argv);

}  // namespace renerf::cli

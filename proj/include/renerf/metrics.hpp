// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "renerf/image.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace renerf {

// Returned by psnr() for identical images.
inline constexpr double kPsnrCap = 99.0;

double psnr(const Image& a, const Image& b, double peak = 1.0);

// Mean SSIM over the valid region, 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03, dynamic range 1. Channels are averaged.
double ssim(const Image& a, const Image& b);

struct MetricsRow {
  int round = 0;
  std::string view;  // view id, or "MEAN" for the per-round aggregate
  double psnr = 0.0;
  double ssim = 0.0;
};

// Header "round,view,psnr,ssim".
std::string format_metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace renerf

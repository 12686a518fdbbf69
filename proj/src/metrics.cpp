// SPDX-License-Identifier: Apache-2.0
#include "renerf/metrics.hpp"

#include <fmt/format.h>

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace renerf {

double psnr(const Image& a, const Image& b, double peak) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: image shapes differ");
  if (a.data.empty()) throw std::invalid_argument("psnr: empty image");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.data.size());
  if (mse == 0.0) return kPsnrCap;
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double x = i - kWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Valid-region separable Gaussian filter of a single-channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int w, int h, const std::array<double, kWindow>& g) {
  const int ow = w - kWindow + 1;
  const int oh = h - kWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += g[static_cast<std::size_t>(k)] * plane[static_cast<std::size_t>(y * w + x + k)];
      tmp[static_cast<std::size_t>(y * ow + x)] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * static_cast<std::size_t>(oh));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>((y + k) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = s;
    }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: image shapes differ");
  if (a.width < kWindow || a.height < kWindow) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const auto g = gaussian_taps();
  const int w = a.width, h = a.height;
  const std::size_t n = a.pixel_count();

  double total = 0.0;
  for (int ch = 0; ch < a.channels; ++ch) {
    std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
    for (std::size_t i = 0; i < n; ++i) {
      pa[i] = a.data[i * static_cast<std::size_t>(a.channels) + static_cast<std::size_t>(ch)];
      pb[i] = b.data[i * static_cast<std::size_t>(b.channels) + static_cast<std::size_t>(ch)];
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, w, h, g);
    const auto mu_b = filter_valid(pb, w, h, g);
    const auto e_aa = filter_valid(paa, w, h, g);
    const auto e_bb = filter_valid(pbb, w, h, g);
    const auto e_ab = filter_valid(pab, w, h, g);
    double sum = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
      const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
      sum += num / den;
    }
    total += sum / static_cast<double>(mu_a.size());
  }
  return total / a.channels;
}

std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "round,view,psnr,ssim\n";
  for (const auto& r : rows) out += fmt::format("{},{},{:.6f},{:.6f}\n", r.round, r.view, r.psnr, r.ssim);
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << format_metrics_csv(rows);
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != "round,view,psnr,ssim")
    throw std::runtime_error(fmt::format("{}: missing metrics header", path.string()));
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<std::string, 4> f;
    std::istringstream ls(line);
    for (auto& field : f)
      if (!std::getline(ls, field, ',')) throw std::runtime_error(fmt::format("{}: malformed row '{}'", path.string(), line));
    rows.push_back(MetricsRow{std::stoi(f[0]), f[1], std::stod(f[2]), std::stod(f[3])});
  }
  return rows;
}

}  // namespace renerf

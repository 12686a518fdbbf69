// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations. Written from the formulas, not from
// the library code, so the library can be checked against them.
#pragma once

#include "renerf/field.hpp"
#include "renerf/image.hpp"
#include "renerf/optim.hpp"
#include "renerf/render.hpp"
#include "renerf/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using renerf::Vec3;

struct Composite {
  Vec3 color = Vec3::Zero();
  std::vector<double> weights;
  double residual = 1.0;
};

// T_i = exp(-sum_{j<i} o_j delta_j), w_i = T_i (1 - exp(-o_i delta_i)).
inline Composite composite(const std::vector<double>& density, const std::vector<double>& delta,
                           const std::vector<Vec3>& color, const Vec3& background) {
  Composite out;
  double optical_depth = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) {
    const double t = std::exp(-optical_depth);
    const double w = t * (1.0 - std::exp(-density[i] * delta[i]));
    out.weights.push_back(w);
    out.color += w * color[i];
    optical_depth += density[i] * delta[i];
  }
  out.residual = std::exp(-optical_depth);
  out.color += out.residual * background;
  return out;
}

inline double psnr(const renerf::Image& a, const renerf::Image& b) {
  long double sse = 0.0L;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const long double d = static_cast<long double>(a.data[i]) - static_cast<long double>(b.data[i]);
    sse += d * d;
  }
  const long double mse = sse / static_cast<long double>(a.data.size());
  return static_cast<double>(-10.0L * std::log10(mse));
}

// Direct 2-D windowed SSIM: every window sum evaluated from scratch.
inline double ssim(const renerf::Image& a, const renerf::Image& b) {
  constexpr int k = 11;
  constexpr double sigma = 1.5;
  double kernel[k][k];
  double total = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double di = i - 5, dj = j - 5;
      kernel[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      total += kernel[i][j];
    }
  for (auto& row : kernel)
    for (double& v : row) v /= total;
  const double c1 = 0.0001, c2 = 0.0009;
  double channel_sum = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    double sum = 0.0;
    int count = 0;
    for (int y = 0; y + k <= a.height; ++y)
      for (int x = 0; x + k <= a.width; ++x) {
        double ma = 0, mb = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            ma += kernel[i][j] * a.at(x + j, y + i, c);
            mb += kernel[i][j] * b.at(x + j, y + i, c);
          }
        double va = 0, vb = 0, cov = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const double da = a.at(x + j, y + i, c) - ma, db = b.at(x + j, y + i, c) - mb;
            va += kernel[i][j] * da * da;
            vb += kernel[i][j] * db * db;
            cov += kernel[i][j] * da * db;
          }
        sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    channel_sum += sum / count;
  }
  return channel_sum / a.channels;
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Trilinear weight of vertex `v` of a grid at point x; zero outside the box.
inline double hat_weight(const renerf::GridResolution& res, const renerf::BoundingBox& box, std::size_t v,
                         const Vec3& x) {
  if (!box.contains(x)) return 0.0;
  const int n[3] = {res.nx, res.ny, res.nz};
  const std::size_t idx[3] = {v % static_cast<std::size_t>(res.nx),
                              (v / static_cast<std::size_t>(res.nx)) % static_cast<std::size_t>(res.ny),
                              v / (static_cast<std::size_t>(res.nx) * static_cast<std::size_t>(res.ny))};
  double w = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double u = (x[a] - box.min[a]) / (box.max[a] - box.min[a]) * (n[a] - 1);
    w *= std::max(0.0, 1.0 - std::abs(u - static_cast<double>(idx[a])));
  }
  return w;
}

// Ray colour with sample positions displaced by the deformation offsets
// (3 per deformation vertex), bin-centre samples.
inline Vec3 deformed_color(const renerf::VoxelGrid& grid, const renerf::GridResolution& def_res,
                           const renerf::BoundingBox& def_box, const std::vector<double>& offsets,
                           const renerf::Ray& ray, int n_samples, const Vec3& background) {
  const double bin = (ray.t_far - ray.t_near) / n_samples;
  std::vector<double> density, delta(static_cast<std::size_t>(n_samples), bin);
  std::vector<Vec3> color;
  for (int i = 0; i < n_samples; ++i) {
    const Vec3 x = ray.origin + (ray.t_near + (i + 0.5) * bin) * ray.direction;
    Vec3 shift = Vec3::Zero();
    for (std::size_t v = 0; v < def_res.vertex_count(); ++v) {
      const double w = hat_weight(def_res, def_box, v, x);
      if (w != 0.0) shift += w * Vec3(offsets[3 * v], offsets[3 * v + 1], offsets[3 * v + 2]);
    }
    const renerf::FieldSample f = renerf::sample_field(grid, x + shift);
    density.push_back(f.density);
    color.push_back(f.rgb);
  }
  return composite(density, delta, color, background).color;
}

// (2/|R|) sum_r sum_c (dC/dtheta)^2 + 2 lambda by central differences.
inline std::vector<double> hessian_by_differences(const renerf::VoxelGrid& grid, const renerf::DeformationField& field,
                                                  const std::vector<renerf::Ray>& pool, int n_samples, double h,
                                                  const Vec3& background = Vec3::Ones()) {
  std::vector<double> out(field.offsets.size(), 0.0);
  std::vector<double> theta(field.offsets.size(), 0.0);
  for (std::size_t p = 0; p < theta.size(); ++p) {
    double acc = 0.0;
    for (const auto& ray : pool) {
      theta[p] = h;
      const Vec3 plus = deformed_color(grid, field.resolution, field.bbox, theta, ray, n_samples, background);
      theta[p] = -h;
      const Vec3 minus = deformed_color(grid, field.resolution, field.bbox, theta, ray, n_samples, background);
      theta[p] = 0.0;
      acc += ((plus - minus) / (2.0 * h)).squaredNorm();
    }
    out[p] = 2.0 / static_cast<double>(pool.size()) * acc + 2.0 * field.lambda;
  }
  return out;
}

// Random grid with densities away from zero and colours away from saturation.
inline renerf::VoxelGrid random_grid(renerf::GridResolution res, std::uint64_t seed, double density_scale = 3.0) {
  renerf::VoxelGrid g(res, renerf::BoundingBox{});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& d : g.raw_density()) d = density_scale * u(rng);
  for (double& c : g.raw_color()) c = 2.0 * u(rng);
  return g;
}

// Ray through the unit-ish box from a random point on a sphere of radius 3.
inline renerf::Ray random_ray(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  Vec3 origin(n(rng), n(rng), n(rng));
  origin = 3.0 * origin.normalized();
  const Vec3 target(u(rng), u(rng), u(rng));
  renerf::Ray r;
  r.origin = origin;
  r.direction = (target - origin).normalized();
  r.t_near = 1.0;
  r.t_far = 5.0;
  return r;
}

struct GradientCheck {
  double max_relative_error = 0.0;
  int checked = 0;
};

// Compares backward() against central differences of evaluate_loss() on
// `count` parameters drawn uniformly from both blocks. Relative error uses
// max(|analytic|, |numeric|, floor) as denominator.
inline GradientCheck check_gradient(const renerf::VoxelGrid& grid, const renerf::RayBatch& batch,
                                    const renerf::TrainConfig& config, int count, std::uint64_t seed, double h = 1e-4,
                                    double floor = 1e-8) {
  const renerf::GridGradient grad = renerf::backward(grid, batch, config);
  std::mt19937_64 rng(seed);
  const std::size_t nd = grid.raw_density().size();
  std::uniform_int_distribution<std::size_t> pick(0, nd + grid.raw_color().size() - 1);
  GradientCheck out;
  renerf::VoxelGrid probe = grid;
  for (int k = 0; k < count; ++k) {
    const std::size_t p = pick(rng);
    const bool density = p < nd;
    double& slot = density ? probe.raw_density()[p] : probe.raw_color()[p - nd];
    const double analytic = density ? grad.density[p] : grad.color[p - nd];
    const double original = slot;
    const double numeric = central_difference(
        [&](double v) {
          slot = v;
          return renerf::evaluate_loss(probe, batch, config);
        },
        original, h);
    slot = original;
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(analytic - numeric) / denom);
    ++out.checked;
  }
  return out;
}

inline renerf::RayBatch random_batch(std::size_t rays, std::uint64_t seed, bool jitter = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  renerf::RayBatch b;
  for (std::size_t i = 0; i < rays; ++i) {
    b.rays.push_back(random_ray(rng));
    b.target.emplace_back(u(rng), u(rng), u(rng));
    b.view.push_back(0);
  }
  if (jitter) b.jitter_seed = seed * 7 + 1;
  return b;
}

}  // namespace oracle

// SPDX-License-Identifier: Apache-2.0
#include "renerf/uncertainty.hpp"

#include "renerf/parallel.hpp"
#include "renerf/render.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace renerf {

DeformationField DeformationField::for_grid(const VoxelGrid& grid, double lambda) {
  const auto& r = grid.resolution();
  auto half = [](int n) { return std::max(2, (n + 1) / 2); };
  DeformationField f;
  f.resolution = GridResolution{half(r.nx), half(r.ny), half(r.nz)};
  f.bbox = grid.bbox();
  f.offsets.assign(f.resolution.vertex_count() * 3, 0.0);
  f.lambda = lambda;
  return f;
}

void DeformationField::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("deformation field: lambda must be positive");
  if (offsets.size() != resolution.vertex_count() * 3) throw std::invalid_argument("deformation field: bad size");
  if (std::any_of(offsets.begin(), offsets.end(), [](double v) { return v != 0.0; }))
    throw std::invalid_argument("deformation field: offsets must be zero for the Laplace approximation");
}

namespace {

// dC/dx for every sample of a ray, each a 3x3 (channel x axis) block.
struct SampleJacobian {
  std::uint32_t base;
  std::array<double, 3> frac;
  Mat3 d_color_d_x;
};

template <typename Emit>
void ray_position_jacobians(const VoxelGrid& grid, const GridLocator& radiance, const GridLocator& deform,
                            const Ray& ray, int n_samples, const Vec3& background, Emit&& emit) {
  const auto n = static_cast<std::size_t>(n_samples);
  const auto& rd = grid.raw_density();
  const auto& rc = grid.raw_color();
  const double bin = (ray.t_far - ray.t_near) / n_samples;

  struct Sample {
    bool inside = false;
    Vec3 x;
    double alpha = 0.0;
    double transmittance = 1.0;
    Vec3 color;
    Vec3 d_density_d_x;  // gradient of activated density
    Mat3 d_color_d_x;    // rows: channels of activated colour
  };
  std::vector<Sample> s(n);
  double transmittance = 1.0;
  std::array<double, 3> frac{};
  std::array<double, 8> w{};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = ray.t_near + (static_cast<double>(i) + 0.5) * bin;
    Sample& si = s[i];
    si.x = ray.origin + t * ray.direction;
    si.transmittance = transmittance;
    std::uint32_t base = 0;
    if (!radiance.locate(si.x, base, frac)) continue;
    si.inside = true;
    GridLocator::weights(frac, w);
    double d = 0.0;
    Vec3 c = Vec3::Zero();
    Vec3 grad_d = Vec3::Zero();
    Mat3 grad_c = Mat3::Zero();
    for (int k = 0; k < 8; ++k) {
      const std::size_t v = base + radiance.offset(k);
      const double wk = w[static_cast<std::size_t>(k)];
      const Vec3 cv(rc[3 * v], rc[3 * v + 1], rc[3 * v + 2]);
      d += wk * rd[v];
      c += wk * cv;
      Vec3 dw;
      for (int a = 0; a < 3; ++a) {
        double g = ((k >> a) & 1 ? 1.0 : -1.0) / radiance.cell_size(a);
        for (int b = 0; b < 3; ++b)
          if (b != a) g *= ((k >> b) & 1) ? frac[static_cast<std::size_t>(b)] : 1.0 - frac[static_cast<std::size_t>(b)];
        dw[a] = g;
      }
      grad_d += rd[v] * dw;
      grad_c += cv * dw.transpose();
    }
    const double density = softplus(d);
    si.color = Vec3(sigmoid(c.x()), sigmoid(c.y()), sigmoid(c.z()));
    si.d_density_d_x = softplus_grad(d) * grad_d;
    for (int ch = 0; ch < 3; ++ch) si.d_color_d_x.row(ch) = si.color[ch] * (1.0 - si.color[ch]) * grad_c.row(ch);
    si.alpha = 1.0 - std::exp(-density * bin);
    transmittance *= 1.0 - si.alpha;
  }

  Vec3 suffix = transmittance * background;
  for (std::size_t ii = n; ii-- > 0;) {
    const Sample& si = s[ii];
    if (!si.inside) continue;
    const double t_next = si.transmittance * (1.0 - si.alpha);
    const double weight = si.transmittance * si.alpha;
    const Vec3 d_c_d_density = bin * (t_next * si.color - suffix);
    const Mat3 jac = d_c_d_density * si.d_density_d_x.transpose() + weight * si.d_color_d_x;
    suffix += weight * si.color;
    std::uint32_t base = 0;
    if (!deform.locate(si.x, base, frac)) continue;
    emit(SampleJacobian{base, frac, jac});
  }
}

// Per-ray accumulation of J_p = sum_i W_p(x_i) dC/dx_i, then (dC/dtheta)^2 summed over channels.
class RayAccumulator {
 public:
  explicit RayAccumulator(std::size_t vertices) : jac_(vertices, Mat3::Zero()), touched_flag_(vertices, 0) {}

  void add(const GridLocator& deform, const SampleJacobian& sj) {
    std::array<double, 8> w{};
    GridLocator::weights(sj.frac, w);
    for (int k = 0; k < 8; ++k) {
      const std::size_t p = sj.base + deform.offset(k);
      if (!touched_flag_[p]) {
        touched_flag_[p] = 1;
        touched_.push_back(p);
      }
      jac_[p] += w[static_cast<std::size_t>(k)] * sj.d_color_d_x;
    }
  }

  // Emits (vertex, squared column norms) in ascending vertex order and resets.
  template <typename Emit>
  void flush(Emit&& emit) {
    std::sort(touched_.begin(), touched_.end());
    for (std::size_t p : touched_) {
      const Mat3& j = jac_[p];
      emit(p, Vec3(j.col(0).squaredNorm(), j.col(1).squaredNorm(), j.col(2).squaredNorm()));
      jac_[p].setZero();
      touched_flag_[p] = 0;
    }
    touched_.clear();
  }

 private:
  std::vector<Mat3> jac_;
  std::vector<std::uint8_t> touched_flag_;
  std::vector<std::size_t> touched_;
};

}  // namespace

HessianDiag accumulate_hessian(const VoxelGrid& grid, const DeformationField& field, const std::vector<Ray>& pool,
                               int n_samples, const Vec3& background) {
  if (pool.empty()) throw std::invalid_argument("accumulate_hessian: empty ray pool");
  if (n_samples < 1) throw std::invalid_argument("accumulate_hessian: n_samples must be >= 1");
  field.validate();
  const GridLocator radiance(grid.resolution(), grid.bbox());
  const GridLocator deform(field.resolution, field.bbox);
  const std::size_t vertices = field.resolution.vertex_count();

  HessianDiag h;
  h.resolution = field.resolution;
  h.bbox = field.bbox;
  h.values.assign(vertices * 3, 0.0);

  // Raw sums of squared Jacobians, reduced in ray order.
  std::vector<std::vector<std::pair<std::size_t, Vec3>>> per_ray(pool.size());
  parallel_for(pool.size(), [&](std::size_t begin, std::size_t end) {
    RayAccumulator acc(vertices);
    for (std::size_t r = begin; r < end; ++r) {
      ray_position_jacobians(grid, radiance, deform, pool[r], n_samples, background,
                             [&](const SampleJacobian& sj) { acc.add(deform, sj); });
      acc.flush([&](std::size_t p, const Vec3& sq) { per_ray[r].emplace_back(p, sq); });
    }
  });
  for (const auto& entries : per_ray)
    for (const auto& [p, sq] : entries)
      for (int a = 0; a < 3; ++a) h.values[3 * p + static_cast<std::size_t>(a)] += sq[a];

  const double scale = 2.0 / static_cast<double>(pool.size());
  for (double& v : h.values) v = scale * v + 2.0 * field.lambda;
  return h;
}

UncertaintyField sigma_field(const HessianDiag& hessian, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("sigma_field: lambda must be positive");
  if (hessian.values.size() != hessian.resolution.vertex_count() * 3)
    throw std::invalid_argument("sigma_field: hessian size does not match its resolution");
  UncertaintyField f;
  f.resolution = hessian.resolution;
  f.bbox = hessian.bbox;
  f.hessian = hessian.values;
  f.sigma_axes.resize(f.hessian.size());
  f.sigma.resize(hessian.resolution.vertex_count());
  for (std::size_t i = 0; i < f.hessian.size(); ++i) {
    if (!(f.hessian[i] > 0.0)) throw std::invalid_argument("sigma_field: hessian entries must be positive");
    f.sigma_axes[i] = 1.0 / f.hessian[i];
  }
  for (std::size_t v = 0; v < f.sigma.size(); ++v) {
    const double sx = f.sigma_axes[3 * v], sy = f.sigma_axes[3 * v + 1], sz = f.sigma_axes[3 * v + 2];
    f.sigma[v] = std::sqrt(sx * sx + sy * sy + sz * sz);
  }
  f.sigma_max = f.sigma.empty() ? 0.0 : *std::max_element(f.sigma.begin(), f.sigma.end());
  return f;
}

double UncertaintyField::sample(const Vec3& x) const {
  const auto stencil = trilinear_stencil(resolution, bbox, x);
  if (!stencil) return sigma_max;
  double u = 0.0;
  for (std::size_t k = 0; k < 8; ++k) u += stencil->weight[k] * sigma[stencil->index[k]];
  return u;
}

double ray_uncertainty(const RaySamples& samples, const RenderOutput& out, const UncertaintyField& field) {
  double u = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    total += out.weights[i];
    if (out.weights[i] > 0.0) u += out.weights[i] * field.sample(samples.position[i]);
  }
  return total < kEmptyRayWeight ? field.sigma_max : u;
}

UncertaintyMap render_uncertainty(const VoxelGrid& grid, const UncertaintyField& field, const Camera& camera,
                                  int n_samples, const Vec3& background) {
  camera.validate();
  UncertaintyMap map;
  map.width = camera.width;
  map.height = camera.height;
  map.values.assign(static_cast<std::size_t>(camera.width) * static_cast<std::size_t>(camera.height), 0.0);
  parallel_for(static_cast<std::size_t>(camera.height), [&](std::size_t begin, std::size_t end) {
    for (std::size_t y = begin; y < end; ++y) {
      for (int x = 0; x < camera.width; ++x) {
        const Ray ray = pixel_ray(camera, x + 0.5, static_cast<double>(y) + 0.5);
        const RaySamples samples = sample_ray(grid, ray, n_samples);
        map.values[y * static_cast<std::size_t>(camera.width) + static_cast<std::size_t>(x)] =
            ray_uncertainty(samples, composite(samples, background), field);
      }
    }
  });
  return map;
}

PixelMask make_mask(const UncertaintyMap& map, const MaskRule& rule) {
  PixelMask mask;
  if (rule.kind == MaskRule::Kind::quantile) {
    if (!(rule.value >= 0.0 && rule.value <= 1.0)) throw std::invalid_argument("make_mask: quantile must lie in [0,1]");
    if (map.values.empty()) throw std::invalid_argument("make_mask: empty uncertainty map");
    std::vector<double> sorted = map.values;
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    // Nearest rank of the (1-q)-quantile, 1-based.
    auto rank = static_cast<long>(std::ceil((1.0 - rule.value) * n - 1e-9));
    rank = std::clamp(rank, 1L, static_cast<long>(sorted.size()));
    mask.mu = sorted[static_cast<std::size_t>(rank - 1)];
    // Ties at the maximum would otherwise mask nothing; mask the tied block instead.
    if (rule.value > 0.0 && mask.mu == sorted.back()) {
      mask.keep.resize(map.values.size());
      for (std::size_t i = 0; i < map.values.size(); ++i) mask.keep[i] = map.values[i] < mask.mu ? 1 : 0;
      return mask;
    }
  } else {
    mask.mu = rule.value;
  }
  mask.keep.resize(map.values.size());
  for (std::size_t i = 0; i < map.values.size(); ++i) mask.keep[i] = map.values[i] <= mask.mu ? 1 : 0;
  return mask;
}

std::vector<Ray> build_ray_pool(const std::vector<TrainingView>& views, std::size_t max_rays, std::uint64_t seed) {
  std::vector<Ray> pool;
  for (const auto& view : views) {
    if (view.kind != ViewKind::original) continue;
    auto rays = generate_rays(view.camera);
    pool.insert(pool.end(), rays.begin(), rays.end());
  }
  if (pool.size() > max_rays) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < max_rays; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(max_rays);
  }
  return pool;
}

void save_sigma_field(const UncertaintyField& field, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  const auto& r = field.resolution;
  const auto& b = field.bbox;
  out << fmt::format("RNFSIGMA1 {} {} {} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g}\n", r.nx, r.ny, r.nz,
                     b.min.x(), b.min.y(), b.min.z(), b.max.x(), b.max.y(), b.max.z(), field.sigma_max);
  for (double s : field.sigma) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(s));
    for (int k = 0; k < 4; ++k) out.put(static_cast<char>((bits >> (8 * k)) & 0xFFu));
  }
}

UncertaintyField load_sigma_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string magic;
  UncertaintyField f;
  hs >> magic >> f.resolution.nx >> f.resolution.ny >> f.resolution.nz >> f.bbox.min.x() >> f.bbox.min.y() >>
      f.bbox.min.z() >> f.bbox.max.x() >> f.bbox.max.y() >> f.bbox.max.z() >> f.sigma_max;
  if (!hs || magic != "RNFSIGMA1") throw std::runtime_error(fmt::format("{} is not a sigma field", path.string()));
  f.sigma.resize(f.resolution.vertex_count());
  for (double& s : f.sigma) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("sigma field truncated");
    const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    s = static_cast<double>(std::bit_cast<float>(bits));
  }
  return f;
}

}  // namespace renerf

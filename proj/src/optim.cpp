// SPDX-License-Identifier: Apache-2.0
#include "renerf/optim.hpp"

#include "renerf/parallel.hpp"
#include "renerf/render.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace renerf {

TrainingView TrainingView::original(const Camera& camera, Image image) {
  TrainingView view;
  view.camera = camera;
  view.mask.assign(image.pixel_count(), 1);
  view.image = std::move(image);
  view.kind = ViewKind::original;
  return view;
}

std::size_t TrainingView::usable_pixels() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void TrainingView::validate() const {
  camera.validate();
  if (image.width != camera.width || image.height != camera.height || image.channels != 3)
    throw std::invalid_argument("training view: image does not match camera");
  if (mask.size() != image.pixel_count()) throw std::invalid_argument("training view: mask size mismatch");
  if (kind == ViewKind::original && usable_pixels() != mask.size())
    throw std::invalid_argument("training view: original views must be fully unmasked");
}

void TrainConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("train: iterations must be >= 1");
  if (batch_rays < 1) throw std::invalid_argument("train: batch_rays must be >= 1");
  if (n_samples < 1) throw std::invalid_argument("train: n_samples must be >= 1");
  if (!(synthetic_stop_fraction >= 0.0 && synthetic_stop_fraction <= 1.0))
    throw std::invalid_argument("train: synthetic_stop_fraction must lie in [0,1]");
  if (!(tv_weight >= 0.0)) throw std::invalid_argument("train: tv_weight must be >= 0");
  if (!(learning_rate_density >= 0.0) || !(learning_rate_color >= 0.0))
    throw std::invalid_argument("train: learning rates must be >= 0");
}

RaySampler::RaySampler(const std::vector<TrainingView>& views) : views_(&views) {
  for (std::size_t v = 0; v < views.size(); ++v) {
    views[v].validate();
    auto& pool = views[v].kind == ViewKind::original ? original_ : synthetic_;
    for (std::size_t p = 0; p < views[v].mask.size(); ++p)
      if (views[v].mask[p]) pool.push_back(Pixel{static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(p)});
  }
  original_pixels_ = original_.size();
  synthetic_pixels_ = synthetic_.size();
  if (original_pixels_ == 0) throw std::invalid_argument("ray sampler: need at least one original view");
}

RayBatch RaySampler::sample(int iteration, const TrainConfig& config, std::mt19937_64& rng) const {
  const bool with_synthetic = synthetic_active(iteration, config);
  const std::uint64_t total = original_pixels_ + (with_synthetic ? synthetic_pixels_ : 0);
  std::uniform_int_distribution<std::uint64_t> pick(0, total - 1);
  RayBatch batch;
  const auto n = static_cast<std::size_t>(config.batch_rays);
  batch.rays.reserve(n);
  batch.target.reserve(n);
  batch.view.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t k = pick(rng);
    const Pixel& px = k < original_pixels_ ? original_[k] : synthetic_[k - original_pixels_];
    const TrainingView& view = (*views_)[px.view];
    const int x = static_cast<int>(px.pixel % static_cast<std::uint32_t>(view.camera.width));
    const int y = static_cast<int>(px.pixel / static_cast<std::uint32_t>(view.camera.width));
    batch.rays.push_back(pixel_ray(view.camera, x + 0.5, y + 0.5));
    batch.target.emplace_back(view.image.at(x, y, 0), view.image.at(x, y, 1), view.image.at(x, y, 2));
    batch.view.push_back(px.view);
    if (view.kind == ViewKind::synthetic) ++batch.synthetic_rays;
  }
  batch.jitter_seed = rng();
  return batch;
}

RayBatch sample_ray_batch(const std::vector<TrainingView>& views, int iteration, const TrainConfig& config,
                          std::mt19937_64& rng) {
  return RaySampler(views).sample(iteration, config, rng);
}

double photometric_loss(std::span<const Vec3> pred, std::span<const Vec3> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("photometric_loss: batch size mismatch");
  if (pred.empty()) throw std::invalid_argument("photometric_loss: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - target[i]).squaredNorm();
  return sum / (3.0 * static_cast<double>(pred.size()));
}

namespace {

// Adds tv_weight * d TV / d raw_density into `grad` (when non-null) and returns TV.
double accumulate_tv(const VoxelGrid& grid, double weight, std::vector<double>* grad) {
  const auto& d = grid.raw_density();
  const auto& r = grid.resolution();
  const double inv_v = 1.0 / static_cast<double>(grid.vertex_count());
  const double scale = 2.0 * weight * inv_v;
  const std::size_t sx = 1;
  const std::size_t sy = static_cast<std::size_t>(r.nx);
  const std::size_t sz = static_cast<std::size_t>(r.nx) * static_cast<std::size_t>(r.ny);
  double tv = 0.0;
  auto edge = [&](std::size_t a, std::size_t b) {
    const double diff = d[b] - d[a];
    tv += diff * diff;
    if (grad) {
      (*grad)[b] += scale * diff;
      (*grad)[a] -= scale * diff;
    }
  };
  for (int iz = 0; iz < r.nz; ++iz) {
    for (int iy = 0; iy < r.ny; ++iy) {
      std::size_t v = grid.vertex_index(0, iy, iz);
      for (int ix = 0; ix < r.nx; ++ix, ++v) {
        if (ix + 1 < r.nx) edge(v, v + sx);
        if (iy + 1 < r.ny) edge(v, v + sy);
        if (iz + 1 < r.nz) edge(v, v + sz);
      }
    }
  }
  return tv * inv_v;
}

struct SampleGrad {
  std::uint32_t base;
  std::array<double, 3> frac;
  double density;
  std::array<double, 3> color;
};

struct RayScratch {
  std::vector<std::uint8_t> inside;
  std::vector<std::uint32_t> base;
  std::vector<std::array<double, 3>> frac;
  std::vector<double> raw_density;
  std::vector<double> alpha;
  std::vector<double> transmittance;
  std::vector<Vec3> color;

  void resize(std::size_t n) {
    inside.resize(n);
    base.resize(n);
    frac.resize(n);
    raw_density.resize(n);
    alpha.resize(n);
    transmittance.resize(n);
    color.resize(n);
  }
};

// Forward pass of one ray; fills scratch and returns the composited colour.
// Arithmetic mirrors sample_ray + composite so both paths agree bit-for-bit.
Vec3 forward_ray(const VoxelGrid& grid, const GridLocator& locator, const Ray& ray, int n_samples,
                 std::optional<std::uint64_t> jitter_seed, const Vec3& background, RayScratch& s) {
  const auto n = static_cast<std::size_t>(n_samples);
  s.resize(n);
  const auto& rd = grid.raw_density();
  const auto& rc = grid.raw_color();
  const double bin = (ray.t_far - ray.t_near) / n_samples;
  double transmittance = 1.0;
  Vec3 color = Vec3::Zero();
  std::array<double, 8> w{};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = ray.t_near + (static_cast<double>(i) + jitter_offset(jitter_seed, i)) * bin;
    const Vec3 x = ray.origin + t * ray.direction;
    s.transmittance[i] = transmittance;
    if (!locator.locate(x, s.base[i], s.frac[i])) {
      s.inside[i] = 0;
      s.alpha[i] = 0.0;
      s.raw_density[i] = 0.0;
      s.color[i] = background;
      continue;
    }
    s.inside[i] = 1;
    GridLocator::weights(s.frac[i], w);
    double d = 0.0, c0 = 0.0, c1 = 0.0, c2 = 0.0;
    for (int k = 0; k < 8; ++k) {
      const std::size_t v = s.base[i] + locator.offset(k);
      const double wk = w[static_cast<std::size_t>(k)];
      d += wk * rd[v];
      c0 += wk * rc[3 * v];
      c1 += wk * rc[3 * v + 1];
      c2 += wk * rc[3 * v + 2];
    }
    s.raw_density[i] = d;
    s.color[i] = Vec3(sigmoid(c0), sigmoid(c1), sigmoid(c2));
    const double alpha = 1.0 - std::exp(-softplus(d) * bin);
    s.alpha[i] = alpha;
    color += (transmittance * alpha) * s.color[i];
    transmittance *= 1.0 - alpha;
  }
  return color + transmittance * background;
}

// Backward pass for one ray given dL/dC; emits per-sample raw-parameter gradients.
template <typename Emit>
void backward_ray(const RayScratch& s, std::size_t n, double bin, const Vec3& d_color, const Vec3& background,
                  double residual, Emit&& emit) {
  Vec3 suffix = residual * background;  // sum_{j>i} w_j c_j + T_{N+1} bg
  for (std::size_t ii = n; ii-- > 0;) {
    if (!s.inside[ii]) continue;
    const double alpha = s.alpha[ii];
    const double t_i = s.transmittance[ii];
    const double t_next = t_i * (1.0 - alpha);
    const Vec3& c = s.color[ii];
    const double w = t_i * alpha;
    const double d_density = bin * d_color.dot(t_next * c - suffix);
    const double g_raw_density = d_density * softplus_grad(s.raw_density[ii]);
    const std::array<double, 3> g_raw_color{d_color.x() * w * c.x() * (1.0 - c.x()),
                                            d_color.y() * w * c.y() * (1.0 - c.y()),
                                            d_color.z() * w * c.z() * (1.0 - c.z())};
    emit(ii, g_raw_density, g_raw_color);
    suffix += w * c;
  }
}

void scatter(const GridLocator& locator, std::uint32_t base, const std::array<double, 3>& frac, double g_density,
             const std::array<double, 3>& g_color, GridGradient& grad) {
  std::array<double, 8> w{};
  GridLocator::weights(frac, w);
  for (int k = 0; k < 8; ++k) {
    const std::size_t v = base + locator.offset(k);
    const double wk = w[static_cast<std::size_t>(k)];
    grad.density[v] += wk * g_density;
    grad.color[3 * v] += wk * g_color[0];
    grad.color[3 * v + 1] += wk * g_color[1];
    grad.color[3 * v + 2] += wk * g_color[2];
  }
}

std::optional<std::uint64_t> ray_jitter(const RayBatch& batch, std::size_t ray) {
  if (!batch.jitter_seed) return std::nullopt;
  return mix_seed(*batch.jitter_seed, ray);
}

}  // namespace

double total_variation(const VoxelGrid& grid) { return accumulate_tv(grid, 0.0, nullptr); }

std::vector<Vec3> render_batch(const VoxelGrid& grid, const RayBatch& batch, const TrainConfig& config) {
  const GridLocator locator(grid.resolution(), grid.bbox());
  std::vector<Vec3> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t begin, std::size_t end) {
    RayScratch scratch;
    for (std::size_t r = begin; r < end; ++r)
      out[r] = forward_ray(grid, locator, batch.rays[r], config.n_samples, ray_jitter(batch, r), config.background,
                           scratch);
  });
  return out;
}

double evaluate_loss(const VoxelGrid& grid, const RayBatch& batch, const TrainConfig& config) {
  const auto pred = render_batch(grid, batch, config);
  double loss = photometric_loss(pred, batch.target);
  if (config.tv_weight > 0.0) loss += config.tv_weight * total_variation(grid);
  return loss;
}

GridGradient backward(const VoxelGrid& grid, const RayBatch& batch, const TrainConfig& config) {
  if (batch.size() == 0) throw std::invalid_argument("backward: empty batch");
  const GridLocator locator(grid.resolution(), grid.bbox());
  GridGradient grad;
  grad.density.assign(grid.vertex_count(), 0.0);
  grad.color.assign(grid.vertex_count() * 3, 0.0);

  const std::size_t n_rays = batch.size();
  const auto n = static_cast<std::size_t>(config.n_samples);
  const double norm = 2.0 / (3.0 * static_cast<double>(n_rays));
  std::vector<double> sq_error(n_rays);

  auto process = [&](std::size_t r, RayScratch& scratch, auto&& emit) {
    const Ray& ray = batch.rays[r];
    const Vec3 c = forward_ray(grid, locator, ray, config.n_samples, ray_jitter(batch, r), config.background, scratch);
    const Vec3 diff = c - batch.target[r];
    sq_error[r] = diff.squaredNorm();
    double residual = 1.0;
    for (std::size_t i = 0; i < n; ++i) residual *= 1.0 - scratch.alpha[i];
    backward_ray(scratch, n, (ray.t_far - ray.t_near) / config.n_samples, norm * diff, config.background, residual,
                 emit);
  };

  if (worker_count() <= 1) {
    RayScratch scratch;
    for (std::size_t r = 0; r < n_rays; ++r) {
      process(r, scratch, [&](std::size_t i, double gd, const std::array<double, 3>& gc) {
        scatter(locator, scratch.base[i], scratch.frac[i], gd, gc, grad);
      });
    }
  } else {
    // Per-ray records, reduced below in ray order so any thread count gives the same sums.
    std::vector<std::vector<SampleGrad>> records(n_rays);
    parallel_for(n_rays, [&](std::size_t begin, std::size_t end) {
      RayScratch scratch;
      for (std::size_t r = begin; r < end; ++r) {
        auto& rec = records[r];
        process(r, scratch, [&](std::size_t i, double gd, const std::array<double, 3>& gc) {
          rec.push_back(SampleGrad{scratch.base[i], scratch.frac[i], gd, gc});
        });
      }
    });
    for (const auto& rec : records)
      for (const auto& g : rec) scatter(locator, g.base, g.frac, g.density, g.color, grad);
  }

  double sum = 0.0;
  for (double e : sq_error) sum += e;
  grad.photometric = sum / (3.0 * static_cast<double>(n_rays));
  grad.loss = grad.photometric;
  if (config.tv_weight > 0.0) grad.loss += config.tv_weight * accumulate_tv(grid, config.tv_weight, &grad.density);
  return grad;
}

namespace {

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad, double lr, const TrainConfig& c,
            double bias1, double bias2) {
    const double b1 = c.adam_beta1, b2 = c.adam_beta2, eps = c.adam_eps;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      params[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
    }
  }
};

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

TrainResult train(VoxelGrid initial, const std::vector<TrainingView>& views, const TrainConfig& config,
                  const TrainObserver* observer) {
  config.validate();
  const RaySampler sampler(views);
  TrainResult result;
  result.grid = std::move(initial);
  VoxelGrid& grid = result.grid;

  AdamState density_state(grid.raw_density().size());
  AdamState color_state(grid.raw_color().size());
  std::mt19937_64 rng(config.seed);

  double block_sum = 0.0;
  int block_count = 0;
  for (int it = 0; it < config.iterations; ++it) {
    const RayBatch batch = sampler.sample(it, config, rng);
    if (observer && observer->on_batch) observer->on_batch(it, batch);
    const GridGradient grad = backward(grid, batch, config);
    if (!std::isfinite(grad.loss) || !all_finite(grad.density) || !all_finite(grad.color)) {
      const std::string block = !all_finite(grad.density) ? "raw_density"
                                : !all_finite(grad.color) ? "raw_color"
                                                          : "loss";
      throw TrainingAborted(it, block, fmt::format("non-finite loss at iteration {} (block {})", it, block));
    }
    const double t = static_cast<double>(it + 1);
    const double bias1 = 1.0 - std::pow(config.adam_beta1, t);
    const double bias2 = 1.0 - std::pow(config.adam_beta2, t);
    density_state.step(grid.raw_density(), grad.density, config.learning_rate_density, config, bias1, bias2);
    color_state.step(grid.raw_color(), grad.color, config.learning_rate_color, config, bias1, bias2);

    block_sum += grad.loss;
    ++block_count;
    if (block_count == 100 || it + 1 == config.iterations) {
      result.loss_curve.push_back(LossSample{it + 1 - block_count, block_sum / block_count});
      block_sum = 0.0;
      block_count = 0;
    }
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossSample>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << "iteration,mean_loss\n";
  for (const auto& s : curve) out << fmt::format("{},{:.10g}\n", s.iteration, s.mean_loss);
}

}  // namespace renerf

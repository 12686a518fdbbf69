// SPDX-License-Identifier: Apache-2.0
#include "renerf/render.hpp"

#include "renerf/parallel.hpp"

#include <cmath>
#include <stdexcept>

namespace renerf {

RenderOutput composite(const RaySamples& samples, const Vec3& background) {
  const std::size_t n = samples.size();
  RenderOutput out;
  out.weights.resize(n);
  out.transmittance.resize(n);
  double transmittance = 1.0;
  double depth = 0.0;
  Vec3 color = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const double o = samples.density[i];
    const double d = samples.delta[i];
    if (!(o >= 0.0)) throw std::invalid_argument("composite: negative or NaN density");
    if (!(d >= 0.0)) throw std::invalid_argument("composite: negative or NaN delta");
    const double alpha = 1.0 - std::exp(-o * d);
    const double w = transmittance * alpha;
    out.transmittance[i] = transmittance;
    out.weights[i] = w;
    color += w * samples.color[i];
    depth += w * samples.t[i];
    transmittance *= 1.0 - alpha;
  }
  out.residual_transmittance = transmittance;
  out.color = color + transmittance * background;
  out.depth = depth + transmittance * samples.t_far;
  return out;
}

double jitter_offset(std::optional<std::uint64_t> jitter_seed, std::size_t sample) {
  if (!jitter_seed) return 0.5;
  return unit_from_bits(mix_seed(*jitter_seed, sample));
}

RaySamples sample_ray(const VoxelGrid& grid, const Ray& ray, int n_samples, std::optional<std::uint64_t> jitter_seed) {
  if (n_samples < 1) throw std::invalid_argument("sample_ray: n_samples must be >= 1");
  const auto n = static_cast<std::size_t>(n_samples);
  RaySamples s;
  s.t.resize(n);
  s.delta.assign(n, (ray.t_far - ray.t_near) / n_samples);
  s.position.resize(n);
  s.density.resize(n);
  s.color.resize(n);
  s.t_far = ray.t_far;
  const double bin = (ray.t_far - ray.t_near) / n_samples;
  for (std::size_t i = 0; i < n; ++i) {
    s.t[i] = ray.t_near + (static_cast<double>(i) + jitter_offset(jitter_seed, i)) * bin;
    s.position[i] = ray.origin + s.t[i] * ray.direction;
    const FieldSample f = sample_field(grid, s.position[i]);
    s.density[i] = f.density;
    s.color[i] = f.rgb;
  }
  return s;
}

namespace {

void render_pixel(const VoxelGrid& grid, const Camera& camera, const RenderOptions& options, int x, int y,
                  RenderedView& view) {
  const Ray ray = pixel_ray(camera, x + 0.5, y + 0.5);
  const RenderOutput out = composite(sample_ray(grid, ray, options.n_samples), options.background);
  for (int c = 0; c < 3; ++c) view.color.at(x, y, c) = out.color[c];
  view.depth[static_cast<std::size_t>(y) * static_cast<std::size_t>(camera.width) + static_cast<std::size_t>(x)] = out.depth;
}

RenderedView blank_view(const Camera& camera) {
  camera.validate();
  RenderedView view;
  view.color = Image(camera.width, camera.height, 3);
  view.depth.assign(view.color.pixel_count(), 0.0);
  return view;
}

}  // namespace

RenderedView render_image(const VoxelGrid& grid, const Camera& camera, const RenderOptions& options) {
  RenderedView view = blank_view(camera);
  parallel_for(static_cast<std::size_t>(camera.height), [&](std::size_t begin, std::size_t end) {
    for (std::size_t y = begin; y < end; ++y)
      for (int x = 0; x < camera.width; ++x) render_pixel(grid, camera, options, x, static_cast<int>(y), view);
  });
  return view;
}

RenderedView render_image_sequential(const VoxelGrid& grid, const Camera& camera, const RenderOptions& options) {
  RenderedView view = blank_view(camera);
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) render_pixel(grid, camera, options, x, y, view);
  return view;
}

void write_depth(const std::filesystem::path& png_path, const std::filesystem::path& raw_path,
                 const RenderedView& view, const Camera& camera) {
  write_png16(png_path, view.depth, camera.width, camera.height, camera.far);
  if (!raw_path.empty()) write_float_sidecar(raw_path, view.depth, camera.width, camera.height, 1);
}

}  // namespace renerf

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "renerf/field.hpp"
#include "renerf/geometry.hpp"
#include "renerf/image.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace renerf {

struct RaySamples {
  std::vector<double> t;      // ray parameter of each sample
  std::vector<double> delta;  // bin widths
  std::vector<Vec3> position;
  std::vector<double> density;
  std::vector<Vec3> color;
  double t_far = 0.0;

  std::size_t size() const { return t.size(); }
};

struct RenderOutput {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  std::vector<double> weights;
  std::vector<double> transmittance;  // T_i before each sample
  double residual_transmittance = 1.0;
};

// alpha_i = 1 - exp(-o_i delta_i), T_i = prod_{j<i} (1 - alpha_j),
// C = sum T_i alpha_i c_i + T_{N+1} background.
RenderOutput composite(const RaySamples& samples, const Vec3& background);

// Uniform bins over [t_near, t_far]; with a jitter seed each sample is drawn
// uniformly inside its bin instead of at the bin centre.
RaySamples sample_ray(const VoxelGrid& grid, const Ray& ray, int n_samples,
                      std::optional<std::uint64_t> jitter_seed = std::nullopt);

// Position of sample i inside its bin, in [0,1). 0.5 without jitter.
double jitter_offset(std::optional<std::uint64_t> jitter_seed, std::size_t sample);

struct RenderedView {
  Image color;
  std::vector<double> depth;
};

struct RenderOptions {
  int n_samples = 128;
  Vec3 background = Vec3::Ones();
};

RenderedView render_image(const VoxelGrid& grid, const Camera& camera, const RenderOptions& options);

// Pixel loop in a fixed order on the calling thread; reference for the parallel path.
RenderedView render_image_sequential(const VoxelGrid& grid, const Camera& camera, const RenderOptions& options);

// 16-bit PNG scaled by the far plane; raw float32 sidecar unless `raw_path` is empty.
void write_depth(const std::filesystem::path& png_path, const std::filesystem::path& raw_path,
                 const RenderedView& view, const Camera& camera);

}  // namespace renerf

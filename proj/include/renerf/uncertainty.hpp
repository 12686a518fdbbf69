// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "renerf/field.hpp"
#include "renerf/geometry.hpp"
#include "renerf/optim.hpp"
#include "renerf/render.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace renerf {

/// Coarse grid of per-vertex spatial offsets applied to radiance-field
/// sample positions. The Laplace approximation is taken around zero offsets.
struct DeformationField {
  GridResolution resolution;
  BoundingBox bbox;
  std::vector<double> offsets;  // 3 per vertex
  double lambda = 1e-2;

  // Half the radiance-grid resolution per axis (at least 2), same box.
  static DeformationField for_grid(const VoxelGrid& grid, double lambda);
  void validate() const;
};

// Diagonal of the Gauss-Newton Hessian, 3 entries (x, y, z) per deformation vertex.
struct HessianDiag {
  GridResolution resolution;
  BoundingBox bbox;
  std::vector<double> values;
};

/// H_p = (2/|R|) sum_r sum_channels (dC(r)/dtheta_p)^2 + 2*lambda.
HessianDiag accumulate_hessian(const VoxelGrid& grid, const DeformationField& field, const std::vector<Ray>& pool,
                               int n_samples, const Vec3& background = Vec3::Ones());

struct UncertaintyField {
  GridResolution resolution;
  BoundingBox bbox;
  std::vector<double> hessian;     // 3 per vertex
  std::vector<double> sigma_axes;  // 3 per vertex, 1/H
  std::vector<double> sigma;       // |sigma_axes|_2 per vertex
  double sigma_max = 0.0;

  // Trilinear interpolation of sigma; sigma_max outside the box.
  double sample(const Vec3& x) const;
};

UncertaintyField sigma_field(const HessianDiag& hessian, double lambda);

struct UncertaintyMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;
};

// Rays whose compositing weights sum below this are treated as empty.
inline constexpr double kEmptyRayWeight = 1e-6;

// Weighted sum over one composited ray; sigma_max when the weights sum below kEmptyRayWeight.
double ray_uncertainty(const RaySamples& samples, const RenderOutput& out, const UncertaintyField& field);

/// U(r) = sum_i w_i U(x_i) with the colour compositing weights; empty rays get sigma_max.
UncertaintyMap render_uncertainty(const VoxelGrid& grid, const UncertaintyField& field, const Camera& camera,
                                  int n_samples, const Vec3& background = Vec3::Ones());

struct MaskRule {
  enum class Kind { absolute, quantile };
  Kind kind = Kind::quantile;
  double value = 0.10;  // mu for absolute, q for quantile

  static MaskRule absolute(double mu) { return {Kind::absolute, mu}; }
  static MaskRule quantile(double q) { return {Kind::quantile, q}; }
};

struct PixelMask {
  std::vector<std::uint8_t> keep;
  double mu = 0.0;
};

// Keeps pixels with U <= mu. The quantile rule resolves mu as the nearest-rank
// (1-q)-quantile of the map first.
PixelMask make_mask(const UncertaintyMap& map, const MaskRule& rule);

// Rays of all original views, subsampled to at most max_rays with a seeded shuffle.
std::vector<Ray> build_ray_pool(const std::vector<TrainingView>& views, std::size_t max_rays, std::uint64_t seed);

// "RNFSIGMA1 mx my mz minx miny minz maxx maxy maxz sigma_max" header, then float32 sigma per vertex.
void save_sigma_field(const UncertaintyField& field, const std::filesystem::path& path);
UncertaintyField load_sigma_field(const std::filesystem::path& path);

}  // namespace renerf

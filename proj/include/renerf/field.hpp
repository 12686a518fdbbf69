// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "renerf/geometry.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace renerf {

struct GridResolution {
  int nx = 2;
  int ny = 2;
  int nz = 2;

  std::size_t vertex_count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  bool operator==(const GridResolution&) const = default;
};

struct BoundingBox {
  Vec3 min = Vec3::Constant(-1.0);
  Vec3 max = Vec3::Constant(1.0);

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  void validate() const;
  bool operator==(const BoundingBox& o) const { return min == o.min && max == o.max; }
};

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_grad(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// The eight vertices surrounding a point and their trilinear weights.
/// `frac` is the position inside the cell in [0,1]^3 and `cell_size` the
/// world-space edge lengths, needed for spatial derivatives.
struct TrilinearStencil {
  std::array<std::uint32_t, 8> index{};
  std::array<double, 8> weight{};
  std::array<double, 3> frac{};
  std::array<double, 3> cell_size{};

  // d weight[k] / d x_axis, world units.
  double weight_derivative(int k, int axis) const;
};

/// Allocation-free cell lookup shared by the hot loops. `locate` yields the
/// base vertex of the enclosing cell and the fractional position in it.
class GridLocator {
 public:
  GridLocator(const GridResolution& res, const BoundingBox& bbox) : bbox_(bbox) {
    n_ = {res.nx, res.ny, res.nz};
    const auto nx = static_cast<std::uint32_t>(res.nx);
    const auto nxy = nx * static_cast<std::uint32_t>(res.ny);
    for (int k = 0; k < 8; ++k)
      offset_[static_cast<std::size_t>(k)] = static_cast<std::uint32_t>(k & 1) + nx * static_cast<std::uint32_t>((k >> 1) & 1) +
                                            nxy * static_cast<std::uint32_t>((k >> 2) & 1);
    stride_ = {1u, nx, nxy};
  }

  bool locate(const Vec3& x, std::uint32_t& base, std::array<double, 3>& frac) const {
    if (!bbox_.contains(x)) return false;
    base = 0;
    for (int a = 0; a < 3; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      const double u = (x[a] - bbox_.min[a]) / (bbox_.max[a] - bbox_.min[a]) * (n_[ua] - 1);
      int i = static_cast<int>(std::floor(u));
      i = i < 0 ? 0 : (i > n_[ua] - 2 ? n_[ua] - 2 : i);
      frac[ua] = u - i;
      base += static_cast<std::uint32_t>(i) * stride_[ua];
    }
    return true;
  }

  static void weights(const std::array<double, 3>& f, std::array<double, 8>& w) {
    for (int k = 0; k < 8; ++k)
      w[static_cast<std::size_t>(k)] = ((k & 1) ? f[0] : 1.0 - f[0]) * (((k >> 1) & 1) ? f[1] : 1.0 - f[1]) *
                                       (((k >> 2) & 1) ? f[2] : 1.0 - f[2]);
  }

  std::uint32_t offset(int k) const { return offset_[static_cast<std::size_t>(k)]; }
  double cell_size(int axis) const {
    return (bbox_.max[axis] - bbox_.min[axis]) / (n_[static_cast<std::size_t>(axis)] - 1);
  }

 private:
  BoundingBox bbox_;
  std::array<int, 3> n_{};
  std::array<std::uint32_t, 3> stride_{};
  std::array<std::uint32_t, 8> offset_{};
};

// Vertex k of a stencil has offsets (k & 1, (k >> 1) & 1, (k >> 2) & 1).
std::optional<TrilinearStencil> trilinear_stencil(const GridResolution& res, const BoundingBox& bbox,
                                                  const Vec3& x);

// Vertex layout is x-fastest: index = ix + nx * (iy + ny * iz).
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(GridResolution resolution, BoundingBox bbox);

  const GridResolution& resolution() const { return resolution_; }
  const BoundingBox& bbox() const { return bbox_; }
  std::size_t vertex_count() const { return resolution_.vertex_count(); }
  std::size_t vertex_index(int ix, int iy, int iz) const {
    return static_cast<std::size_t>(ix) +
           static_cast<std::size_t>(resolution_.nx) *
               (static_cast<std::size_t>(iy) + static_cast<std::size_t>(resolution_.ny) * static_cast<std::size_t>(iz));
  }
  Vec3 vertex_position(int ix, int iy, int iz) const;

  std::vector<double>& raw_density() { return raw_density_; }
  const std::vector<double>& raw_density() const { return raw_density_; }
  // Three interleaved channels per vertex.
  std::vector<double>& raw_color() { return raw_color_; }
  const std::vector<double>& raw_color() const { return raw_color_; }

  // Rounds every parameter to float32 so checkpoints round-trip exactly.
  void quantize_to_float();

  bool operator==(const VoxelGrid&) const = default;

 private:
  GridResolution resolution_;
  BoundingBox bbox_;
  std::vector<double> raw_density_;
  std::vector<double> raw_color_;
};

struct FieldSample {
  double density = 0.0;
  Vec3 rgb = Vec3::Ones();
};

// Interpolates raw parameters then activates. Outside the box: zero density, background colour.
FieldSample sample_field(const VoxelGrid& grid, const Vec3& x, const Vec3& background = Vec3::Ones());

struct Primitive {
  enum class Shape { sphere, box };
  Shape shape = Shape::sphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Constant(0.5);  // sphere: size.x() is the radius; box: half extents
  Vec3 color = Vec3::Constant(0.5);
  double density = 10.0;

  bool contains(const Vec3& p) const;
  double signed_distance(const Vec3& p) const;
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  Vec3 background = Vec3::Ones();
};

// Activated density of vertices outside every primitive.
inline constexpr double kEmptySpaceDensity = 1e-8;

VoxelGrid build_scene(const SceneSpec& spec, GridResolution resolution, const BoundingBox& bbox);

VoxelGrid init_grid(GridResolution resolution, const BoundingBox& bbox, std::uint64_t seed);

// Text header line "RNFGRID1 nx ny nz minx miny minz maxx maxy maxz", then
// little-endian float32 density block followed by the colour block.
void save_grid(const VoxelGrid& grid, const std::filesystem::path& path);
VoxelGrid load_grid(const std::filesystem::path& path);

}  // namespace renerf

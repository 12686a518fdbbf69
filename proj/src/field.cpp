// SPDX-License-Identifier: Apache-2.0
#include "renerf/field.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace renerf {

void BoundingBox::validate() const {
  if (!(min.array() < max.array()).all()) throw std::invalid_argument("bounding box: require min < max componentwise");
}

double TrilinearStencil::weight_derivative(int k, int axis) const {
  double d = 1.0;
  for (int a = 0; a < 3; ++a) {
    const bool hi = (k >> a) & 1;
    if (a == axis)
      d *= (hi ? 1.0 : -1.0) / cell_size[static_cast<std::size_t>(a)];
    else
      d *= hi ? frac[static_cast<std::size_t>(a)] : 1.0 - frac[static_cast<std::size_t>(a)];
  }
  return d;
}

std::optional<TrilinearStencil> trilinear_stencil(const GridResolution& res, const BoundingBox& bbox,
                                                  const Vec3& x) {
  const GridLocator locator(res, bbox);
  TrilinearStencil s;
  std::uint32_t base = 0;
  if (!locator.locate(x, base, s.frac)) return std::nullopt;
  GridLocator::weights(s.frac, s.weight);
  for (int k = 0; k < 8; ++k) {
    s.index[static_cast<std::size_t>(k)] = base + locator.offset(k);
    s.cell_size[static_cast<std::size_t>(k % 3)] = locator.cell_size(k % 3);
  }
  return s;
}

VoxelGrid::VoxelGrid(GridResolution resolution, BoundingBox bbox) : resolution_(resolution), bbox_(bbox) {
  if (resolution.nx < 2 || resolution.ny < 2 || resolution.nz < 2)
    throw std::invalid_argument("voxel grid: every axis needs at least 2 vertices");
  bbox_.validate();
  raw_density_.assign(resolution.vertex_count(), 0.0);
  raw_color_.assign(resolution.vertex_count() * 3, 0.0);
}

Vec3 VoxelGrid::vertex_position(int ix, int iy, int iz) const {
  const Vec3 t(static_cast<double>(ix) / (resolution_.nx - 1), static_cast<double>(iy) / (resolution_.ny - 1),
               static_cast<double>(iz) / (resolution_.nz - 1));
  return bbox_.min + (bbox_.max - bbox_.min).cwiseProduct(t);
}

void VoxelGrid::quantize_to_float() {
  for (double& v : raw_density_) v = static_cast<double>(static_cast<float>(v));
  for (double& v : raw_color_) v = static_cast<double>(static_cast<float>(v));
}

FieldSample sample_field(const VoxelGrid& grid, const Vec3& x, const Vec3& background) {
  const auto stencil = trilinear_stencil(grid.resolution(), grid.bbox(), x);
  if (!stencil) return FieldSample{0.0, background};
  const auto& rd = grid.raw_density();
  const auto& rc = grid.raw_color();
  double d = 0.0;
  Vec3 c = Vec3::Zero();
  for (std::size_t k = 0; k < 8; ++k) {
    const double w = stencil->weight[k];
    const std::size_t v = stencil->index[k];
    d += w * rd[v];
    c += w * Vec3(rc[3 * v], rc[3 * v + 1], rc[3 * v + 2]);
  }
  return FieldSample{softplus(d), Vec3(sigmoid(c.x()), sigmoid(c.y()), sigmoid(c.z()))};
}

bool Primitive::contains(const Vec3& p) const { return signed_distance(p) <= 0.0; }

double Primitive::signed_distance(const Vec3& p) const {
  if (shape == Shape::sphere) return (p - center).norm() - size.x();
  const Vec3 q = (p - center).cwiseAbs() - size;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

namespace {

void check_inside(const Primitive& prim, const BoundingBox& bbox) {
  const Vec3 half = prim.shape == Primitive::Shape::sphere ? Vec3::Constant(prim.size.x()) : prim.size;
  if (!(prim.density > 0.0)) throw std::invalid_argument("scene: primitive density must be positive");
  if ((half.array() <= 0.0).any()) throw std::invalid_argument("scene: primitive size must be positive");
  if (((prim.center - half).array() < bbox.min.array()).any() || ((prim.center + half).array() > bbox.max.array()).any())
    throw std::invalid_argument("scene: primitive extends outside the bounding box");
}

double color_logit(double c) { return logit(std::clamp(c, 1e-4, 1.0 - 1e-4)); }

}  // namespace

VoxelGrid build_scene(const SceneSpec& spec, GridResolution resolution, const BoundingBox& bbox) {
  VoxelGrid grid(resolution, bbox);
  for (const auto& prim : spec.primitives) check_inside(prim, bbox);

  const double empty_raw = inverse_softplus(kEmptySpaceDensity);
  auto& rd = grid.raw_density();
  auto& rc = grid.raw_color();
  for (int iz = 0; iz < resolution.nz; ++iz) {
    for (int iy = 0; iy < resolution.ny; ++iy) {
      for (int ix = 0; ix < resolution.nx; ++ix) {
        const std::size_t v = grid.vertex_index(ix, iy, iz);
        const Vec3 p = grid.vertex_position(ix, iy, iz);
        // Densest containing primitive wins; empty vertices take the colour of the nearest surface.
        const Primitive* owner = nullptr;
        const Primitive* nearest = nullptr;
        double nearest_dist = std::numeric_limits<double>::infinity();
        for (const auto& prim : spec.primitives) {
          const double sd = prim.signed_distance(p);
          if (sd <= 0.0 && (owner == nullptr || prim.density > owner->density)) owner = &prim;
          if (sd < nearest_dist) {
            nearest_dist = sd;
            nearest = &prim;
          }
        }
        rd[v] = owner ? inverse_softplus(owner->density) : empty_raw;
        const Vec3 color = owner ? owner->color : (nearest ? nearest->color : spec.background);
        for (int ch = 0; ch < 3; ++ch) rc[3 * v + static_cast<std::size_t>(ch)] = color_logit(color[ch]);
      }
    }
  }
  return grid;
}

VoxelGrid init_grid(GridResolution resolution, const BoundingBox& bbox, std::uint64_t seed) {
  VoxelGrid grid(resolution, bbox);
  std::fill(grid.raw_density().begin(), grid.raw_density().end(), inverse_softplus(0.01));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1e-2, 1e-2);
  for (double& c : grid.raw_color()) c = dist(rng);
  return grid;
}

namespace {

constexpr const char* kGridMagic = "RNFGRID1";

void write_floats(std::ofstream& out, const std::vector<double>& values) {
  std::vector<char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) bytes[4 * i + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void read_floats(std::ifstream& in, std::vector<double>& values, const std::string& what) {
  std::vector<unsigned char> bytes(values.size() * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error(fmt::format("grid checkpoint truncated in {} block", what));
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + static_cast<std::size_t>(b)]) << (8 * b);
    values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
}

}  // namespace

void save_grid(const VoxelGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write grid checkpoint {}", path.string()));
  const auto& r = grid.resolution();
  const auto& b = grid.bbox();
  out << fmt::format("{} {} {} {} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g}\n", kGridMagic, r.nx, r.ny, r.nz,
                     b.min.x(), b.min.y(), b.min.z(), b.max.x(), b.max.y(), b.max.z());
  write_floats(out, grid.raw_density());
  write_floats(out, grid.raw_color());
  if (!out) throw std::runtime_error(fmt::format("failed writing grid checkpoint {}", path.string()));
}

VoxelGrid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open grid checkpoint {}", path.string()));
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("grid checkpoint: missing header");
  std::istringstream hs(header);
  std::string magic;
  GridResolution r;
  BoundingBox b;
  hs >> magic >> r.nx >> r.ny >> r.nz >> b.min.x() >> b.min.y() >> b.min.z() >> b.max.x() >> b.max.y() >> b.max.z();
  if (!hs || magic != kGridMagic) throw std::runtime_error(fmt::format("{} is not a grid checkpoint", path.string()));
  VoxelGrid grid(r, b);
  read_floats(in, grid.raw_density(), "density");
  read_floats(in, grid.raw_color(), "color");
  return grid;
}

}  // namespace renerf

// SPDX-License-Identifier: Apache-2.0
#include "renerf/geometry.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace renerf {

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double s = std::sin(0.5 * angle);
  return Quaternion{std::cos(0.5 * angle), a.x() * s, a.y() * s, a.z() * s}.normalized();
}

Quaternion Quaternion::from_matrix(const Mat3& m) {
  Quaternion q;
  const double trace = m(0, 0) + m(1, 1) + m(2, 2);
  if (trace > 0.0) {
    const double s = 2.0 * std::sqrt(trace + 1.0);
    q.w = 0.25 * s;
    q.x = (m(2, 1) - m(1, 2)) / s;
    q.y = (m(0, 2) - m(2, 0)) / s;
    q.z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
    q.w = (m(2, 1) - m(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (m(0, 1) + m(1, 0)) / s;
    q.z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) > m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
    q.w = (m(0, 2) - m(2, 0)) / s;
    q.x = (m(0, 1) + m(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
    q.w = (m(1, 0) - m(0, 1)) / s;
    q.x = (m(0, 2) + m(2, 0)) / s;
    q.y = (m(1, 2) + m(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return q.normalized();
}

double Quaternion::norm() const { return std::sqrt(dot(*this)); }

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (!(n > 0.0)) throw std::invalid_argument("cannot normalize a zero quaternion");
  return {w / n, x / n, y / n, z / n};
}

Mat3 Quaternion::to_matrix() const {
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

double rotation_angle(const Quaternion& a, const Quaternion& b) {
  const double d = std::min(1.0, std::abs(a.dot(b)));
  return 2.0 * std::acos(d);
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& world_up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(world_up);
  if (right.norm() < 1e-12) throw std::invalid_argument("look_at: up vector parallel to view direction");
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return Pose{eye, Quaternion::from_matrix(r)};
}

void Camera::validate() const {
  if (width < 1 || height < 1) throw std::invalid_argument("camera: width and height must be >= 1");
  if (!(near > 0.0) || !(near < far)) throw std::invalid_argument("camera: require 0 < near < far");
  if (!(focal_x > 0.0) || !(focal_y > 0.0)) throw std::invalid_argument("camera: focal lengths must be positive");
  if (std::abs(pose.rotation.norm() - 1.0) > 1e-9) throw std::invalid_argument("camera: rotation is not a unit quaternion");
}

Quaternion slerp(const Quaternion& a, const Quaternion& b_in, double beta) {
  if (beta == 0.0) return a;
  if (beta == 1.0) return b_in;
  Quaternion b = b_in;
  double d = a.dot(b);
  if (d < 0.0) {
    b = -b;
    d = -d;
  }
  d = std::min(d, 1.0);
  const double theta = std::acos(d);
  const double sin_theta = std::sin(theta);
  double wa = 1.0 - beta;
  double wb = beta;
  if (sin_theta >= 1e-6) {
    wa = std::sin((1.0 - beta) * theta) / sin_theta;
    wb = std::sin(beta * theta) / sin_theta;
  }
  return Quaternion{wa * a.w + wb * b.w, wa * a.x + wb * b.x, wa * a.y + wb * b.y, wa * a.z + wb * b.z}
      .normalized();
}

Pose interpolate_pose(const Pose& a, const Pose& b, double beta) {
  if (beta == 0.0) return a;
  if (beta == 1.0) return b;
  return Pose{(1.0 - beta) * a.position + beta * b.position, slerp(a.rotation, b.rotation, beta)};
}

Camera interpolate_camera(const Camera& a, const Camera& b, double beta) {
  Camera c = a;
  c.pose = interpolate_pose(a.pose, b.pose, beta);
  return c;
}

std::vector<double> interpolation_factors(int n) {
  if (n < 2) throw std::invalid_argument(fmt::format("interpolation_factors: N must be >= 2, got {}", n));
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n - 1));
  for (int j = 1; j < n; ++j) out.push_back(static_cast<double>(j) / static_cast<double>(n));
  return out;
}

std::vector<double> preset_factors(FactorPreset preset) {
  switch (preset) {
    case FactorPreset::two_x: return {0.5};
    case FactorPreset::three_x_thirds: return {0.33, 0.66};
    case FactorPreset::three_x_narrow: return {0.2, 0.8};
    case FactorPreset::three_x_wide: return {0.1, 0.9};
    case FactorPreset::four_x: return {0.25, 0.5, 0.75};
    case FactorPreset::five_x: return {0.2, 0.4, 0.6, 0.8};
    case FactorPreset::seven_x: return {0.1, 0.2, 0.4, 0.6, 0.8, 0.9};
    case FactorPreset::eleven_x: return {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
  }
  throw std::invalid_argument("preset_factors: unknown preset");
}

namespace {

constexpr std::array<std::pair<FactorPreset, std::string_view>, 8> kPresetNames{{
    {FactorPreset::two_x, "two_x"},
    {FactorPreset::three_x_thirds, "three_x_thirds"},
    {FactorPreset::three_x_narrow, "three_x_narrow"},
    {FactorPreset::three_x_wide, "three_x_wide"},
    {FactorPreset::four_x, "four_x"},
    {FactorPreset::five_x, "five_x"},
    {FactorPreset::seven_x, "seven_x"},
    {FactorPreset::eleven_x, "eleven_x"},
}};

}  // namespace

FactorPreset parse_factor_preset(std::string_view name) {
  for (const auto& [preset, n] : kPresetNames)
    if (n == name) return preset;
  throw std::invalid_argument(fmt::format("unknown factor preset '{}'", name));
}

std::string_view preset_name(FactorPreset preset) {
  for (const auto& [p, n] : kPresetNames)
    if (p == preset) return n;
  return "unknown";
}

const std::vector<FactorPreset>& all_factor_presets() {
  static const std::vector<FactorPreset> presets = [] {
    std::vector<FactorPreset> v;
    for (const auto& entry : kPresetNames) v.push_back(entry.first);
    return v;
  }();
  return presets;
}

std::vector<std::size_t> order_poses_by_proximity(const std::vector<Pose>& poses) {
  const std::size_t n = poses.size();
  if (n < 2) throw std::invalid_argument("order_poses_by_proximity: need at least 2 poses");

  auto lex_less = [&](std::size_t a, std::size_t b) {
    const Vec3& pa = poses[a].position;
    const Vec3& pb = poses[b].position;
    if (pa.x() != pb.x()) return pa.x() < pb.x();
    if (pa.y() != pb.y()) return pa.y() < pb.y();
    if (pa.z() != pb.z()) return pa.z() < pb.z();
    return a < b;
  };

  std::size_t current = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (lex_less(i, current)) current = i;

  std::vector<bool> visited(n, false);
  std::vector<std::size_t> order;
  order.reserve(n);
  order.push_back(current);
  visited[current] = true;
  while (order.size() < n) {
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (visited[i]) continue;
      const double d = (poses[i].position - poses[current].position).squaredNorm();
      if (d < best_dist) {
        best_dist = d;
        best = i;
      }
    }
    visited[best] = true;
    order.push_back(best);
    current = best;
  }
  return order;
}

Ray pixel_ray(const Camera& camera, double px, double py) {
  const Vec3 d_cam((px - camera.principal_x) / camera.focal_x, (py - camera.principal_y) / camera.focal_y, 1.0);
  Ray ray;
  ray.origin = camera.pose.position;
  ray.direction = (camera.pose.rotation.to_matrix() * d_cam).normalized();
  ray.t_near = camera.near;
  ray.t_far = camera.far;
  return ray;
}

std::vector<Ray> generate_rays(const Camera& camera) {
  camera.validate();
  const Mat3 r = camera.pose.rotation.to_matrix();
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(camera.width) * static_cast<std::size_t>(camera.height));
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const Vec3 d_cam((x + 0.5 - camera.principal_x) / camera.focal_x,
                       (y + 0.5 - camera.principal_y) / camera.focal_y, 1.0);
      rays.push_back(Ray{camera.pose.position, (r * d_cam).normalized(), camera.near, camera.far});
    }
  }
  return rays;
}

std::vector<Camera> parse_cameras(std::string_view text) {
  std::vector<Camera> cameras;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string tok; fields >> tok;) tokens.push_back(tok);
    if (tokens.empty()) continue;
    if (tokens.size() != 16)
      throw std::invalid_argument(
          fmt::format("camera table line {}: expected 16 fields, got {}", line_no, tokens.size()));
    std::array<double, 16> v{};
    for (std::size_t i = 0; i < 16; ++i) {
      try {
        std::size_t used = 0;
        v[i] = std::stod(tokens[i], &used);
        if (used != tokens[i].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw std::invalid_argument(fmt::format("camera table line {}: bad number '{}'", line_no, tokens[i]));
      }
    }
    Camera c;
    c.pose.position = Vec3(v[1], v[2], v[3]);
    c.pose.rotation = Quaternion{v[4], v[5], v[6], v[7]};
    if (std::abs(c.pose.rotation.norm() - 1.0) > 1e-9) c.pose.rotation = c.pose.rotation.normalized();
    c.focal_x = v[8];
    c.focal_y = v[9];
    c.principal_x = v[10];
    c.principal_y = v[11];
    c.width = static_cast<int>(v[12]);
    c.height = static_cast<int>(v[13]);
    c.near = v[14];
    c.far = v[15];
    c.validate();
    cameras.push_back(c);
  }
  return cameras;
}

std::vector<Camera> read_cameras(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open camera file {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_cameras(ss.str());
}

std::string format_cameras(const std::vector<Camera>& cameras) {
  std::string out = "# id px py pz qw qx qy qz focal_x focal_y cx cy width height near far\n";
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    const Camera& c = cameras[i];
    const Vec3& p = c.pose.position;
    const Quaternion& q = c.pose.rotation;
    out += fmt::format("{} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {} {} {:.17g} {:.17g}\n",
                       i, p.x(), p.y(), p.z(), q.w, q.x, q.y, q.z, c.focal_x, c.focal_y, c.principal_x,
                       c.principal_y, c.width, c.height, c.near, c.far);
  }
  return out;
}

void write_cameras(const std::filesystem::path& path, const std::vector<Camera>& cameras) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write camera file {}", path.string()));
  out << format_cameras(cameras);
}

}  // namespace renerf

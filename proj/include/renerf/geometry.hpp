// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace renerf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion identity() { return {}; }
  static Quaternion from_axis_angle(const Vec3& axis, double angle);
  static Quaternion from_matrix(const Mat3& rotation);

  double dot(const Quaternion& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
  double norm() const;
  Quaternion normalized() const;
  Quaternion operator-() const { return {-w, -x, -y, -z}; }

  Mat3 to_matrix() const;
  Vec3 rotate(const Vec3& v) const { return to_matrix() * v; }
};

// Angle of the relative rotation between two unit quaternions, in [0, pi].
double rotation_angle(const Quaternion& a, const Quaternion& b);

// Rigid camera-to-world transform.
struct Pose {
  Vec3 position = Vec3::Zero();
  Quaternion rotation;
};

// Camera frame follows the OpenCV convention: +x right, +y down, +z forward.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& world_up);

struct Camera {
  Pose pose;
  double focal_x = 1.0;
  double focal_y = 1.0;
  double principal_x = 0.0;
  double principal_y = 0.0;
  int width = 1;
  int height = 1;
  double near = 0.1;
  double far = 10.0;

  // Throws std::invalid_argument when intrinsics or clip range are invalid.
  void validate() const;
  Vec3 forward() const { return pose.rotation.rotate(Vec3::UnitZ()); }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;
};

/// Shortest-arc spherical interpolation. Falls back to normalized lerp when
/// the two rotations are (numerically) the same.
Quaternion slerp(const Quaternion& a, const Quaternion& b, double beta);

Pose interpolate_pose(const Pose& a, const Pose& b, double beta);

// Camera at the interpolated pose, intrinsics copied from `a`.
Camera interpolate_camera(const Camera& a, const Camera& b, double beta);

// Equally spaced factors {j/N : j = 1..N-1}.
std::vector<double> interpolation_factors(int n);

enum class FactorPreset {
  two_x,           // .50
  three_x_thirds,  // .33-.66
  three_x_narrow,  // .20-.80
  three_x_wide,    // .10-.90
  four_x,          // .25-.50-.75
  five_x,          // .2-.4-.6-.8
  seven_x,         // 5x + .1-.9
  eleven_x,        // 7x + .05-.3-.5-.7-.95
};

std::vector<double> preset_factors(FactorPreset preset);
FactorPreset parse_factor_preset(std::string_view name);
std::string_view preset_name(FactorPreset preset);
const std::vector<FactorPreset>& all_factor_presets();

/// Greedy nearest-neighbour chain over camera positions. Starts at the
/// lexicographically smallest position; ties go to the lower index.
std::vector<std::size_t> order_poses_by_proximity(const std::vector<Pose>& poses);

Ray pixel_ray(const Camera& camera, double px, double py);

// Row-major, one ray through each pixel centre.
std::vector<Ray> generate_rays(const Camera& camera);

// Plain-text camera table:
//   id px py pz qw qx qy qz focal_x focal_y cx cy width height near far
std::vector<Camera> read_cameras(const std::filesystem::path& path);
std::vector<Camera> parse_cameras(std::string_view text);
void write_cameras(const std::filesystem::path& path, const std::vector<Camera>& cameras);
std::string format_cameras(const std::vector<Camera>& cameras);

}  // namespace renerf

#include "atom/camera.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace atom {

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

double length(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 normalize(const Vec3& a) {
  const double len = length(a);
  return a * (1.0 / len);
}

CameraBasis camera_basis(const Camera& cam) {
  if (!(cam.fov_y_deg > 0.0 && cam.fov_y_deg < 180.0))
    throw CameraError(fmt::format("field of view {} outside (0, 180)", cam.fov_y_deg));
  if (cam.width < 1 || cam.height < 1) throw CameraError("camera image must be at least 1x1");
  const Vec3 view = cam.look_at - cam.eye;
  const double dist = length(view);
  if (!(dist > 1e-12)) throw CameraError("camera eye coincides with look_at");
  CameraBasis b;
  b.forward = view * (1.0 / dist);
  const Vec3 side = cross(b.forward, cam.up);
  const double side_len = length(side);
  if (!(side_len > 1e-9 * std::max(1.0, length(cam.up)))) throw CameraError("camera up vector is parallel to the view");
  b.right = side * (1.0 / side_len);
  b.up = cross(b.right, b.forward);
  return b;
}

Camera orbit_camera(double azimuth_deg, double elevation_deg, double distance, double fov_y_deg, int width,
                    int height) {
  const double az = azimuth_deg * kDeg, el = elevation_deg * kDeg;
  Camera cam;
  cam.eye = {distance * std::cos(el) * std::cos(az), distance * std::cos(el) * std::sin(az), distance * std::sin(el)};
  cam.look_at = {0, 0, 0};
  // Straight above or below, tilt "up" toward the far side instead of +z.
  cam.up = std::abs(std::cos(el)) < 1e-6 ? Vec3{-std::cos(az), -std::sin(az), 0.0} : Vec3{0, 0, 1};
  cam.fov_y_deg = fov_y_deg;
  cam.width = width;
  cam.height = height;
  return cam;
}

Rays make_rays(const Camera& cam) {
  const auto b = camera_basis(cam);
  const double tan_half = std::tan(0.5 * cam.fov_y_deg * kDeg);
  const double aspect = static_cast<double>(cam.width) / cam.height;
  Rays rays;
  rays.width = cam.width;
  rays.height = cam.height;
  rays.origins.assign(static_cast<std::size_t>(cam.width) * cam.height, cam.eye);
  rays.directions.resize(rays.origins.size());
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      const double x = ((c + 0.5) / cam.width * 2.0 - 1.0) * tan_half * aspect;
      const double y = (1.0 - (r + 0.5) / cam.height * 2.0) * tan_half;
      rays.directions[static_cast<std::size_t>(r) * cam.width + c] = normalize(b.forward + b.right * x + b.up * y);
    }
  return rays;
}

bool ray_box(const Vec3& origin, const Vec3& dir, double half_extent, double& t_near, double& t_far) {
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < -half_extent || origin[a] > half_extent) return false;
      continue;
    }
    double t0 = (-half_extent - origin[a]) / dir[a];
    double t1 = (half_extent - origin[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
  }
  if (!(hi > lo)) return false;
  t_near = lo;
  t_far = hi;
  return true;
}

bool project_point(const Camera& cam, const CameraBasis& basis, const Vec3& p, double& col, double& row,
                   double& depth) {
  const Vec3 d = p - cam.eye;
  depth = dot(d, basis.forward);
  if (!(depth > 1e-9)) return false;
  const double tan_half = std::tan(0.5 * cam.fov_y_deg * kDeg);
  const double aspect = static_cast<double>(cam.width) / cam.height;
  const double x = dot(d, basis.right) / depth / (tan_half * aspect);
  const double y = dot(d, basis.up) / depth / tan_half;
  col = (x + 1.0) * 0.5 * cam.width;
  row = (1.0 - y) * 0.5 * cam.height;
  return true;
}

}  // namespace atom

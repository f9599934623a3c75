#pragma once

// Pinhole cameras, z-up world. Azimuth 0 looks from +x toward the origin;
// azimuth grows toward +y.

#include <array>
#include <stdexcept>
#include <vector>

namespace atom {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double length(const Vec3& a);
Vec3 normalize(const Vec3& a);

class CameraError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Camera {
  Vec3 eye{3, 0, 0};
  Vec3 look_at{0, 0, 0};
  Vec3 up{0, 0, 1};
  double fov_y_deg = 50.0;
  int width = 64;
  int height = 64;
};

struct CameraBasis {
  Vec3 forward, right, up;
};

// Throws CameraError for eye == look_at, a FOV outside (0, 180), empty
// images, or an up vector parallel to the view direction.
CameraBasis camera_basis(const Camera& cam);

// Camera on a sphere around the origin.
Camera orbit_camera(double azimuth_deg, double elevation_deg, double distance, double fov_y_deg, int width,
                    int height);

struct Rays {
  int width = 0;
  int height = 0;
  std::vector<Vec3> origins;     // row-major pixels
  std::vector<Vec3> directions;  // unit length
};

// One ray through each pixel center.
Rays make_rays(const Camera& cam);

// Slab test against the cube [-h, h]^3. Returns false on a miss.
bool ray_box(const Vec3& origin, const Vec3& dir, double half_extent, double& t_near, double& t_far);

// Pixel position (column, row; pixel centers at +0.5) of a world point and
// its view-space depth along the forward axis.
bool project_point(const Camera& cam, const CameraBasis& basis, const Vec3& p, double& col, double& row,
                   double& depth);

}  // namespace atom

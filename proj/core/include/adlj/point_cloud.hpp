#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace adlj {

struct Point {
  double x = 0, y = 0, z = 0;
  double intensity = 0;  // unitless, [0, 1]

  friend bool operator==(const Point&, const Point&) = default;
};

struct PointCloud {
  std::vector<Point> points;
  std::string scene_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Axis-aligned metric range; each axis is the half-open interval [min, max).
struct Range3 {
  std::array<double, 3> min{-16.0, -16.0, -2.0};
  std::array<double, 3> max{16.0, 16.0, 2.0};

  bool contains(const Point& p) const {
    return p.x >= min[0] && p.x < max[0] && p.y >= min[1] && p.y < max[1] && p.z >= min[2] && p.z < max[2];
  }
};

enum class ObjectClass { car, pedestrian, cyclist };
const char* to_string(ObjectClass c);
ObjectClass object_class_from_string(const std::string& s);

struct Box {
  std::array<double, 3> center{};
  std::array<double, 3> extent{};  // full lengths along x, y, z
  ObjectClass cls = ObjectClass::car;

  bool contains(const Point& p) const;
};

struct SceneAnnotation {
  std::vector<Box> boxes;
};

struct SceneConfig {
  Range3 range;
  double ground_z = -1.7;
  double ground_band = 0.1;  // non-noise ground points lie in ground_z +- band/2
  int min_objects = 2;
  int max_objects = 6;
  int min_points_per_object = 24;
  double object_density = 40.0;  // surface points per m^2 at 10 m
  double object_min_distance = 4.0;
  double object_max_distance = 14.0;
  int ring_count = 8;
  double ring_first_radius = 2.5;
  double ring_growth = 1.3;
  int ring_points = 512;
  int ring_sectors = 16;
  double sector_dropout = 0.35;
  int noise_points = 6;
  int min_points = 64;
  int max_points = 60000;
};

/// Throws ConfigError for degenerate settings (e.g. zero-width range).
void validate(const SceneConfig& config);

struct Scene {
  PointCloud cloud;
  SceneAnnotation annotation;
};

/// Deterministic synthetic driving scene. Sensor sits at the origin; the
/// ground is swept by concentric rings with random azimuth dropout; objects
/// only receive points on faces turned towards the sensor and cast ground
/// shadows behind them.
Scene generate_scene(std::uint64_t seed, const SceneConfig& config);

struct KittiReadStats {
  std::size_t records = 0;
  std::size_t dropped_non_finite = 0;
};

/// Little-endian float32 (x, y, z, intensity) quadruples, no header.
PointCloud parse_kitti_bin(std::span<const std::byte> bytes, KittiReadStats* stats = nullptr);
PointCloud read_kitti_bin(const std::filesystem::path& path, KittiReadStats* stats = nullptr);
std::vector<std::byte> encode_kitti_bin(const PointCloud& cloud);
void write_kitti_bin(const std::filesystem::path& path, const PointCloud& cloud);

/// Points strictly inside the half-open range, order preserved.
PointCloud crop_to_range(const PointCloud& cloud, const Range3& range);

std::string format_annotation(const SceneAnnotation& annotation);
SceneAnnotation parse_annotation(const std::string& text);

}  // namespace adlj

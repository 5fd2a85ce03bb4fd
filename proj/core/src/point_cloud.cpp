#include "adlj/point_cloud.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <numbers>
#include <sstream>

#include "adlj/errors.hpp"
#include "adlj/rng.hpp"

namespace adlj {

const char* to_string(ObjectClass c) {
  switch (c) {
    case ObjectClass::car: return "car";
    case ObjectClass::pedestrian: return "pedestrian";
    case ObjectClass::cyclist: return "cyclist";
  }
  return "?";
}

ObjectClass object_class_from_string(const std::string& s) {
  if (s == "car") return ObjectClass::car;
  if (s == "pedestrian") return ObjectClass::pedestrian;
  if (s == "cyclist") return ObjectClass::cyclist;
  throw ConfigError("unknown object class '" + s + "'");
}

bool Box::contains(const Point& p) const {
  const double c[3] = {p.x, p.y, p.z};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(c[a] - center[a]) > extent[a] / 2) return false;
  }
  return true;
}

void validate(const SceneConfig& c) {
  for (int a = 0; a < 3; ++a) {
    if (!(c.range.max[a] > c.range.min[a])) {
      throw ConfigError("scene range axis " + std::to_string(a) + " is empty or inverted");
    }
  }
  if (c.min_objects < 0 || c.max_objects < c.min_objects) throw ConfigError("scene object count range is invalid");
  if (c.min_points_per_object < 1) throw ConfigError("min_points_per_object must be >= 1");
  if (c.ring_count < 0 || c.ring_points < 0 || c.noise_points < 0) throw ConfigError("negative point budget");
  if (c.ring_sectors < 1) throw ConfigError("ring_sectors must be >= 1");
  if (c.ring_first_radius <= 0 || c.ring_growth <= 0) throw ConfigError("ring geometry must be positive");
  if (c.sector_dropout < 0 || c.sector_dropout >= 1) throw ConfigError("sector_dropout must lie in [0, 1)");
  if (c.object_min_distance <= 0 || c.object_max_distance < c.object_min_distance) {
    throw ConfigError("object distance range is invalid");
  }
  if (c.min_points < 0 || c.max_points < c.min_points) throw ConfigError("point count bounds are invalid");
  if (c.ground_band < 0) throw ConfigError("ground_band must be >= 0");
}

namespace {

struct ClassTemplate {
  ObjectClass cls;
  double length, width, height;
};

constexpr ClassTemplate kTemplates[] = {
    {ObjectClass::car, 3.9, 1.7, 1.5},
    {ObjectClass::pedestrian, 0.8, 0.7, 1.75},
    {ObjectClass::cyclist, 1.8, 0.6, 1.7},
};

bool footprints_overlap(const Box& a, const Box& b, double margin) {
  for (int k = 0; k < 2; ++k) {
    if (std::abs(a.center[k] - b.center[k]) > (a.extent[k] + b.extent[k]) / 2 + margin) return false;
  }
  return true;
}

// Does the segment origin -> (px, py) cross the box footprint?
bool shadowed_by(const Box& b, double px, double py) {
  double t0 = 0.0, t1 = 1.0;
  const double d[2] = {px, py};
  for (int k = 0; k < 2; ++k) {
    const double lo = b.center[k] - b.extent[k] / 2;
    const double hi = b.center[k] + b.extent[k] / 2;
    if (d[k] == 0.0) {
      if (0.0 < lo || 0.0 > hi) return false;
      continue;
    }
    double ta = lo / d[k], tb = hi / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

void add_object_points(const Box& b, const SceneConfig& cfg, Rng& rng, std::vector<Point>& out) {
  constexpr double kInset = 0.01;
  const double hx = b.extent[0] / 2, hy = b.extent[1] / 2, hz = b.extent[2] / 2;
  struct Face {
    int axis;
    double sign;
    double area;
  };
  std::vector<Face> faces;
  // A face is visible when the sensor (origin) lies on its outward side.
  if (0.0 > b.center[0] + hx) faces.push_back({0, +1, b.extent[1] * b.extent[2]});
  if (0.0 < b.center[0] - hx) faces.push_back({0, -1, b.extent[1] * b.extent[2]});
  if (0.0 > b.center[1] + hy) faces.push_back({1, +1, b.extent[0] * b.extent[2]});
  if (0.0 < b.center[1] - hy) faces.push_back({1, -1, b.extent[0] * b.extent[2]});
  if (0.0 > b.center[2] + hz) faces.push_back({2, +1, b.extent[0] * b.extent[1]});
  if (faces.empty()) return;

  double total_area = 0.0;
  for (const auto& f : faces) total_area += f.area;
  const double dist = std::hypot(b.center[0], b.center[1]);
  const double falloff = (10.0 / std::max(dist, 1.0)) * (10.0 / std::max(dist, 1.0));
  const int wanted = std::max(cfg.min_points_per_object,
                              static_cast<int>(std::lround(cfg.object_density * total_area * falloff)));
  const double base_intensity = rng.uniform(0.35, 0.85);

  int emitted = 0;
  for (std::size_t fi = 0; fi < faces.size(); ++fi) {
    const auto& f = faces[fi];
    const int n = fi + 1 == faces.size() ? wanted - emitted
                                         : static_cast<int>(std::floor(wanted * f.area / total_area));
    emitted += n;
    for (int i = 0; i < n; ++i) {
      double c[3];
      for (int a = 0; a < 3; ++a) {
        const double h = b.extent[a] / 2;
        c[a] = (a == f.axis) ? b.center[a] + f.sign * (h - kInset)
                             : b.center[a] + rng.uniform(-h + kInset, h - kInset);
      }
      const double inten = std::clamp(base_intensity + rng.uniform(-0.05, 0.05), 0.0, 1.0);
      out.push_back({c[0], c[1], c[2], inten});
    }
  }
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  validate(cfg);
  Rng rng({seed, 0x5ce7e});
  Scene scene;
  scene.cloud.scene_id = "synthetic_" + std::to_string(seed);

  // Objects.
  const int n_objects = static_cast<int>(rng.between(cfg.min_objects, cfg.max_objects));
  const auto& r = cfg.range;
  for (int k = 0; k < n_objects; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const auto& tpl = kTemplates[rng.below(std::size(kTemplates))];
      Box b;
      b.cls = tpl.cls;
      b.extent = {tpl.length * rng.uniform(0.9, 1.1), tpl.width * rng.uniform(0.9, 1.1),
                  tpl.height * rng.uniform(0.9, 1.1)};
      if (rng.uniform() < 0.5) std::swap(b.extent[0], b.extent[1]);
      const double dist = rng.uniform(cfg.object_min_distance, cfg.object_max_distance);
      const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      b.center = {dist * std::cos(ang), dist * std::sin(ang), cfg.ground_z + b.extent[2] / 2};
      bool inside = true;
      for (int a = 0; a < 3; ++a) {
        const double margin = a < 2 ? 0.25 : 0.0;
        if (b.center[a] - b.extent[a] / 2 < r.min[a] + margin || b.center[a] + b.extent[a] / 2 >= r.max[a] - margin)
          inside = false;
      }
      if (!inside) continue;
      // Keep the sensor outside every box.
      if (std::abs(b.center[0]) <= b.extent[0] / 2 + 0.5 && std::abs(b.center[1]) <= b.extent[1] / 2 + 0.5) continue;
      const bool clash = std::any_of(scene.annotation.boxes.begin(), scene.annotation.boxes.end(),
                                     [&](const Box& o) { return footprints_overlap(b, o, 0.5); });
      if (clash) continue;
      scene.annotation.boxes.push_back(b);
      break;
    }
  }

  auto& pts = scene.cloud.points;
  for (const auto& b : scene.annotation.boxes) add_object_points(b, cfg, rng, pts);

  // Ground rings with per-scene radius jitter and random sector dropout.
  const double ring_scale = rng.uniform(0.85, 1.15);
  const double half_band = cfg.ground_band / 2;
  for (int ring = 0; ring < cfg.ring_count; ++ring) {
    const double radius = ring_scale * cfg.ring_first_radius * std::pow(cfg.ring_growth, ring);
    std::vector<char> dropped(static_cast<std::size_t>(cfg.ring_sectors));
    for (auto& d : dropped) d = rng.uniform() < cfg.sector_dropout;
    for (int i = 0; i < cfg.ring_points; ++i) {
      const double ang = 2.0 * std::numbers::pi * (i + rng.uniform(-0.3, 0.3)) / cfg.ring_points;
      const double a01 = std::fmod(ang / (2.0 * std::numbers::pi) + 1.0, 1.0);
      const auto sector = std::min<std::size_t>(static_cast<std::size_t>(a01 * cfg.ring_sectors),
                                                dropped.size() - 1);
      const double rr = radius + rng.uniform(-0.05, 0.05);
      const double px = rr * std::cos(ang), py = rr * std::sin(ang);
      const double pz = cfg.ground_z + rng.uniform(-half_band, half_band);
      const double inten = rng.uniform(0.05, 0.25);
      if (dropped[sector]) continue;
      const bool hidden = std::any_of(scene.annotation.boxes.begin(), scene.annotation.boxes.end(),
                                      [&](const Box& b) { return shadowed_by(b, px, py); });
      if (hidden) continue;
      pts.push_back({px, py, pz, inten});
    }
  }

  auto add_noise = [&](int n) {
    for (int i = 0; i < n; ++i) {
      pts.push_back({rng.uniform(r.min[0], r.max[0]), rng.uniform(r.min[1], r.max[1]),
                     rng.uniform(r.min[2], r.max[2]), rng.uniform()});
    }
  };
  add_noise(cfg.noise_points);
  if (static_cast<int>(pts.size()) < cfg.min_points) add_noise(cfg.min_points - static_cast<int>(pts.size()));
  if (static_cast<int>(pts.size()) > cfg.max_points) {
    // Deterministic thinning with a fixed stride keeps the spatial mix.
    std::vector<Point> kept;
    kept.reserve(static_cast<std::size_t>(cfg.max_points));
    const double stride = static_cast<double>(pts.size()) / cfg.max_points;
    for (int i = 0; i < cfg.max_points; ++i) kept.push_back(pts[static_cast<std::size_t>(i * stride)]);
    pts = std::move(kept);
  }
  // Float32 precision, as in the on-disk format; nothing may round onto an upper bound.
  for (auto& p : pts) {
    double* c[3] = {&p.x, &p.y, &p.z};
    for (int a = 0; a < 3; ++a) {
      float f = static_cast<float>(*c[a]);
      if (*c[a] < r.max[a] && static_cast<double>(f) >= r.max[a]) {
        f = std::nextafter(f, -std::numeric_limits<float>::infinity());
      }
      if (*c[a] >= r.min[a] && static_cast<double>(f) < r.min[a]) {
        f = std::nextafter(f, std::numeric_limits<float>::infinity());
      }
      *c[a] = f;
    }
    p.intensity = static_cast<float>(p.intensity);
  }
  return scene;
}

PointCloud parse_kitti_bin(std::span<const std::byte> bytes, KittiReadStats* stats) {
  constexpr std::size_t kRecord = 16;
  if (bytes.size() % kRecord != 0) {
    throw FormatError("KITTI .bin length " + std::to_string(bytes.size()) + " is not a multiple of 16",
                      bytes.size() - bytes.size() % kRecord);
  }
  PointCloud cloud;
  KittiReadStats local;
  local.records = bytes.size() / kRecord;
  cloud.points.reserve(local.records);
  for (std::size_t rec = 0; rec < local.records; ++rec) {
    float v[4];
    for (int k = 0; k < 4; ++k) {
      std::uint32_t bits = 0;
      const auto* p = bytes.data() + rec * kRecord + static_cast<std::size_t>(k) * 4;
      for (int b = 3; b >= 0; --b) bits = (bits << 8) | std::to_integer<std::uint32_t>(p[b]);
      v[k] = std::bit_cast<float>(bits);
    }
    if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2]) || !std::isfinite(v[3])) {
      ++local.dropped_non_finite;
      continue;
    }
    cloud.points.push_back({v[0], v[1], v[2], std::clamp(static_cast<double>(v[3]), 0.0, 1.0)});
  }
  if (stats) *stats = local;
  return cloud;
}

PointCloud read_kitti_bin(const std::filesystem::path& path, KittiReadStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  PointCloud cloud = parse_kitti_bin(std::as_bytes(std::span(raw)), stats);
  cloud.scene_id = path.stem().string();
  return cloud;
}

std::vector<std::byte> encode_kitti_bin(const PointCloud& cloud) {
  std::vector<std::byte> out(cloud.points.size() * 16);
  std::size_t pos = 0;
  for (const auto& p : cloud.points) {
    for (double d : {p.x, p.y, p.z, p.intensity}) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(d));
      for (int b = 0; b < 4; ++b) out[pos++] = static_cast<std::byte>((bits >> (8 * b)) & 0xffu);
    }
  }
  return out;
}

void write_kitti_bin(const std::filesystem::path& path, const PointCloud& cloud) {
  const auto bytes = encode_kitti_bin(cloud);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

PointCloud crop_to_range(const PointCloud& cloud, const Range3& range) {
  for (int a = 0; a < 3; ++a) {
    if (!(range.min[a] < range.max[a])) throw ContractError("crop_to_range: min >= max on axis " + std::to_string(a));
  }
  PointCloud out;
  out.scene_id = cloud.scene_id;
  std::copy_if(cloud.points.begin(), cloud.points.end(), std::back_inserter(out.points),
               [&](const Point& p) { return range.contains(p); });
  return out;
}

std::string format_annotation(const SceneAnnotation& annotation) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "# class cx cy cz dx dy dz\n";
  for (const auto& b : annotation.boxes) {
    os << to_string(b.cls) << ' ' << b.center[0] << ' ' << b.center[1] << ' ' << b.center[2] << ' '
       << b.extent[0] << ' ' << b.extent[1] << ' ' << b.extent[2] << '\n';
  }
  return os.str();
}

SceneAnnotation parse_annotation(const std::string& text) {
  SceneAnnotation ann;
  std::istringstream is(text);
  std::string line;
  std::size_t offset = 0;
  while (std::getline(is, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string cls;
    Box b;
    if (!(ls >> cls >> b.center[0] >> b.center[1] >> b.center[2] >> b.extent[0] >> b.extent[1] >> b.extent[2])) {
      throw FormatError("malformed annotation line '" + line + "'", line_start);
    }
    b.cls = object_class_from_string(cls);
    ann.boxes.push_back(b);
  }
  return ann;
}

}  // namespace adlj

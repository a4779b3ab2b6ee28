#pragma once

// Synthetic CT-like volumes: isolated spheres (nodules) and polyline tubes
// (vessels) that run through most of the depth range.
//
// Voxel j covers [j, j+1), so its center sits at j + 0.5. Each object adds
// intensity * clamp(r + 0.5 - dist, 0, 1), a one-voxel linear falloff around
// the analytic radius. The background and noise are added on top and the
// result is clamped to [0, 1].

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lssg/csv.hpp"
#include "lssg/detect.hpp"
#include "lssg/io.hpp"
#include "lssg/tensor.hpp"

namespace lssg {

using Point3 = std::array<double, 3>;  // z, y, x

struct Nodule {
  Point3 center{};
  double radius = 1;
  double intensity = 0.7;
};

struct Tube {
  std::vector<Point3> path;
  double radius = 1;
  double intensity = 0.6;
};

struct PhantomSpec {
  std::array<std::size_t, 3> dims{32, 32, 32};
  std::vector<Nodule> nodules;
  std::vector<Tube> tubes;
  double background = 0.1;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

template <std::floating_point T>
struct PhantomSample {
  std::string id;
  Volume<T> volume;
  std::vector<Box3D> gt_boxes;
};

enum class Difficulty { Easy, Medium, Hard };

inline Difficulty parse_difficulty(const std::string& s) {
  if (s == "easy") return Difficulty::Easy;
  if (s == "medium") return Difficulty::Medium;
  if (s == "hard") return Difficulty::Hard;
  throw ConfigError("difficulty must be easy|medium|hard, got '" + s + "'");
}

inline double soft_indicator(double radius, double dist) {
  return std::clamp(radius + 0.5 - dist, 0.0, 1.0);
}

inline double distance_to_segment(const Point3& p, const Point3& a, const Point3& b) {
  Point3 ab{}, ap{};
  double len2 = 0, t = 0;
  for (int k = 0; k < 3; ++k) {
    ab[k] = b[k] - a[k];
    ap[k] = p[k] - a[k];
    len2 += ab[k] * ab[k];
    t += ap[k] * ab[k];
  }
  t = len2 > 0 ? std::clamp(t / len2, 0.0, 1.0) : 0.0;
  double d2 = 0;
  for (int k = 0; k < 3; ++k) {
    const double e = ap[k] - t * ab[k];
    d2 += e * e;
  }
  return std::sqrt(d2);
}

inline double distance_to_path(const Point3& p, const std::vector<Point3>& path) {
  if (path.size() == 1) return distance_to_segment(p, path[0], path[0]);
  double best = INFINITY;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) best = std::min(best, distance_to_segment(p, path[i], path[i + 1]));
  return best;
}

inline Box3D nodule_box(const Nodule& n) {
  const double s = 2 * n.radius;
  return {n.center[0], n.center[1], n.center[2], s, s, s};
}

namespace detail {

// Voxel index range whose centers may lie within `reach` of [lo, hi].
inline std::array<std::size_t, 2> voxel_span(double lo, double hi, double reach, std::size_t n) {
  const double a = std::floor(lo - reach - 0.5), b = std::ceil(hi + reach - 0.5);
  const auto clampi = [n](double v) { return std::size_t(std::clamp(v, 0.0, double(n))); };
  return {clampi(a), clampi(b + 1)};
}

inline bool outside(const Point3& lo, const Point3& hi, const std::array<std::size_t, 3>& dims) {
  for (int k = 0; k < 3; ++k) {
    if (hi[k] <= 0 || lo[k] >= double(dims[k])) return true;
  }
  return false;
}

// Calls f(flat_index, indicator) for every voxel the object touches.
template <class Dist, class F>
void rasterize(const Point3& lo, const Point3& hi, double radius, const std::array<std::size_t, 3>& dims,
               Dist dist, F f) {
  const double reach = radius + 0.5;
  const auto zs = voxel_span(lo[0], hi[0], reach, dims[0]);
  const auto ys = voxel_span(lo[1], hi[1], reach, dims[1]);
  const auto xs = voxel_span(lo[2], hi[2], reach, dims[2]);
  for (std::size_t z = zs[0]; z < zs[1]; ++z)
    for (std::size_t y = ys[0]; y < ys[1]; ++y)
      for (std::size_t x = xs[0]; x < xs[1]; ++x) {
        const double v = soft_indicator(radius, dist(Point3{z + 0.5, y + 0.5, x + 0.5}));
        if (v > 0) f((z * dims[1] + y) * dims[2] + x, v);
      }
}

inline std::array<Point3, 2> path_bounds(const std::vector<Point3>& path) {
  Point3 lo{INFINITY, INFINITY, INFINITY}, hi{-INFINITY, -INFINITY, -INFINITY};
  for (const auto& p : path)
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  return {lo, hi};
}

}  // namespace detail

inline void validate_spec(const PhantomSpec& spec) {
  for (std::size_t v : spec.dims) {
    if (v == 0) throw SpecError("phantom: volume dims must be positive");
  }
  if (!(spec.noise_std >= 0)) throw SpecError("phantom: noise std must be >= 0");
  for (std::size_t i = 0; i < spec.nodules.size(); ++i) {
    const auto& n = spec.nodules[i];
    if (!(n.radius > 0)) throw SpecError("phantom: nodule " + std::to_string(i) + " radius must be > 0");
    Point3 lo{}, hi{};
    for (int k = 0; k < 3; ++k) {
      lo[k] = n.center[k] - n.radius;
      hi[k] = n.center[k] + n.radius;
    }
    if (detail::outside(lo, hi, spec.dims)) throw SpecError("phantom: nodule " + std::to_string(i) + " outside volume");
  }
  for (std::size_t i = 0; i < spec.tubes.size(); ++i) {
    const auto& t = spec.tubes[i];
    if (!(t.radius > 0)) throw SpecError("phantom: tube " + std::to_string(i) + " radius must be > 0");
    if (t.path.empty()) throw SpecError("phantom: tube " + std::to_string(i) + " has no vertices");
    auto [lo, hi] = detail::path_bounds(t.path);
    for (int k = 0; k < 3; ++k) {
      lo[k] -= t.radius;
      hi[k] += t.radius;
    }
    if (detail::outside(lo, hi, spec.dims)) throw SpecError("phantom: tube " + std::to_string(i) + " outside volume");
  }
}

// Sum of indicator values per object kind, before noise and clamping.
struct ObjectMass {
  double nodules = 0;
  double tubes = 0;
};

inline ObjectMass object_mass(const PhantomSpec& spec) {
  ObjectMass m;
  for (const auto& n : spec.nodules) {
    detail::rasterize(n.center, n.center, n.radius, spec.dims,
                      [&](const Point3& p) { return distance_to_segment(p, n.center, n.center); },
                      [&](std::size_t, double v) { m.nodules += v; });
  }
  for (const auto& t : spec.tubes) {
    const auto [lo, hi] = detail::path_bounds(t.path);
    detail::rasterize(lo, hi, t.radius, spec.dims, [&](const Point3& p) { return distance_to_path(p, t.path); },
                      [&](std::size_t, double v) { m.tubes += v; });
  }
  return m;
}

template <std::floating_point T = float>
PhantomSample<T> generate_phantom(const PhantomSpec& spec, std::string id = "sample") {
  validate_spec(spec);
  const auto& dims = spec.dims;
  std::vector<double> acc(dims[0] * dims[1] * dims[2], spec.background);
  for (const auto& n : spec.nodules) {
    detail::rasterize(n.center, n.center, n.radius, dims,
                      [&](const Point3& p) { return distance_to_segment(p, n.center, n.center); },
                      [&](std::size_t i, double v) { acc[i] += n.intensity * v; });
  }
  for (const auto& t : spec.tubes) {
    const auto [lo, hi] = detail::path_bounds(t.path);
    detail::rasterize(lo, hi, t.radius, dims, [&](const Point3& p) { return distance_to_path(p, t.path); },
                      [&](std::size_t i, double v) { acc[i] += t.intensity * v; });
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<T> values(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    double v = acc[i];
    if (spec.noise_std > 0) v += spec.noise_std * noise(rng);
    values[i] = T(std::clamp(v, 0.0, 1.0));
  }
  PhantomSample<T> s{std::move(id), Volume<T>({1, dims[0], dims[1], dims[2]}, std::move(values)), {}};
  for (const auto& n : spec.nodules) s.gt_boxes.push_back(nodule_box(n));
  return s;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct DifficultyTable {
  int nodules_min, nodules_max;
  int tubes_min, tubes_max;
  double radius_min, radius_max;
  double noise_std;
};

inline DifficultyTable difficulty_table(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return {1, 3, 2, 5, 3.0, 5.0, 0.02};
    case Difficulty::Medium: return {1, 3, 4, 7, 2.5, 5.0, 0.05};
    case Difficulty::Hard: return {1, 4, 6, 10, 2.0, 4.5, 0.08};
  }
  throw ConfigError("unknown difficulty");
}

// Random spec for one sample. Nodules do not overlap each other; tubes enter
// above the first slice and leave below the last, wandering in-plane.
inline PhantomSpec random_phantom_spec(Difficulty difficulty, std::uint64_t seed,
                                       std::array<std::size_t, 3> dims = {32, 32, 32}) {
  const auto tab = difficulty_table(difficulty);
  std::mt19937_64 rng(seed);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto pick = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };

  PhantomSpec spec;
  spec.dims = dims;
  spec.noise_std = tab.noise_std;
  spec.seed = splitmix64(seed);
  const int n_nod = pick(tab.nodules_min, tab.nodules_max);
  for (int i = 0, tries = 0; i < n_nod && tries < 1000; ++tries) {
    Nodule n;
    n.radius = uni(tab.radius_min, tab.radius_max);
    n.intensity = uni(0.6, 0.9);
    for (int k = 0; k < 3; ++k) n.center[k] = uni(n.radius + 1, double(dims[k]) - n.radius - 1);
    bool clash = false;
    for (const auto& o : spec.nodules) {
      double d2 = 0;
      for (int k = 0; k < 3; ++k) d2 += (o.center[k] - n.center[k]) * (o.center[k] - n.center[k]);
      clash = clash || std::sqrt(d2) < n.radius + o.radius + 2;
    }
    if (clash) continue;
    spec.nodules.push_back(n);
    ++i;
  }
  const int n_tube = pick(tab.tubes_min, tab.tubes_max);
  for (int i = 0; i < n_tube; ++i) {
    Tube t;
    t.radius = uni(1.5, 3.0);
    t.intensity = uni(0.5, 0.8);
    const int vertices = pick(3, 5);
    const double top = -2.0, bottom = double(dims[0]) + 2.0;
    double y = uni(3, double(dims[1]) - 3), x = uni(3, double(dims[2]) - 3);
    for (int v = 0; v < vertices; ++v) {
      const double z = top + (bottom - top) * v / (vertices - 1);
      t.path.push_back({z, y, x});
      y = std::clamp(y + uni(-6, 6), 2.0, double(dims[1]) - 2);
      x = std::clamp(x + uni(-6, 6), 2.0, double(dims[2]) - 2);
    }
    spec.tubes.push_back(std::move(t));
  }
  return spec;
}

inline std::string sample_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%04zu", i);
  return buf;
}

template <std::floating_point T = float>
std::vector<PhantomSample<T>> generate_dataset(std::size_t n, Difficulty difficulty, std::uint64_t seed,
                                               std::array<std::size_t, 3> dims = {32, 32, 32}) {
  if (n < 1) throw ConfigError("generate_dataset: n must be >= 1");
  std::vector<PhantomSample<T>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(generate_phantom<T>(random_phantom_spec(difficulty, splitmix64(seed ^ splitmix64(i)), dims),
                                      sample_id(i)));
  }
  return out;
}

template <std::floating_point T>
void write_dataset(const std::filesystem::path& dir, const std::vector<PhantomSample<T>>& samples) {
  for (const auto& s : samples) {
    const auto sub = dir / s.id;
    std::filesystem::create_directories(sub);
    write_lssv(sub / "volume.lssv", s.volume);
    write_file(sub / "gt.csv", ground_truth_to_csv({{s.id, s.gt_boxes}}));
  }
}

template <std::floating_point T = float>
std::vector<PhantomSample<T>> read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> subs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() && e.path().filename().string().rfind("sample_", 0) == 0) subs.push_back(e.path());
  }
  std::sort(subs.begin(), subs.end());
  if (subs.empty()) throw InputError("dataset directory has no sample_* entries: " + dir.string());
  std::vector<PhantomSample<T>> out;
  for (const auto& sub : subs) {
    const std::string id = sub.filename().string();
    auto gt = read_ground_truth(sub / "gt.csv");
    PhantomSample<T> s{id, read_lssv<T>(sub / "volume.lssv"), {}};
    if (auto it = gt.find(id); it != gt.end()) s.gt_boxes = it->second;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace lssg

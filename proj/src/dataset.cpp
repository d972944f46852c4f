#include "apseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "apseg/errors.hpp"

namespace apseg {

namespace {

struct Point {
  double x, y;
};

bool in_polygon(const std::vector<Point>& poly, double u, double v) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > v) != (b.y > v) && u < (b.x - a.x) * (v - a.y) / (b.y - a.y) + a.x) inside = !inside;
  }
  return inside;
}

const std::vector<Point>& triangle() {
  static const std::vector<Point> p = [] {
    std::vector<Point> v;
    for (int i = 0; i < 3; ++i) {
      const double a = std::numbers::pi / 2 + i * 2 * std::numbers::pi / 3;
      v.push_back({std::cos(a), std::sin(a)});
    }
    return v;
  }();
  return p;
}

const std::vector<Point>& star() {
  static const std::vector<Point> p = [] {
    std::vector<Point> v;
    for (int i = 0; i < 10; ++i) {
      const double a = std::numbers::pi / 2 + i * std::numbers::pi / 5;
      const double r = i % 2 == 0 ? 1.0 : 0.45;
      v.push_back({r * std::cos(a), r * std::sin(a)});
    }
    return v;
  }();
  return p;
}

const std::vector<Point>& l_shape() {
  static const std::vector<Point> p{{-0.8, -0.8}, {0.8, -0.8}, {0.8, -0.3},
                                    {-0.3, -0.3}, {-0.3, 0.9}, {-0.8, 0.9}};
  return p;
}

// Half-extent of every shape relative to its nominal radius.
constexpr double kShapeReach = 1.15;

using Rgb = std::array<double, 3>;

struct Palette {
  std::array<Rgb, kNumShapeClasses> shape;
  Rgb background;
};

double distance(const Rgb& a, const Rgb& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                   (a[2] - b[2]) * (a[2] - b[2]));
}

Palette make_palette(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x9A1E77E));
  Palette p;
  for (auto& c : p.background) c = rng.uniform(0.2, 0.8);
  for (auto& colour : p.shape) {
    do {
      for (auto& c : colour) c = rng.uniform(0.05, 0.95);
    } while (distance(colour, p.background) < 0.45);
  }
  return p;
}

struct Placement {
  int class_id;
  double cx, cy, radius, angle;
};

bool covers(const Placement& s, double px, double py) {
  const double dx = (px - s.cx) / s.radius, dy = (py - s.cy) / s.radius;
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  return shape_contains(s.class_id, c * dx + sn * dy, -sn * dx + c * dy);
}

void box_blur(std::vector<float>& img, std::size_t size, int radius) {
  if (radius <= 0) return;
  std::vector<float> tmp(img.size());
  const long n = static_cast<long>(size);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t c = 0; c < 3; ++c)
      for (long y = 0; y < n; ++y)
        for (long x = 0; x < n; ++x) {
          double acc = 0;
          int cnt = 0;
          for (long d = -radius; d <= radius; ++d) {
            const long sx = pass == 0 ? x + d : x, sy = pass == 0 ? y : y + d;
            if (sx < 0 || sy < 0 || sx >= n || sy >= n) continue;
            acc += img[(c * size + static_cast<std::size_t>(sy)) * size + static_cast<std::size_t>(sx)];
            ++cnt;
          }
          tmp[(c * size + static_cast<std::size_t>(y)) * size + static_cast<std::size_t>(x)] =
              static_cast<float>(acc / cnt);
        }
    img.swap(tmp);
  }
}

ImageSample render(const DomainSpec& domain, const Palette& palette, int class_id,
                   const std::vector<int>& classes, std::size_t size, Rng& rng) {
  const double s = static_cast<double>(size);
  const double scale = s / 64.0;
  Placement target{class_id, 0, 0, rng.uniform(14.0, 22.0) * scale, rng.uniform(0, 2 * std::numbers::pi)};
  const double margin = kShapeReach * target.radius + 1;
  target.cx = rng.uniform(margin, s - margin);
  target.cy = rng.uniform(margin, s - margin);

  std::vector<Placement> shapes;
  std::vector<int> others;
  for (int c : classes)
    if (c != class_id) others.push_back(c);
  if (!others.empty() && rng.bernoulli(0.5)) {
    Placement d{others[rng.integer(0, others.size() - 1)], 0, 0, rng.uniform(8.0, 12.0) * scale,
                rng.uniform(0, 2 * std::numbers::pi)};
    const double m = kShapeReach * d.radius + 1;
    d.cx = rng.uniform(m, s - m);
    d.cy = rng.uniform(m, s - m);
    shapes.push_back(d);
  }
  shapes.push_back(target);

  Rgb bg = palette.background;
  for (auto& c : bg) c = std::clamp(c + rng.uniform(-0.1, 0.1), 0.0, 1.0);
  std::array<Rgb, kNumShapeClasses> jittered = palette.shape;
  for (auto& colour : jittered)
    for (auto& c : colour) c = std::clamp(c + rng.uniform(-0.06, 0.06), 0.0, 1.0);
  const double phi = rng.uniform(0, std::numbers::pi), phase = rng.uniform(0, 2 * std::numbers::pi);
  const double fx = std::cos(phi) * domain.texture_frequency * 2 * std::numbers::pi;
  const double fy = std::sin(phi) * domain.texture_frequency * 2 * std::numbers::pi;

  ImageSample img;
  img.height = img.width = size;
  img.class_id = class_id;
  img.domain_id = domain.id;
  img.pixels.assign(3 * size * size, 0.0f);
  img.mask.assign(size * size, 0);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      const Rgb* colour = &bg;
      for (const auto& sh : shapes)
        if (covers(sh, px, py)) colour = &jittered[static_cast<std::size_t>(sh.class_id)];
      img.mask[y * size + x] = covers(target, px, py) ? 1 : 0;
      const double texture = 0.12 * std::sin(fx * px + fy * py + phase);
      for (std::size_t c = 0; c < 3; ++c)
        img.pixels[(c * size + y) * size + x] = static_cast<float>((*colour)[c] + texture);
    }
  box_blur(img.pixels, size, domain.blur_radius);
  for (auto& v : img.pixels) {
    double p = v + (domain.noise_sigma > 0 ? rng.normal(0.0, domain.noise_sigma) : 0.0);
    if (domain.invert) p = 1.0 - p;
    v = static_cast<float>(std::clamp(p, 0.0, 1.0));
  }
  return img;
}

}  // namespace

const char* shape_name(int class_id) {
  static const char* names[kNumShapeClasses] = {"circle", "triangle", "square", "cross",
                                                "ring",   "star",     "ellipse", "l-shape"};
  if (class_id < 0 || class_id >= kNumShapeClasses) throw ContractError("unknown shape class");
  return names[class_id];
}

bool shape_contains(int class_id, double u, double v) {
  const double r2 = u * u + v * v;
  switch (class_id) {
    case 0: return r2 <= 1.0;
    case 1: return in_polygon(triangle(), u, v);
    case 2: return std::abs(u) <= 0.75 && std::abs(v) <= 0.75;
    case 3:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 0.95) || (std::abs(v) <= 0.3 && std::abs(u) <= 0.95);
    case 4: return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    case 5: return in_polygon(star(), u, v);
    case 6: return u * u + (v / 0.55) * (v / 0.55) <= 1.0;
    case 7: return in_polygon(l_shape(), u, v);
    default: throw ContractError("unknown shape class");
  }
}

void DomainSpec::validate() const {
  if (noise_sigma < 0 || noise_sigma > 0.5) throw ConfigError("noise sigma must lie in [0, 0.5]");
  if (texture_frequency < 0 || texture_frequency > 0.5)
    throw ConfigError("texture frequency must lie in [0, 0.5]");
  if (blur_radius < 0 || blur_radius > 4) throw ConfigError("blur radius must lie in [0, 4]");
}

DomainSpec source_domain() { return DomainSpec{}; }

DomainSpec target_domain() {
  DomainSpec d;
  d.name = "target";
  d.id = 1;
  d.invert = true;
  d.noise_sigma = 0.08;
  d.texture_frequency = 0.2;
  d.blur_radius = 1;
  d.palette_seed = 29;
  return d;
}

const std::vector<std::size_t>& Dataset::of_class(int class_id) const {
  if (class_id < 0 || class_id >= kNumShapeClasses) throw ContractError("unknown shape class");
  return by_class[static_cast<std::size_t>(class_id)];
}

Dataset generate_dataset(const DomainSpec& domain, const std::vector<int>& classes,
                         std::size_t per_class, std::size_t image_size, std::uint64_t seed) {
  domain.validate();
  if (image_size < 32 || image_size % 4 != 0)
    throw ConfigError("image size must be a multiple of 4 and at least 32");
  if (classes.empty()) throw ConfigError("dataset needs at least one class");
  Dataset data;
  data.domain = domain;
  data.classes = classes;
  const Palette palette = make_palette(domain.palette_seed);
  for (int c : classes) {
    shape_name(c);
    if (!data.of_class(c).empty()) throw ConfigError("class listed twice");
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(c)), i));
      data.by_class[static_cast<std::size_t>(c)].push_back(data.samples.size());
      data.samples.push_back(render(domain, palette, c, classes, image_size, rng));
    }
  }
  return data;
}

void require_disjoint(const std::vector<int>& train, const std::vector<int>& test) {
  for (int a : train)
    for (int b : test)
      if (a == b)
        throw ContractError("class " + std::to_string(a) + " appears in both train and test splits");
}

Episode sample_episode(const Dataset& data, int class_id, std::size_t shots, Rng& rng) {
  if (shots == 0) throw SamplingError("an episode needs at least one support");
  const auto& pool = data.of_class(class_id);
  if (pool.size() < shots + 1)
    throw SamplingError("class " + std::to_string(class_id) + " has " + std::to_string(pool.size()) +
                        " samples, episode needs " + std::to_string(shots + 1));
  std::vector<std::size_t> pick(pool);
  for (std::size_t i = 0; i <= shots; ++i) std::swap(pick[i], pick[rng.integer(i, pick.size() - 1)]);
  Episode ep;
  ep.class_id = class_id;
  ep.domain_id = data.domain.id;
  ep.support.assign(pick.begin(), pick.begin() + static_cast<long>(shots));
  ep.query = pick[shots];
  return ep;
}

Episode sample_episode(const Dataset& data, std::size_t shots, Rng& rng) {
  if (data.classes.empty()) throw SamplingError("dataset has no classes");
  const int c = data.classes[rng.integer(0, data.classes.size() - 1)];
  return sample_episode(data, c, shots, rng);
}

}  // namespace apseg

#include "i2i/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "i2i/errors.hpp"
#include "i2i/image_io.hpp"
#include "i2i/rng.hpp"

namespace fs = std::filesystem;

namespace i2i {

namespace {

constexpr int kSupersample = 4;

struct Rgb {
  double r = 0, g = 0, b = 0;
};

Rgb scaled(const Rgb& c, double k) { return {c.r * k, c.g * k, c.b * k}; }

// Saturated colour from a hue in [0, 1).
Rgb hue_color(double hue, double lightness) {
  const double h = hue * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  Rgb c;
  switch (static_cast<int>(h) % 6) {
    case 0: c = {1, x, 0}; break;
    case 1: c = {x, 1, 0}; break;
    case 2: c = {0, 1, x}; break;
    case 3: c = {0, x, 1}; break;
    case 4: c = {x, 0, 1}; break;
    default: c = {1, 0, x}; break;
  }
  return scaled(c, lightness);
}

// A shape answers, for a point in pixel coordinates, whether it is covered
// and with which colour.
struct Triangle {
  std::array<double, 6> v{};  // x0 y0 x1 y1 x2 y2
  double stripe_cos = 1, stripe_sin = 0, stripe_period = 3, stripe_phase = 0;
  Rgb light, dark;

  bool contains(double x, double y) const {
    auto edge = [&](int a, int b) {
      return (v[2 * b] - v[2 * a]) * (y - v[2 * a + 1]) - (v[2 * b + 1] - v[2 * a + 1]) * (x - v[2 * a]);
    };
    const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
    return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
  }
  Rgb color(double x, double y) const {
    const double t = (x * stripe_cos + y * stripe_sin) / stripe_period + stripe_phase;
    return t - std::floor(t) < 0.5 ? light : dark;
  }
};

struct Ellipse {
  double cx = 0, cy = 0, a = 1, b = 1, cos_t = 1, sin_t = 0;
  double light_u = 0, light_v = 0;
  Rgb base;

  // Coordinates in the ellipse frame, scaled so the boundary is the unit circle.
  std::pair<double, double> local(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    return {(dx * cos_t + dy * sin_t) / a, (-dx * sin_t + dy * cos_t) / b};
  }
  bool contains(double x, double y) const {
    const auto [u, v] = local(x, y);
    return u * u + v * v <= 1.0;
  }
  Rgb color(double x, double y) const {
    const auto [u, v] = local(x, y);
    const double d2 = (u - light_u) * (u - light_u) + (v - light_v) * (v - light_v);
    return scaled(base, 0.3 + 0.7 * std::exp(-1.2 * d2));
  }
};

template <typename Shape>
std::vector<std::uint8_t> rasterize(const Shape& shape, std::size_t size, const Rgb& background) {
  std::vector<std::uint8_t> out(size * size * 3);
  const double inv = 1.0 / kSupersample;
  for (std::size_t py = 0; py < size; ++py) {
    for (std::size_t px = 0; px < size; ++px) {
      Rgb acc;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double x = static_cast<double>(px) + (sx + 0.5) * inv;
          const double y = static_cast<double>(py) + (sy + 0.5) * inv;
          const Rgb c = shape.contains(x, y) ? shape.color(x, y) : background;
          acc.r += c.r;
          acc.g += c.g;
          acc.b += c.b;
        }
      }
      const double n = kSupersample * kSupersample;
      const std::array<double, 3> rgb = {acc.r / n, acc.g / n, acc.b / n};
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::floor(std::clamp(rgb[c], 0.0, 1.0) * 255.0 + 0.5);
        out[(py * size + px) * 3 + c] = static_cast<std::uint8_t>(v);
      }
    }
  }
  return out;
}

Triangle random_triangle(Rng& rng, double s) {
  Triangle t;
  const double cx = rng.uniform(0.35, 0.65) * s, cy = rng.uniform(0.35, 0.65) * s;
  const double radius = rng.uniform(0.28, 0.42) * s;
  const double rotation = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int k = 0; k < 3; ++k) {
    const double angle = rotation + k * 2.0 * std::numbers::pi / 3.0 + rng.uniform(-0.25, 0.25);
    const double r = radius * rng.uniform(0.85, 1.15);
    t.v[2 * k] = cx + r * std::cos(angle);
    t.v[2 * k + 1] = cy + r * std::sin(angle);
  }
  const double stripe_angle = rng.uniform(0.0, std::numbers::pi);
  t.stripe_cos = std::cos(stripe_angle);
  t.stripe_sin = std::sin(stripe_angle);
  t.stripe_period = rng.uniform(2.5, 4.0) * s / 16.0;
  t.stripe_phase = rng.uniform();
  t.light = hue_color(rng.uniform(), rng.uniform(0.8, 1.0));
  t.dark = scaled(t.light, rng.uniform(0.15, 0.3));
  return t;
}

Ellipse random_ellipse(Rng& rng, double s) {
  Ellipse e;
  e.cx = rng.uniform(0.35, 0.65) * s;
  e.cy = rng.uniform(0.35, 0.65) * s;
  e.a = rng.uniform(0.2, 0.36) * s;
  e.b = e.a * rng.uniform(0.5, 0.9);
  const double rotation = rng.uniform(0.0, std::numbers::pi);
  e.cos_t = std::cos(rotation);
  e.sin_t = std::sin(rotation);
  e.light_u = rng.uniform(-0.5, 0.5);
  e.light_v = rng.uniform(-0.5, 0.5);
  e.base = hue_color(rng.uniform(), rng.uniform(0.8, 1.0));
  return e;
}

}  // namespace

std::string shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::StripedTriangles:
      return "striped-triangles";
    case ShapeKind::ShadedEllipses:
      return "shaded-ellipses";
  }
  throw ConfigError("unknown shape kind");
}

ShapeKind parse_shape_kind(const std::string& name) {
  for (const ShapeKind k : {ShapeKind::StripedTriangles, ShapeKind::ShadedEllipses}) {
    if (shape_kind_name(k) == name) return k;
  }
  throw ConfigError("unknown shape kind '" + name + "' (expected striped-triangles or shaded-ellipses)");
}

void DomainSpec::validate() const {
  if (size != 16 && size != 32 && size != 64) {
    throw ConfigError("dataset image size must be 16, 32 or 64, got " + std::to_string(size));
  }
  if (count < 2) throw ConfigError("dataset count must be at least 2, got " + std::to_string(count));
  if (name.empty() || name.find('/') != std::string::npos) {
    throw ConfigError("domain name must be a plain directory name, got '" + name + "'");
  }
}

DatasetSpec DatasetSpec::from_config(const KvConfig& config) {
  DatasetSpec spec;
  spec.root = config.get_string("root", spec.root.string());
  spec.size = config.get_uint("size", spec.size);
  spec.count = config.get_uint("count", spec.count);
  spec.seed = config.get_uint("seed", spec.seed);
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string prefix = "domain" + std::to_string(i + 1) + ".";
    spec.names[i] = config.get_string(prefix + "name", spec.names[i]);
    spec.kinds[i] = parse_shape_kind(config.get_string(prefix + "kind", shape_kind_name(spec.kinds[i])));
  }
  config.require_all_known();
  spec.validate();
  return spec;
}

KvConfig DatasetSpec::to_config() const {
  KvConfig c;
  c.set("root", root.string());
  c.set("size", std::to_string(size));
  c.set("count", std::to_string(count));
  c.set("seed", std::to_string(seed));
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string prefix = "domain" + std::to_string(i + 1) + ".";
    c.set(prefix + "name", names[i]);
    c.set(prefix + "kind", shape_kind_name(kinds[i]));
  }
  return c;
}

void DatasetSpec::validate() const {
  for (std::size_t i = 0; i < 2; ++i) domain(i).validate();
  if (names[0] == names[1]) throw ConfigError("the two domains need different names");
}

DomainSpec DatasetSpec::domain(std::size_t index) const {
  return DomainSpec{names.at(index), kinds.at(index), size, count, derive_seed(seed, index + 1)};
}

std::vector<std::uint8_t> render_sample(const DomainSpec& spec, std::size_t index) {
  Rng rng(derive_seed(spec.seed, index));
  const double s = static_cast<double>(spec.size);
  const double gray = rng.uniform(0.05, 0.35);
  const Rgb background{gray, gray, gray};
  if (spec.kind == ShapeKind::StripedTriangles) return rasterize(random_triangle(rng, s), spec.size, background);
  return rasterize(random_ellipse(rng, s), spec.size, background);
}

template <typename T>
Tensor<T> render_sample_tensor(const DomainSpec& spec, std::size_t index) {
  const auto rgb = render_sample(spec, index);
  const std::size_t s = spec.size;
  std::vector<T> v(3 * s * s);
  for (std::size_t p = 0; p < s * s; ++p)
    for (std::size_t c = 0; c < 3; ++c) v[c * s * s + p] = static_cast<T>(pixel_to_unit(rgb[p * 3 + c]));
  return Tensor<T>(Shape{1, 3, s, s}, std::move(v));
}

std::vector<fs::path> generate_domain(const DomainSpec& spec, const fs::path& dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  std::vector<fs::path> files;
  for (std::size_t i = 0; i < spec.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    files.push_back(dir / name);
    save_image(render_sample_tensor<float>(spec, i), files.back());
  }
  return files;
}

void generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  for (std::size_t i = 0; i < 2; ++i) generate_domain(spec.domain(i), spec.domain_dir(i));
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t domain,
                                           std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, domain + 1, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

UnpairedSampler::UnpairedSampler(std::size_t size1, std::size_t size2, std::uint64_t seed)
    : sizes_{size1, size2}, seed_(seed) {
  if (size1 == 0 || size2 == 0) throw ConfigError("unpaired sampler: both domains need at least one image");
  refresh(0);
  refresh(1);
}

void UnpairedSampler::refresh(std::size_t domain) {
  order_[domain] = epoch_permutation(sizes_[domain], seed_, domain, state_.epoch[domain]);
}

std::array<std::size_t, 2> UnpairedSampler::next() {
  std::array<std::size_t, 2> out{};
  for (std::size_t d = 0; d < 2; ++d) {
    if (state_.position[d] == sizes_[d]) {
      ++state_.epoch[d];
      state_.position[d] = 0;
      refresh(d);
    }
    out[d] = order_[d][state_.position[d]++];
  }
  return out;
}

void UnpairedSampler::set_state(const State& state) {
  for (std::size_t d = 0; d < 2; ++d) {
    if (state.position[d] > sizes_[d]) throw StateError("unpaired sampler: position beyond the epoch length");
  }
  state_ = state;
  refresh(0);
  refresh(1);
}

template Tensor<float> render_sample_tensor(const DomainSpec&, std::size_t);
template Tensor<double> render_sample_tensor(const DomainSpec&, std::size_t);

}  // namespace i2i

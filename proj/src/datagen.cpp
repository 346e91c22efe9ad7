#include "semalign/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include <Eigen/LU>

#include "json.hpp"
#include "semalign/errors.hpp"
#include "semalign/image.hpp"

namespace semalign {

namespace {

using json = nlohmann::json;

constexpr double kLandmarkInset = 0.85;  // landmarks are pulled toward the centroid

struct Rgb {
  double r, g, b;
};

Rgb random_color(Rng& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

struct Blob {
  Vec2 centre;
  double radius;
  double amplitude;
  Rgb color;
};

struct Appearance {
  Rgb fill_a, fill_b, background;
  double stripe_freq, stripe_phase;
  Vec2 stripe_dir;
  std::vector<Blob> blobs;
  std::vector<double> noise;  // per pixel
};

Appearance make_appearance(std::uint64_t texture_seed, int size) {
  Rng rng(mix_seed(texture_seed, 0xA11CE));
  Appearance a;
  a.fill_a = random_color(rng, 0.55, 0.95);
  a.fill_b = random_color(rng, 0.05, 0.45);
  a.background = random_color(rng, 0.3, 0.6);
  a.stripe_freq = uniform(rng, 8.0, 14.0);
  a.stripe_phase = uniform(rng, 0.0, 2 * std::numbers::pi);
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  a.stripe_dir = Vec2(std::cos(angle), std::sin(angle));
  const int n_blobs = uniform_int(rng, 4, 7);
  for (int i = 0; i < n_blobs; ++i) {
    a.blobs.push_back({Vec2(uniform(rng, -1, 1), uniform(rng, -1, 1)), uniform(rng, 0.1, 0.35),
                       uniform(rng, -0.25, 0.25), random_color(rng, 0.0, 1.0)});
  }
  a.noise.resize(static_cast<std::size_t>(size) * size);
  for (double& v : a.noise) v = gaussian(rng, 0.0, 0.03);
  return a;
}

Rgb background_at(const Appearance& a, const Vec2& p) {
  Rgb c = a.background;
  for (const Blob& b : a.blobs) {
    const double w = b.amplitude * std::exp(-(p - b.centre).squaredNorm() / (2 * b.radius * b.radius));
    c.r += w * (b.color.r - 0.5);
    c.g += w * (b.color.g - 0.5);
    c.b += w * (b.color.b - 0.5);
  }
  return c;
}

Rgb texture_at(const Appearance& a, const Vec2& p) {
  const double t = 0.5 + 0.5 * std::sin(a.stripe_freq * p.dot(a.stripe_dir) + a.stripe_phase);
  return {a.fill_a.r * t + a.fill_b.r * (1 - t), a.fill_a.g * t + a.fill_b.g * (1 - t),
          a.fill_a.b * t + a.fill_b.b * (1 - t)};
}

bool inside_polygon(const std::vector<Vec2>& poly, const Vec2& p) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y()) && p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x()) {
      in = !in;
    }
  }
  return in;
}

struct Geometry {
  std::vector<Vec2> outline;  // empty for ellipses
  Vec2 centre;
  double axis_a = 0, axis_b = 0, rotation = 0;  // ellipse
  std::vector<Vec2> landmarks;

  bool contains(const Vec2& p) const {
    if (!outline.empty()) return inside_polygon(outline, p);
    const Vec2 d = p - centre;
    const double c = std::cos(rotation), s = std::sin(rotation);
    const double u = (c * d.x() + s * d.y()) / axis_a;
    const double v = (-s * d.x() + c * d.y()) / axis_b;
    return u * u + v * v <= 1.0;
  }
};

Vec2 inset(const Vec2& centre, const Vec2& p) { return centre + kLandmarkInset * (p - centre); }

Geometry make_geometry(const ShapeSpec& spec, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5EED));
  Geometry g;
  g.centre = Vec2(uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1));
  const double radius = uniform(rng, 0.5, 0.62);
  const double rotation = uniform(rng, -0.3, 0.3);
  const double pi = std::numbers::pi;
  switch (static_cast<ShapeCategory>(spec.category)) {
    case ShapeCategory::kPolygon: {
      const int n = spec.vertex_count;
      for (int i = 0; i < n; ++i) {
        const double ang = rotation + 2 * pi * i / n + uniform(rng, -0.15, 0.15);
        const double r = radius * uniform(rng, 0.85, 1.1);
        g.outline.push_back(g.centre + r * Vec2(std::cos(ang), std::sin(ang)));
      }
      for (const Vec2& v : g.outline) g.landmarks.push_back(inset(g.centre, v));
      break;
    }
    case ShapeCategory::kStar: {
      const int tips = spec.vertex_count / 2;
      for (int i = 0; i < spec.vertex_count; ++i) {
        const double ang = rotation + 2 * pi * i / spec.vertex_count + uniform(rng, -0.08, 0.08);
        const double r = (i % 2 == 0 ? radius * uniform(rng, 0.95, 1.1) : radius * uniform(rng, 0.42, 0.5));
        g.outline.push_back(g.centre + r * Vec2(std::cos(ang), std::sin(ang)));
      }
      for (int i = 0; i < tips; ++i) g.landmarks.push_back(inset(g.centre, g.outline[2 * i]));
      break;
    }
    case ShapeCategory::kEllipse: {
      g.axis_a = radius;
      g.axis_b = radius * uniform(rng, 0.5, 0.7);
      g.rotation = rotation;
      const Vec2 u(std::cos(rotation), std::sin(rotation));
      const Vec2 v(-std::sin(rotation), std::cos(rotation));
      g.landmarks = {inset(g.centre, g.centre + g.axis_a * u), inset(g.centre, g.centre + g.axis_b * v),
                     inset(g.centre, g.centre - g.axis_a * u), inset(g.centre, g.centre - g.axis_b * v),
                     g.centre};
      break;
    }
  }
  return g;
}

Affine2 similarity_affine(double angle, double scale, const Vec2& t) {
  Affine2 m;
  m << scale * std::cos(angle), -scale * std::sin(angle), t.x(), scale * std::sin(angle), scale * std::cos(angle),
      t.y();
  return m;
}

// Rejects warps that fold or nearly collapse the image.
bool warp_is_regular(const ParametricWarp& warp) {
  for (double y = -1.0; y <= 1.0 + 1e-9; y += 0.25) {
    for (double x = -1.0; x <= 1.0 + 1e-9; x += 0.25) {
      if (warp.jacobian(Vec2(x, y)).determinant() < 0.2) return false;
    }
  }
  return true;
}

json point_list(const std::vector<Vec2>& pts) {
  json arr = json::array();
  for (const Vec2& p : pts) arr.push_back({p.x(), p.y()});
  return arr;
}

std::vector<Vec2> parse_points(const json& arr) {
  std::vector<Vec2> out;
  for (const auto& p : arr) out.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  return out;
}

json warp_to_json(const ParametricWarp& w) {
  if (w.kind() == WarpKind::kAffine) {
    const Affine2& m = w.affine_matrix();
    return {{"kind", "affine"}, {"matrix", {m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2)}}};
  }
  return {{"kind", "tps"}, {"anchors", point_list(w.anchors())}, {"targets", point_list(w.targets())}};
}

ParametricWarp warp_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "affine") {
    const auto v = j.at("matrix").get<std::vector<double>>();
    if (v.size() != 6) throw DataError("affine warp needs 6 coefficients");
    Affine2 m;
    m << v[0], v[1], v[2], v[3], v[4], v[5];
    return ParametricWarp::affine(m);
  }
  if (kind == "tps") return ParametricWarp::tps(parse_points(j.at("anchors")), parse_points(j.at("targets")));
  throw DataError("unknown warp kind '" + kind + "'");
}

std::string sample_stem(std::uint64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06llu", static_cast<unsigned long long>(id));
  return buf;
}

}  // namespace

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + s + "'");
}

std::string category_name(int category) {
  switch (category) {
    case 0: return "polygon";
    case 1: return "star";
    case 2: return "ellipse";
    default: return "category" + std::to_string(category);
  }
}

void ShapeSpec::validate() const {
  if (category < 0 || category >= kNumCategories) throw ConfigError("unknown shape category " + std::to_string(category));
  if (landmark_count < 5) throw ConfigError("shapes need at least 5 ground-truth landmarks");
  if (image_size < 8) throw ConfigError("image size must be >= 8");
  switch (static_cast<ShapeCategory>(category)) {
    case ShapeCategory::kPolygon:
      if (vertex_count != landmark_count) throw ConfigError("polygon landmarks are its vertices");
      break;
    case ShapeCategory::kStar:
      if (vertex_count != 2 * landmark_count) throw ConfigError("star landmarks are its tips");
      break;
    case ShapeCategory::kEllipse:
      if (landmark_count != 5) throw ConfigError("ellipse landmarks are its 4 axis extremes plus centre");
      break;
  }
}

ShapeSpec default_shape_spec(int category, int image_size, std::uint64_t texture_seed) {
  switch (static_cast<ShapeCategory>(category)) {
    case ShapeCategory::kPolygon: return {category, 6, texture_seed, 6, image_size};
    case ShapeCategory::kStar: return {category, 10, texture_seed, 5, image_size};
    case ShapeCategory::kEllipse: return {category, 0, texture_seed, 5, image_size};
  }
  throw ConfigError("unknown shape category " + std::to_string(category));
}

ShapeInstance generate_shape(const ShapeSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Geometry geo = make_geometry(spec, seed);
  const Appearance app = make_appearance(spec.texture_seed, spec.image_size);
  const int n = spec.image_size;
  Tensor img = Tensor::chw(3, n, n);
  constexpr double kSub[2] = {-0.25, 0.25};
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      Rgb acc{0, 0, 0};
      for (double sy : kSub) {
        for (double sx : kSub) {
          const Vec2 p(to_normalized(x + sx, n), to_normalized(y + sy, n));
          const Rgb c = geo.contains(p) ? texture_at(app, p) : background_at(app, p);
          acc.r += 0.25 * c.r;
          acc.g += 0.25 * c.g;
          acc.b += 0.25 * c.b;
        }
      }
      const double noise = app.noise[static_cast<std::size_t>(y) * n + x];
      img.at(0, y, x) = std::clamp(acc.r + noise, 0.0, 1.0);
      img.at(1, y, x) = std::clamp(acc.g + noise, 0.0, 1.0);
      img.at(2, y, x) = std::clamp(acc.b + noise, 0.0, 1.0);
    }
  }
  return {std::move(img), geo.landmarks};
}

ParametricWarp random_warp(const WarpRanges& ranges, Rng& rng) {
  if (uniform(rng, 0.0, 1.0) < ranges.tps_probability) {
    const int g = ranges.tps_grid;
    if (g < 2) throw ConfigError("TPS control grid must be at least 2x2");
    std::vector<Vec2> anchors, targets;
    for (int y = 0; y < g; ++y) {
      for (int x = 0; x < g; ++x) {
        const Vec2 a(to_normalized(x, g), to_normalized(y, g));
        anchors.push_back(a);
        targets.push_back(a + Vec2(gaussian(rng, 0.0, ranges.tps_std), gaussian(rng, 0.0, ranges.tps_std)));
      }
    }
    return ParametricWarp::tps(std::move(anchors), std::move(targets));
  }
  const double angle = uniform(rng, -ranges.max_rotation_deg, ranges.max_rotation_deg) * std::numbers::pi / 180.0;
  const double scale = uniform(rng, ranges.scale_min, ranges.scale_max);
  const Vec2 t(uniform(rng, -ranges.max_translation, ranges.max_translation),
               uniform(rng, -ranges.max_translation, ranges.max_translation));
  return ParametricWarp::affine(similarity_affine(angle, scale, t));
}

SamplePair make_pair(const ShapeInstance& source, const ParametricWarp& warp, const PhotometricParams& photometric,
                     const OcclusionParams& occlusion, std::uint64_t seed, const Tensor* target_appearance) {
  const Tensor& base = target_appearance ? *target_appearance : source.image;
  if (!base.same_shape(source.image)) throw ShapeError("target appearance must match the source raster");
  const int h = source.image.height(), w = source.image.width();
  Rng rng(mix_seed(seed, 0xFA1E));

  SamplePair pair;
  pair.source = source.image;
  pair.target = resample(base, h, w, [&warp](const Vec2& q) { return warp.inverse(q); });

  const double contrast = 1.0 + uniform(rng, -photometric.contrast, photometric.contrast);
  const double brightness = uniform(rng, -photometric.brightness, photometric.brightness);
  const bool jitter = photometric.contrast > 0 || photometric.brightness > 0 || photometric.noise_std > 0;
  if (jitter) {
    for (double& v : pair.target.values()) {
      const double noise = photometric.noise_std > 0 ? gaussian(rng, 0.0, photometric.noise_std) : 0.0;
      v = std::clamp((v - 0.5) * contrast + 0.5 + brightness + noise, 0.0, 1.0);
    }
  }

  if (occlusion.probability > 0 && uniform(rng, 0.0, 1.0) < occlusion.probability) {
    const double frac = uniform(rng, occlusion.min_fraction, occlusion.max_fraction);
    const double aspect = uniform(rng, 0.6, 1.6);
    const int bw = std::clamp(static_cast<int>(std::lround(std::sqrt(frac * h * w * aspect))), 1, w);
    const int bh = std::clamp(static_cast<int>(std::lround(frac * h * w / bw)), 1, h);
    OcclusionBox box;
    box.x0 = uniform_int(rng, 0, w - bw);
    box.y0 = uniform_int(rng, 0, h - bh);
    box.x1 = box.x0 + bw;
    box.y1 = box.y0 + bh;
    const Rgb c = random_color(rng, 0.0, 1.0);
    pair.occlusion_mask.assign(static_cast<std::size_t>(h) * w, 0);
    for (int y = box.y0; y < box.y1; ++y) {
      for (int x = box.x0; x < box.x1; ++x) {
        const double n = gaussian(rng, 0.0, 0.05);
        pair.target.at(0, y, x) = std::clamp(c.r + n, 0.0, 1.0);
        pair.target.at(1, y, x) = std::clamp(c.g + n, 0.0, 1.0);
        pair.target.at(2, y, x) = std::clamp(c.b + n, 0.0, 1.0);
        pair.occlusion_mask[static_cast<std::size_t>(y) * w + x] = 1;
      }
    }
    pair.occlusion = box;
  }

  pair.gt = warp_to_flow(warp, h, w);
  pair.landmarks_s = source.landmarks;
  pair.landmarks_t = eval_warp(warp, source.landmarks);
  return pair;
}

SamplePair make_pair(const ShapeInstance& source, const PairOptions& options, std::uint64_t seed,
                     const Tensor* target_appearance) {
  const int h = source.image.height(), w = source.image.width();
  for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
    Rng rng(mix_seed(seed, 0xB0B + attempt));
    try {
      ParametricWarp warp = random_warp(options.warp, rng);
      if (!warp_is_regular(warp)) continue;
      if (warp_to_flow(warp, h, w).valid_fraction() < options.validity_floor) continue;
      return make_pair(source, warp, options.photometric, options.occlusion, rng(), target_appearance);
    } catch (const DegenerateWarp&) {
      continue;
    }
  }
  throw DataError("could not draw a usable warp after " + std::to_string(options.max_retries) + " retries");
}

SamplePair PairGenerator::at(std::uint64_t index) const {
  if (config_.categories.empty()) throw ConfigError("no shape categories configured");
  Rng rng(mix_seed(seed_, index));
  const int category = config_.categories[uniform_int(rng, 0, static_cast<int>(config_.categories.size()) - 1)];
  const std::uint64_t shape_seed = rng();
  const std::uint64_t texture_seed = rng();
  const std::uint64_t alt_texture_seed = rng();
  const std::uint64_t pair_seed = rng();
  const ShapeSpec spec = default_shape_spec(category, config_.image_size, texture_seed);
  const ShapeInstance instance = generate_shape(spec, shape_seed);
  SamplePair pair;
  if (config_.semantic) {
    const ShapeInstance other = generate_shape(default_shape_spec(category, config_.image_size, alt_texture_seed),
                                               shape_seed);
    pair = make_pair(instance, config_.pair, pair_seed, &other.image);
  } else {
    pair = make_pair(instance, config_.pair, pair_seed);
  }
  pair.id = index;
  pair.category = category;
  return pair;
}

Manifest split_dataset(std::span<const std::uint64_t> ids, const std::array<double, 3>& ratios, std::uint64_t seed) {
  if (ids.empty()) throw DataError("cannot split an empty dataset");
  for (double r : ratios) {
    if (r < 0) throw ConfigError("split ratios must be non-negative");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  std::vector<std::uint64_t> order(ids.begin(), ids.end());
  Rng rng(mix_seed(seed, 0x5B11));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n = order.size();
  const std::size_t n_train = std::min(n, static_cast<std::size_t>(std::llround(ratios[0] * n)));
  const std::size_t n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios[1] * n)));
  Manifest m;
  m.train.assign(order.begin(), order.begin() + n_train);
  m.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  m.test.assign(order.begin() + n_train + n_val, order.end());
  return m;
}

std::vector<SamplePair> generate_dataset(const DataConfig& config, std::uint64_t seed, int count,
                                         const std::array<double, 3>& ratios) {
  if (count <= 0) throw DataError("dataset size must be positive");
  PairGenerator gen(config, seed);
  std::vector<SamplePair> pairs;
  std::vector<std::uint64_t> ids;
  for (int i = 0; i < count; ++i) {
    pairs.push_back(gen.at(static_cast<std::uint64_t>(i)));
    ids.push_back(static_cast<std::uint64_t>(i));
  }
  const Manifest m = split_dataset(ids, ratios, seed);
  for (auto id : m.val) pairs[id].split = Split::kVal;
  for (auto id : m.test) pairs[id].split = Split::kTest;
  return pairs;
}

std::vector<const SamplePair*> select_split(std::span<const SamplePair> pairs, Split split) {
  std::vector<const SamplePair*> out;
  for (const SamplePair& p : pairs) {
    if (p.split == split) out.push_back(&p);
  }
  return out;
}

std::vector<std::uint8_t> occluded_source_cells(const SamplePair& pair, int height, int width) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width, 0);
  if (!pair.occlusion) return mask;
  const OcclusionBox& b = *pair.occlusion;
  const int h = pair.target.height(), w = pair.target.width();
  const CoordGrid grid = make_grid(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Vec2 q = pair.gt.warp.apply(grid.at(y, x));
      if (!in_unit_box(q)) continue;
      const double px = to_pixel(q.x(), w), py = to_pixel(q.y(), h);
      if (px >= b.x0 - 0.5 && px < b.x1 - 0.5 && py >= b.y0 - 0.5 && py < b.y1 - 0.5) {
        mask[static_cast<std::size_t>(y) * width + x] = 1;
      }
    }
  }
  return mask;
}

void write_flow(const std::filesystem::path& path, const Tensor& flow) {
  if (flow.rank() != 3) throw ShapeError("write_flow expects (C,H,W)");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const std::uint32_t header[4] = {0, static_cast<std::uint32_t>(flow.height()),
                                   static_cast<std::uint32_t>(flow.width()),
                                   static_cast<std::uint32_t>(flow.channels())};
  out.write("SFLW", 4);
  static_assert(std::endian::native == std::endian::little, "flow files are written little-endian");
  out.write(reinterpret_cast<const char*>(header + 1), 12);
  std::vector<float> values;
  values.reserve(flow.size());
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      for (int c = 0; c < flow.channels(); ++c) values.push_back(static_cast<float>(flow.at(c, y, x)));
    }
  }
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw DataError("failed writing " + path.string());
}

Tensor read_flow(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open flow file " + path.string());
  char magic[4];
  std::uint32_t dims[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(dims), 12);
  if (!in || std::memcmp(magic, "SFLW", 4) != 0) throw DataError(path.string() + " is not a flow file");
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0 || dims[0] > 1 << 15 || dims[1] > 1 << 15 || dims[2] > 64) {
    throw DataError(path.string() + " has implausible dimensions");
  }
  const int h = static_cast<int>(dims[0]), w = static_cast<int>(dims[1]), c = static_cast<int>(dims[2]);
  std::vector<float> values(static_cast<std::size_t>(h) * w * c);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!in) throw DataError(path.string() + " is truncated");
  Tensor out = Tensor::chw(c, h, w);
  std::size_t k = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) out.at(ch, y, x) = values[k++];
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, std::span<const SamplePair> pairs) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "flows");
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  for (const SamplePair& p : pairs) {
    const std::string stem = sample_stem(p.id);
    const std::string src = "images/" + stem + "_s.png";
    const std::string tgt = "images/" + stem + "_t.png";
    const std::string flow = "flows/" + stem + ".flo";
    write_png(dir / src, p.source);
    write_png(dir / tgt, p.target);
    write_flow(dir / flow, p.gt.flow.coords().value());
    json rec = {{"id", p.id},
                {"split", split_name(p.split)},
                {"category", p.category},
                {"source", src},
                {"target", tgt},
                {"flow", flow},
                {"landmarks_s", point_list(p.landmarks_s)},
                {"landmarks_t", point_list(p.landmarks_t)},
                {"warp", warp_to_json(p.gt.warp)},
                {"occlusion", nullptr}};
    if (p.occlusion) rec["occlusion"] = {p.occlusion->x0, p.occlusion->y0, p.occlusion->x1, p.occlusion->y1};
    manifest << rec.dump() << '\n';
  }
}

std::vector<SamplePair> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw DataError("no manifest.jsonl in " + dir.string());
  std::vector<SamplePair> pairs;
  std::string line;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json rec = json::parse(line);
      SamplePair p;
      p.id = rec.at("id").get<std::uint64_t>();
      p.split = parse_split(rec.at("split").get<std::string>());
      p.category = rec.at("category").get<int>();
      p.source = read_png(dir / rec.at("source").get<std::string>());
      p.target = read_png(dir / rec.at("target").get<std::string>());
      if (!p.source.same_shape(p.target)) throw DataError("source and target sizes differ");
      p.landmarks_s = parse_points(rec.at("landmarks_s"));
      p.landmarks_t = parse_points(rec.at("landmarks_t"));
      p.gt = warp_to_flow(warp_from_json(rec.at("warp")), p.source.height(), p.source.width());
      const json& occ = rec.at("occlusion");
      if (!occ.is_null()) {
        const auto b = occ.get<std::vector<int>>();
        if (b.size() != 4) throw DataError("occlusion box needs 4 integers");
        p.occlusion = OcclusionBox{b[0], b[1], b[2], b[3]};
        const int w = p.target.width();
        p.occlusion_mask.assign(p.target.plane(), 0);
        for (int y = b[1]; y < b[3]; ++y) {
          for (int x = b[0]; x < b[2]; ++x) p.occlusion_mask[static_cast<std::size_t>(y) * w + x] = 1;
        }
      }
      pairs.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DegenerateWarp& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (pairs.empty()) throw DataError("manifest in " + dir.string() + " lists no samples");
  return pairs;
}

}  // namespace semalign

#include "sefcn/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "sefcn/layers.hpp"
#include "sefcn/tensor_io.hpp"

namespace sefcn {

namespace {

constexpr double kBlobTotal = 0.30;
constexpr double kBlobRatio = 0.6;  // keeps every nested ellipse/rectangle pair contained
constexpr double kThinFraction = 0.012;
constexpr double kThinWidth = 3.0;
constexpr double kNoiseSigma = 0.08;
constexpr double kFieldAmplitude = 0.03;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double normal(Rng& rng) {
  // Box-Muller on our own uniforms so streams do not depend on the standard library.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t thin_count(std::size_t k) { return k >= 4 ? 2 : (k >= 3 ? 1 : 0); }

struct Canvas {
  std::size_t h, w;
  std::vector<std::int32_t> label;

  template <typename Pred>
  void paint(std::int32_t id, Pred inside, bool background_only = false) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        auto& l = label[y * w + x];
        if (background_only && l != 0) continue;
        if (inside(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5)) l = id;
      }
    }
  }
};

void paint_imbalanced(const GeneratorConfig& cfg, Canvas& cv, Rng& rng) {
  const double hh = static_cast<double>(cfg.height), ww = static_cast<double>(cfg.width);
  const double area = hh * ww;
  const std::size_t k = cfg.num_classes;
  const std::size_t thin = thin_count(k);
  const std::size_t blobs = k - 1 - thin;
  const auto frac = target_fractions(cfg);

  const double cy = hh / 2 + uniform(rng, -0.05, 0.05) * hh;
  const double cx = ww / 2 + uniform(rng, -0.05, 0.05) * ww;
  const double s = uniform(rng, 0.8, 1.25);  // y / x aspect
  const bool rect_first = false;            // the outer level stays an ellipse so the arc band can follow it

  double cumulative = 0.0;
  for (std::size_t j = blobs; j >= 1; --j) cumulative += frac[j];
  double a_outer = 0.0, b_outer = 0.0;
  for (std::size_t j = 1; j <= blobs; ++j) {
    const double a_j = cumulative * area;
    const bool ellipse = ((j % 2 == 1) != rect_first);
    const auto id = static_cast<std::int32_t>(j);
    if (ellipse) {
      const double a = std::sqrt(a_j / (std::numbers::pi * s));
      const double b = s * a;
      if (j == 1) {
        a_outer = a;
        b_outer = b;
      }
      cv.paint(id, [&](double y, double x) {
        const double dx = (x - cx) / a, dy = (y - cy) / b;
        return dx * dx + dy * dy <= 1.0;
      });
    } else {
      const double u = std::sqrt(a_j / (4.0 * s));
      const double v = s * u;
      cv.paint(id, [&](double y, double x) { return std::abs(x - cx) <= u && std::abs(y - cy) <= v; });
    }
    cumulative -= frac[j];
  }

  if (thin >= 1) {
    // Arc band just outside the outer ellipse.
    const double gap = 2.0;
    const double a = (blobs ? a_outer : 0.25 * ww) + gap;
    const double b = (blobs ? b_outer : 0.25 * hh) + gap;
    const double rmean = 0.5 * (a + b);
    const double target = frac[blobs + 1] * area;
    const double span = target / (kThinWidth * (rmean + 0.5 * kThinWidth));
    const double theta0 = uniform(rng, -std::numbers::pi, std::numbers::pi);
    cv.paint(
        static_cast<std::int32_t>(blobs + 1),
        [&](double y, double x) {
          const double dx = (x - cx) / a, dy = (y - cy) / b;
          const double d = (std::sqrt(dx * dx + dy * dy) - 1.0) * rmean;
          if (d <= 0.0 || d > kThinWidth) return false;
          double dt = std::atan2(dy, dx) - theta0;
          dt = std::remainder(dt, 2.0 * std::numbers::pi);
          return std::abs(dt) <= 0.5 * span;
        },
        true);
  }
  if (thin >= 2) {
    // Straight band along a randomly chosen image edge.
    const int side = static_cast<int>(rng() % 4);
    const bool horizontal = side < 2;
    const double extent = horizontal ? ww : hh;
    const double across = horizontal ? hh : ww;
    const double length = std::min(frac[blobs + 2] * area / kThinWidth, extent - 4.0);
    const double start = uniform(rng, 2.0, extent - 2.0 - length);
    const double offset = (side % 2 == 0) ? 2.0 : across - 2.0 - kThinWidth;
    cv.paint(
        static_cast<std::int32_t>(blobs + 2),
        [&](double y, double x) {
          const double along = horizontal ? x : y;
          const double perp = horizontal ? y : x;
          return along >= start && along < start + length && perp >= offset && perp < offset + kThinWidth;
        },
        true);
  }
}

void paint_balanced(const GeneratorConfig& cfg, Canvas& cv, Rng& rng) {
  const double hh = static_cast<double>(cfg.height), ww = static_cast<double>(cfg.width);
  const std::size_t k = cfg.num_classes;
  const double outer = static_cast<double>(k - 1) / static_cast<double>(k);
  const double margin_x = 0.5 * ww * (1.0 - std::sqrt(outer));
  const double margin_y = 0.5 * hh * (1.0 - std::sqrt(outer));
  const double cx = ww / 2 + uniform(rng, -0.5, 0.5) * margin_x;
  const double cy = hh / 2 + uniform(rng, -0.5, 0.5) * margin_y;
  for (std::size_t j = 1; j < k; ++j) {
    const double a_j = static_cast<double>(k - j) / static_cast<double>(k);
    const double u = 0.5 * ww * std::sqrt(a_j);
    const double v = 0.5 * hh * std::sqrt(a_j);
    cv.paint(static_cast<std::int32_t>(j),
             [&](double y, double x) { return std::abs(x - cx) <= u && std::abs(y - cy) <= v; });
  }
}

}  // namespace

std::string to_string(ImbalanceProfile p) { return p == ImbalanceProfile::kBalanced ? "balanced" : "imbalanced"; }

ImbalanceProfile parse_profile(std::string_view s) {
  if (s == "imbalanced") return ImbalanceProfile::kImbalanced;
  if (s == "balanced") return ImbalanceProfile::kBalanced;
  throw ConfigError("unknown imbalance profile \"" + std::string(s) + "\" (expected imbalanced or balanced)");
}

void GeneratorConfig::validate() const {
  if (height == 0 || width == 0 || height % 16 != 0 || width % 16 != 0) {
    throw ConfigError("data.generator.height and data.generator.width must be positive multiples of 16, got " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
  if (num_classes < 2) throw ConfigError("data.generator.num_classes must be at least 2");
  if (total() == 0) throw ConfigError("data.generator.n_train + n_val + n_test must be positive");
}

std::vector<double> target_fractions(const GeneratorConfig& cfg) {
  const std::size_t k = cfg.num_classes;
  std::vector<double> f(k, 0.0);
  if (cfg.profile == ImbalanceProfile::kBalanced) {
    std::fill(f.begin(), f.end(), 1.0 / static_cast<double>(k));
    return f;
  }
  const std::size_t thin = thin_count(k);
  const std::size_t blobs = k - 1 - thin;
  const double first = kBlobTotal * (1.0 - kBlobRatio) / (1.0 - std::pow(kBlobRatio, static_cast<double>(blobs)));
  double used = 0.0;
  for (std::size_t j = 1; j <= blobs; ++j) {
    f[j] = first * std::pow(kBlobRatio, static_cast<double>(j - 1));
    used += f[j];
  }
  for (std::size_t j = blobs + 1; j < k; ++j) {
    f[j] = kThinFraction;
    used += f[j];
  }
  f[0] = 1.0 - used;
  return f;
}

Sample generate_sample(const GeneratorConfig& cfg, std::size_t index) {
  cfg.validate();
  Rng rng(splitmix64(cfg.seed ^ splitmix64(index + 1)));
  Canvas cv{cfg.height, cfg.width, std::vector<std::int32_t>(cfg.height * cfg.width, 0)};
  if (cfg.profile == ImbalanceProfile::kBalanced) {
    paint_balanced(cfg, cv, rng);
  } else {
    paint_imbalanced(cfg, cv, rng);
  }

  const double k = static_cast<double>(cfg.num_classes);
  const double fx = uniform(rng, 0.5, 1.5), fy = uniform(rng, 0.5, 1.5);
  const double px = uniform(rng, 0.0, 1.0), py = uniform(rng, 0.0, 1.0);
  Sample s;
  char name[32];
  std::snprintf(name, sizeof name, "image_%05zu.tns", index);
  s.name = name;
  s.image = Tensor(Shape{1, cfg.height, cfg.width});
  s.label = LabelMap(1, cfg.height, cfg.width);
  for (std::size_t y = 0; y < cfg.height; ++y) {
    for (std::size_t x = 0; x < cfg.width; ++x) {
      const std::size_t i = y * cfg.width + x;
      const double mu = (cv.label[i] + 0.5) / k;
      const double field = kFieldAmplitude *
                           std::sin(2.0 * std::numbers::pi * (fx * static_cast<double>(x) / cfg.width + px)) *
                           std::cos(2.0 * std::numbers::pi * (fy * static_cast<double>(y) / cfg.height + py));
      s.image[i] = static_cast<float>(std::clamp(mu + kNoiseSigma * normal(rng) + field, 0.0, 1.0));
      s.label.ids[i] = cv.label[i];
    }
  }
  return s;
}

Manifest generate_dataset(const GeneratorConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  Manifest m;
  m.seed = cfg.seed;
  m.num_classes = cfg.num_classes;
  m.directory = dir;
  for (std::size_t i = 0; i < cfg.total(); ++i) {
    const Sample s = generate_sample(cfg, i);
    char label_name[32];
    std::snprintf(label_name, sizeof label_name, "label_%05zu.tns", i);
    write_tensor(s.image, dir / s.name);
    write_tensor(labels_to_tensor(s.label), dir / label_name);
    const char* split = i < cfg.n_train ? "train" : (i < cfg.n_train + cfg.n_val ? "val" : "test");
    m.entries.push_back({s.name, label_name, split});
  }
  write_manifest(m, dir / "manifest.json");
  return m;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["num_classes"] = m.num_classes;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) j["entries"].push_back({{"image", e.image}, {"label", e.label}, {"split", e.split}});
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.directory = path.parent_path();
  try {
    const auto j = nlohmann::json::parse(in);
    m.version = j.at("version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry{e.at("image").get<std::string>(), e.at("label").get<std::string>(),
                          e.at("split").get<std::string>()};
      if (entry.split != "train" && entry.split != "val" && entry.split != "test") {
        throw InputError("manifest entry " + entry.image + " has unknown split \"" + entry.split + "\"");
      }
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (m.num_classes < 2) throw InputError("manifest " + path.string() + " declares fewer than 2 classes");
  return m;
}

std::vector<Sample> load_split(const Manifest& m, std::string_view split) {
  std::vector<Sample> out;
  for (const auto& e : m.entries) {
    if (!split.empty() && e.split != split) continue;
    Sample s;
    s.name = e.image;
    Tensor label;
    try {
      s.image = read_tensor(m.directory / e.image);
      label = read_tensor(m.directory / e.label);
    } catch (const FormatError& err) {
      throw InputError("sample " + e.image + ": " + err.what());
    }
    const Shape& is = s.image.shape();
    if (is.rank() != 3 || is[0] != 1) throw InputError("sample " + e.image + ": image must be (1, H, W), got " + is.to_string());
    if (!(label.shape() == is)) {
      throw InputError("sample " + e.image + ": label " + e.label + " has shape " + label.shape().to_string() +
                       ", image has " + is.to_string());
    }
    try {
      s.label = labels_from_tensor(label, m.num_classes);
    } catch (const InputError& err) {
      throw InputError("sample " + e.label + ": " + err.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path, std::string_view split) {
  return load_split(read_manifest(manifest_path), split);
}

ClassFrequencies class_frequencies(std::span<const Sample> samples, std::size_t num_classes) {
  if (samples.empty()) throw InputError("class_frequencies: empty split");
  ClassFrequencies f{{}, {}, ClassCounts(num_classes)};
  for (const auto& s : samples) f.counts.add(s.label);
  f.frequency.assign(num_classes, 0.0);
  f.fraction.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (f.counts.present_pixels[c]) {
      f.frequency[c] =
          static_cast<double>(f.counts.pixels[c]) / static_cast<double>(f.counts.present_pixels[c]);
    }
    f.fraction[c] = static_cast<double>(f.counts.pixels[c]) / static_cast<double>(f.counts.total);
  }
  return f;
}

ClassFrequencies class_frequencies(const Manifest& m, std::string_view split) {
  const auto samples = load_split(m, split);
  if (samples.empty()) throw InputError("class_frequencies: split \"" + std::string(split) + "\" is empty");
  return class_frequencies(samples, m.num_classes);
}

}  // namespace sefcn

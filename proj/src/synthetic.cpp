#include "dietcl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

namespace dietcl {

void SyntheticConfig::validate() const {
  if (num_classes < 1 || per_class < 1) throw ConfigError("synthetic corpus needs classes and examples");
  if (shape.height < 1 || shape.width < 1 || shape.channels < 1) throw ConfigError("bad synthetic image shape");
  if (primitive_size < 1 || primitive_size > std::min(shape.height, shape.width)) {
    throw ConfigError("primitive_size must fit inside the image");
  }
  if (primitives < 1 || parts_per_class < 1) throw ConfigError("need at least one primitive and one part");
  if (jitter < 0 || distractors < 0 || noise < 0.0 || background < 0.0) {
    throw ConfigError("synthetic jitter/distractors/noise/background must be >= 0");
  }
}

namespace {

using Stamp = std::vector<float>;  // primitive_size^2, values in {0,1}

Stamp random_stroke(int p, Rng& rng) {
  Stamp s(static_cast<std::size_t>(p * p), 0.0f);
  int y = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(p)));
  int x = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(p)));
  const int steps = 2 * p;
  for (int i = 0; i < steps; ++i) {
    s[static_cast<std::size_t>(y * p + x)] = 1.0f;
    switch (uniform_index(rng, 4)) {
      case 0: y = std::min(p - 1, y + 1); break;
      case 1: y = std::max(0, y - 1); break;
      case 2: x = std::min(p - 1, x + 1); break;
      default: x = std::max(0, x - 1); break;
    }
  }
  return s;
}

struct Part {
  int primitive = 0;
  int y = 0;
  int x = 0;
  int channel = 0;
};

void stamp(std::vector<float>& img, const ImageShape& shape, const Stamp& s, int p, int y0, int x0, int channel,
           float intensity) {
  for (int dy = 0; dy < p; ++dy) {
    for (int dx = 0; dx < p; ++dx) {
      const int y = y0 + dy;
      const int x = x0 + dx;
      if (y < 0 || x < 0 || y >= shape.height || x >= shape.width) continue;
      const float v = s[static_cast<std::size_t>(dy * p + dx)] * intensity;
      for (int c = 0; c < shape.channels; ++c) {
        if (shape.channels > 1 && c != channel) continue;
        auto& px = img[static_cast<std::size_t>((y * shape.width + x) * shape.channels + c)];
        px = std::max(px, v);
      }
    }
  }
}

}  // namespace

Corpus make_synthetic_corpus(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int p = cfg.primitive_size;
  const int max_y = cfg.shape.height - p;
  const int max_x = cfg.shape.width - p;

  std::vector<Stamp> bank;
  for (int i = 0; i < cfg.primitives; ++i) bank.push_back(random_stroke(p, rng));

  std::vector<std::vector<Part>> classes;
  std::set<std::vector<std::tuple<int, int, int, int>>> used;
  while (static_cast<int>(classes.size()) < cfg.num_classes) {
    std::vector<Part> parts;
    std::vector<std::tuple<int, int, int, int>> key;
    for (int k = 0; k < cfg.parts_per_class; ++k) {
      Part part;
      part.primitive = static_cast<int>(uniform_index(rng, bank.size()));
      part.y = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_y + 1)));
      part.x = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_x + 1)));
      part.channel = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.shape.channels)));
      parts.push_back(part);
      key.emplace_back(part.primitive, part.y, part.x, part.channel);
    }
    std::sort(key.begin(), key.end());
    if (used.insert(key).second) classes.push_back(std::move(parts));
  }

  Corpus corpus;
  corpus.shape = cfg.shape;
  corpus.num_classes = cfg.num_classes;
  corpus.images = ImageStore(cfg.shape);
  std::vector<float> img(cfg.shape.size());
  const auto jitter = [&](int base, int hi) {
    const int span = 2 * cfg.jitter + 1;
    const int d = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(span))) - cfg.jitter;
    return std::clamp(base + d, 0, hi);
  };
  for (int c = 0; c < cfg.num_classes; ++c) {
    for (int i = 0; i < cfg.per_class; ++i) {
      const double gy = uniform01(rng) - 0.5;
      const double gx = uniform01(rng) - 0.5;
      const double level = uniform01(rng);
      for (int y = 0; y < cfg.shape.height; ++y) {
        for (int x = 0; x < cfg.shape.width; ++x) {
          const double v = cfg.background *
                           (level + gy * y / cfg.shape.height + gx * x / cfg.shape.width);
          for (int ch = 0; ch < cfg.shape.channels; ++ch) {
            img[static_cast<std::size_t>((y * cfg.shape.width + x) * cfg.shape.channels + ch)] =
                static_cast<float>(v);
          }
        }
      }
      for (const auto& part : classes[static_cast<std::size_t>(c)]) {
        const float intensity = static_cast<float>(0.6 + 0.4 * uniform01(rng));
        stamp(img, cfg.shape, bank[static_cast<std::size_t>(part.primitive)], p, jitter(part.y, max_y),
              jitter(part.x, max_x), part.channel, intensity);
      }
      for (int d = 0; d < cfg.distractors; ++d) {
        const auto prim = uniform_index(rng, bank.size());
        const int y = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_y + 1)));
        const int x = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_x + 1)));
        const int ch = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.shape.channels)));
        stamp(img, cfg.shape, bank[prim], p, y, x, ch, static_cast<float>(0.3 + 0.4 * uniform01(rng)));
      }
      for (auto& v : img) {
        v = std::clamp(v + static_cast<float>(cfg.noise * standard_normal(rng)), 0.0f, 1.0f);
      }

      Example ex;
      char id[32];
      std::snprintf(id, sizeof(id), "c%03d_%05d", c, i);
      ex.id = id;
      ex.image = corpus.images.add(img);
      ex.label = c;
      if (cfg.timestamps) {
        ex.timestamp = static_cast<double>(c) / cfg.num_classes + cfg.time_spread * standard_normal(rng);
      }
      corpus.examples.push_back(std::move(ex));
    }
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  write_image_pack(dir / "images.pack", corpus.images);
  std::vector<ManifestRecord> records;
  records.reserve(corpus.examples.size());
  for (const auto& ex : corpus.examples) {
    records.push_back({ex.id, "images.pack#" + std::to_string(ex.image), ex.label, ex.timestamp});
  }
  write_manifest(dir / "manifest.tsv", records);
}

}  // namespace dietcl

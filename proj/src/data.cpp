#include "mdcpc/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <utility>

#include "mdcpc/error.hpp"

namespace mdcpc {

const std::vector<ImageSample>& DatasetStore::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw InvalidArgument("unknown split '" + std::string(name) + "' (expected train, valid or test)");
}

std::vector<ImageSample>& DatasetStore::split(std::string_view name) {
  return const_cast<std::vector<ImageSample>&>(std::as_const(*this).split(name));
}

void DatasetStore::validate(bool require_labels) const {
  std::set<std::string> ids;
  for (const char* name : {"train", "valid", "test"}) {
    for (const auto& s : split(name)) {
      if (s.size < 16) throw FormatError("image " + s.id + " smaller than 16 pixels");
      if (s.pixels.size() != static_cast<std::size_t>(s.size) * s.size * 3) {
        throw FormatError("image " + s.id + " is not a square RGB array");
      }
      if (require_labels && !s.label) throw FormatError("image " + s.id + " has no label");
      if (!ids.insert(s.id).second) throw FormatError("duplicate sample id " + s.id);
    }
  }
}

// Pure rotations compose with a flip; indices computed by inverse mapping.
ImageSample apply_dihedral(const ImageSample& image, int element) {
  if (image.pixels.size() != static_cast<std::size_t>(image.size) * image.size * 3) {
    throw InvalidArgument("augment: image " + image.id + " is not square");
  }
  if (element < 0 || element >= kDihedralElements) {
    throw InvalidArgument("dihedral element out of range: " + std::to_string(element));
  }
  const int n = image.size;
  const int turns = element % 4;
  const bool flip = element >= 4;
  ImageSample out = image;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      // (y, x) in the output; undo the flip first, then the rotation.
      const int ry = y;
      const int rx = flip ? n - 1 - x : x;
      int sy = ry, sx = rx;
      switch (turns) {
        case 1: sy = n - 1 - rx; sx = ry; break;
        case 2: sy = n - 1 - ry; sx = n - 1 - rx; break;
        case 3: sy = rx; sx = n - 1 - ry; break;
        default: break;
      }
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

int draw_dihedral_element(Rng& rng) {
  return static_cast<int>(std::uniform_int_distribution<int>(0, kDihedralElements - 1)(rng));
}

ImageSample augment(const ImageSample& image, Rng& rng) {
  return apply_dihedral(image, draw_dihedral_element(rng));
}

ImageSample augment(const ImageSample& image, std::uint64_t seed) {
  Rng rng(seed);
  return augment(image, rng);
}

std::vector<std::string> sample_label_subset(const DatasetStore& store, int n, std::uint64_t seed) {
  const auto& train = store.train;
  if (n < 1) throw InvalidArgument("subset size must be at least 1");
  if (static_cast<std::size_t>(n) > train.size()) {
    throw InvalidArgument("subset size " + std::to_string(n) + " exceeds the " +
                          std::to_string(train.size()) + " available training samples");
  }
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& label = train[i].label;
    if (!label || (*label != 0 && *label != 1)) {
      throw InvalidArgument("sample " + train[i].id + " lacks a binary label");
    }
    by_class[*label].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw InvalidArgument("stratification impossible: training split holds a single class");
  }
  Rng rng(seed);
  // Odd sizes give the extra sample to a randomly chosen class.
  const int extra = std::uniform_int_distribution<int>(0, 1)(rng);
  int quota[2] = {n / 2, n / 2};
  if (n % 2) quota[extra] += 1;
  for (int c = 0; c < 2; ++c) {
    const int avail = static_cast<int>(by_class[c].size());
    if (quota[c] > avail) {
      quota[1 - c] += quota[c] - avail;
      quota[c] = avail;
    }
  }
  std::vector<std::size_t> chosen;
  for (int c = 0; c < 2; ++c) {
    auto pool = by_class[c];
    std::shuffle(pool.begin(), pool.end(), rng);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + quota[c]);
  }
  std::shuffle(chosen.begin(), chosen.end(), rng);
  std::vector<std::string> ids;
  ids.reserve(chosen.size());
  for (auto i : chosen) ids.push_back(train[i].id);
  return ids;
}

DatasetStore split_train_val(const DatasetStore& store, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw InvalidArgument("validation fraction must lie in (0, 1), got " + std::to_string(fraction));
  }
  const std::size_t total = store.train.size();
  const auto n_valid = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::uint8_t> to_valid(total, 0);
  for (std::size_t k = 0; k < n_valid; ++k) to_valid[order[k]] = 1;

  DatasetStore out;
  out.metadata = store.metadata;
  out.test = store.test;
  for (std::size_t i = 0; i < total; ++i) {
    (to_valid[i] ? out.valid : out.train).push_back(store.train[i]);
  }
  return out;
}

namespace {

struct Grating {
  double frequency;  // cycles per pixel
  double angle;
  double phase;
  double amplitude;
};

// Class bands in cycles/pixel. Both classes share every other distribution
// (orientation, phase, amplitude, noise), so only the radial frequency
// separates them. Colour is fixed: a per-image tint would let a patch be
// matched to its image by colour alone.
constexpr double kBandLow[2] = {0.07, 0.17};
constexpr double kBandHigh[2] = {0.13, 0.25};
constexpr int kGratings = 4;
constexpr double kTint[3] = {0.95, 0.7, 0.85};
constexpr double kBackground = 128.0;
constexpr double kNoise = 8.0;

ImageSample render_texture(int size, int label, std::uint64_t seed, std::string id) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;

  Grating g[kGratings];
  for (auto& gr : g) {
    gr.frequency = kBandLow[label] + unit(rng) * (kBandHigh[label] - kBandLow[label]);
    gr.angle = unit(rng) * std::numbers::pi;
    gr.phase = unit(rng) * two_pi;
    gr.amplitude = 15.0 + 15.0 * unit(rng);
  }

  ImageSample img;
  img.size = size;
  img.label = label;
  img.id = std::move(id);
  img.pixels.resize(static_cast<std::size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double wave = 0;
      for (const auto& gr : g) {
        const double u = x * std::cos(gr.angle) + y * std::sin(gr.angle);
        wave += gr.amplitude * std::sin(two_pi * gr.frequency * u + gr.phase);
      }
      for (int c = 0; c < 3; ++c) {
        const double v = kBackground + kTint[c] * wave + kNoise * gauss(rng);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return img;
}

}  // namespace

DatasetStore generate_synthetic(int n_per_class, int image_size, std::uint64_t seed) {
  if (n_per_class < 1) throw InvalidArgument("n_per_class must be at least 1");
  if (image_size < 16) throw InvalidArgument("image_size must be at least 16");
  DatasetStore store;
  store.metadata.image_size = image_size;
  store.metadata.class_names = {"low_frequency", "high_frequency"};
  store.metadata.source = "synthetic:n=" + std::to_string(n_per_class) +
                          ",size=" + std::to_string(image_size) + ",seed=" + std::to_string(seed);

  const auto n_train = static_cast<int>(std::lround(0.6 * n_per_class));
  const auto n_valid = static_cast<int>(std::lround(0.2 * n_per_class));
  for (int label = 0; label < 2; ++label) {
    for (int i = 0; i < n_per_class; ++i) {
      std::string id = "syn" + std::to_string(seed) + "_c" + std::to_string(label) + "_" +
                       std::to_string(i);
      auto img = render_texture(image_size, label,
                                derive_seed(seed, static_cast<std::uint64_t>(label),
                                            static_cast<std::uint64_t>(i)),
                                std::move(id));
      auto& dst = i < n_train ? store.train : (i < n_train + n_valid ? store.valid : store.test);
      dst.push_back(std::move(img));
    }
  }
  Rng rng(derive_seed(seed, 0xD1CEu));
  for (auto* s : {&store.train, &store.valid, &store.test}) std::shuffle(s->begin(), s->end(), rng);
  return store;
}

Tensor images_to_tensor(const std::vector<const ImageSample*>& images) {
  if (images.empty()) throw InvalidArgument("images_to_tensor: empty batch");
  const int size = images.front()->size;
  Tensor out({static_cast<int>(images.size()), size, size, 3});
  std::size_t off = 0;
  for (const auto* img : images) {
    if (img->size != size) throw GeometryError("images_to_tensor: mixed image sizes");
    for (auto p : img->pixels) out[off++] = static_cast<Real>(p) / 255.0;
  }
  return out;
}

}  // namespace mdcpc

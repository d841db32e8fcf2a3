#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json_util.hpp"
#include "util.hpp"

namespace potionlab {

struct Shape3 {
  std::size_t height = 1, width = 1, channels = 1;
  std::size_t size() const { return height * width * channels; }
  bool operator==(const Shape3&) const = default;
};

inline std::string to_string(const Shape3& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

enum class LabelMode { assigned, clean };
enum class Split { train, test_clean, test_poisoned };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_clean: return "test_clean";
    case Split::test_poisoned: return "test_poisoned";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test_clean") return Split::test_clean;
  if (s == "test_poisoned") return Split::test_poisoned;
  throw std::invalid_argument("unknown split tag: " + s);
}

// Images are stored row-major, HWC, one sample after another.
struct Batch {
  Shape3 shape;
  std::vector<double> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> image(std::size_t i) const {
    return {images.data() + i * shape.size(), shape.size()};
  }
};

struct Dataset {
  Shape3 shape;
  std::size_t classes = 0;
  Split split = Split::train;
  std::vector<double> pixels;
  std::vector<int> clean_labels;
  std::vector<int> assigned_labels;
  std::vector<std::uint8_t> manipulated;  // member of S_m
  std::vector<std::uint8_t> forget;       // member of S_f
  std::vector<std::uint8_t> triggered;

  std::size_t size() const { return clean_labels.size(); }

  std::span<const double> image(std::size_t i) const {
    return {pixels.data() + i * shape.size(), shape.size()};
  }
  std::span<double> image(std::size_t i) { return {pixels.data() + i * shape.size(), shape.size()}; }

  int label(std::size_t i, LabelMode mode) const {
    return mode == LabelMode::clean ? clean_labels[i] : assigned_labels[i];
  }

  // Content id: any change to pixels, labels or flags changes it.
  std::string id() const {
    Checksum c;
    c.update_le<std::uint64_t>(shape.height);
    c.update_le<std::uint64_t>(shape.width);
    c.update_le<std::uint64_t>(shape.channels);
    c.update_le<std::uint64_t>(classes);
    c.update_values<double>(pixels);
    c.update_values<int>(clean_labels);
    c.update_values<int>(assigned_labels);
    c.update_values<std::uint8_t>(manipulated);
    c.update_values<std::uint8_t>(forget);
    c.update_values<std::uint8_t>(triggered);
    return c.hex();
  }

  void validate() const {
    const std::size_t n = size();
    if (pixels.size() != n * shape.size() || assigned_labels.size() != n || manipulated.size() != n ||
        forget.size() != n || triggered.size() != n)
      throw std::invalid_argument("dataset: inconsistent field lengths");
    for (std::size_t i = 0; i < n; ++i) {
      if (clean_labels[i] < 0 || static_cast<std::size_t>(clean_labels[i]) >= classes ||
          assigned_labels[i] < 0 || static_cast<std::size_t>(assigned_labels[i]) >= classes)
        throw std::invalid_argument("dataset: label out of range at sample " + std::to_string(i));
    }
    for (double p : pixels)
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("dataset: pixel outside [0,1]");
  }
};

inline Dataset make_dataset(Shape3 shape, std::size_t classes, std::vector<double> pixels,
                            std::vector<int> labels, Split split = Split::train) {
  Dataset d;
  d.shape = shape;
  d.classes = classes;
  d.split = split;
  d.pixels = std::move(pixels);
  d.assigned_labels = labels;
  d.clean_labels = std::move(labels);
  d.manipulated.assign(d.clean_labels.size(), 0);
  d.forget.assign(d.clean_labels.size(), 0);
  d.triggered.assign(d.clean_labels.size(), 0);
  d.validate();
  return d;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

inline std::vector<std::size_t> indices_where(const std::vector<std::uint8_t>& flags, bool value = true) {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (static_cast<bool>(flags[i]) == value) v.push_back(i);
  return v;
}

inline Batch make_batch(const Dataset& d, std::span<const std::size_t> idx, LabelMode mode) {
  Batch b;
  b.shape = d.shape;
  b.images.reserve(idx.size() * d.shape.size());
  for (std::size_t i : idx) {
    auto img = d.image(i);
    b.images.insert(b.images.end(), img.begin(), img.end());
    b.labels.push_back(d.label(i, mode));
  }
  return b;
}

// Content of the listed samples (images and assigned labels, in order). Two subsets
// with equal content get equal ids regardless of the surrounding dataset.
inline std::string subset_id(const Dataset& d, std::span<const std::size_t> idx) {
  Checksum c;
  c.update_le<std::uint64_t>(d.shape.height);
  c.update_le<std::uint64_t>(d.shape.width);
  c.update_le<std::uint64_t>(d.shape.channels);
  c.update_le<std::uint64_t>(d.classes);
  for (std::size_t i : idx) {
    c.update_values<double>(d.image(i));
    c.update_le<int>(d.assigned_labels[i]);
  }
  return c.hex();
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian-blob images. Class k puts a blob near the k-th point of a
// circle; position jitter, a distractor blob and pixel noise make it non-trivial.

struct BlobConfig {
  std::size_t classes = 10;
  std::size_t train = 5000;
  std::size_t test = 1000;
  std::size_t size = 16;
  std::size_t channels = 1;
  std::uint64_t seed = 1;
  double noise = 0.08;
  double jitter = 0.8;
  double sigma = 1.8;

  void validate() const {
    if (classes < 2) throw std::invalid_argument("blobs: classes must be >= 2");
    if (train == 0) throw std::invalid_argument("blobs: train count must be >= 1");
    if (test == 0) throw std::invalid_argument("blobs: test count must be >= 1");
    if (size < 4) throw std::invalid_argument("blobs: image size must be >= 4");
    if (channels == 0) throw std::invalid_argument("blobs: channels must be >= 1");
    if (noise < 0 || jitter < 0 || sigma <= 0) throw std::invalid_argument("blobs: bad noise parameters");
  }
};

struct CleanData {
  Dataset train;
  Dataset test;
};

namespace detail {

inline Dataset blob_split(const BlobConfig& cfg, std::size_t n, Rng& rng, Split split) {
  const double scale = static_cast<double>(cfg.size) / 16.0;
  const double c0 = 7.0 * scale, radius = 4.0 * scale;
  const double sig = cfg.sigma * scale, jit = cfg.jitter * scale;
  const double lo = 2.0 * scale, hi = 13.0 * scale;
  Shape3 shape{cfg.size, cfg.size, cfg.channels};

  std::uniform_int_distribution<int> pick_class(0, static_cast<int>(cfg.classes) - 1);
  std::normal_distribution<double> jitter(0.0, jit);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  std::uniform_real_distribution<double> amp(0.6, 1.0), unit(0.0, 1.0), where(lo, hi);

  std::vector<double> pixels(n * shape.size());
  std::vector<int> labels(n);
  for (std::size_t s = 0; s < n; ++s) {
    const int k = pick_class(rng);
    labels[s] = k;
    const double ang = 2.0 * std::numbers::pi * k / static_cast<double>(cfg.classes);
    const double py = c0 + radius * std::sin(ang) + jitter(rng);
    const double px = c0 + radius * std::cos(ang) + jitter(rng);
    const double a = amp(rng);
    const double dy = where(rng), dx = where(rng), da = 0.5 * unit(rng);
    double* img = pixels.data() + s * shape.size();
    for (std::size_t r = 0; r < cfg.size; ++r) {
      for (std::size_t c = 0; c < cfg.size; ++c) {
        const double y = static_cast<double>(r), x = static_cast<double>(c);
        const double v = a * std::exp(-((y - py) * (y - py) + (x - px) * (x - px)) / (2 * sig * sig)) +
                         da * std::exp(-((y - dy) * (y - dy) + (x - dx) * (x - dx)) / (2 * sig * sig));
        for (std::size_t ch = 0; ch < cfg.channels; ++ch)
          img[(r * cfg.size + c) * cfg.channels + ch] = std::clamp(v + noise(rng), 0.0, 1.0);
      }
    }
  }
  return make_dataset(shape, cfg.classes, std::move(pixels), std::move(labels), split);
}

}  // namespace detail

inline CleanData generate_blobs(const BlobConfig& cfg) {
  cfg.validate();
  Rng train_rng = make_rng(cfg.seed, 1), test_rng = make_rng(cfg.seed, 2);
  return {detail::blob_split(cfg, cfg.train, train_rng, Split::train),
          detail::blob_split(cfg, cfg.test, test_rng, Split::test_clean)};
}

// ---------------------------------------------------------------------------
// On-disk format: <dir>/manifest.json plus raw little-endian tensors per split.

inline constexpr const char* kDatasetFormat = "potionlab-dataset";

inline json split_entry(const Dataset& d, const std::string& name) {
  return {{"split", to_string(d.split)},
          {"count", d.size()},
          {"images", name + ".images.f64"},
          {"clean_labels", name + ".clean.i32"},
          {"assigned_labels", name + ".assigned.i32"},
          {"flags", name + ".flags.u8"},
          {"checksum", d.id()}};
}

inline void save_datasets(const std::filesystem::path& dir, const std::map<std::string, const Dataset*>& splits,
                          const json& extra = json::object()) {
  if (splits.empty()) throw std::invalid_argument("save_datasets: nothing to write");
  std::filesystem::create_directories(dir);
  const Dataset& first = *splits.begin()->second;
  json manifest = {{"format", kDatasetFormat},
                   {"version", 1},
                   {"shape", {first.shape.height, first.shape.width, first.shape.channels}},
                   {"classes", first.classes},
                   {"splits", json::object()}};
  std::size_t total = 0;
  for (const auto& [name, d] : splits) {
    if (!(d->shape == first.shape) || d->classes != first.classes)
      throw std::invalid_argument("save_datasets: splits disagree on shape or classes");
    std::vector<std::uint8_t> flags(d->size());
    for (std::size_t i = 0; i < d->size(); ++i)
      flags[i] = static_cast<std::uint8_t>((d->manipulated[i] ? 1 : 0) | (d->forget[i] ? 2 : 0) |
                                           (d->triggered[i] ? 4 : 0));
    json e = split_entry(*d, name);
    write_blob<double>((dir / e["images"].get<std::string>()).string(), d->pixels);
    write_blob<int>((dir / e["clean_labels"].get<std::string>()).string(), d->clean_labels);
    write_blob<int>((dir / e["assigned_labels"].get<std::string>()).string(), d->assigned_labels);
    write_blob<std::uint8_t>((dir / e["flags"].get<std::string>()).string(), flags);
    manifest["splits"][name] = e;
    total += d->size();
  }
  manifest["total"] = total;
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

inline json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing manifest: " + (dir / "manifest.json").string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed manifest: ") + e.what());
  }
  if (!m.is_object() || m.value("format", "") != kDatasetFormat)
    throw std::runtime_error("malformed manifest: not a potionlab dataset");
  return m;
}

inline Dataset load_split(const std::filesystem::path& dir, const std::string& name) {
  json m = read_manifest(dir);
  try {
    const json& e = m.at("splits").at(name);
    const auto& sh = m.at("shape");
    Dataset d;
    d.shape = {sh.at(0).get<std::size_t>(), sh.at(1).get<std::size_t>(), sh.at(2).get<std::size_t>()};
    d.classes = m.at("classes").get<std::size_t>();
    d.split = split_from_string(e.at("split").get<std::string>());
    const std::size_t n = e.at("count").get<std::size_t>();
    d.pixels = read_blob<double>((dir / e.at("images").get<std::string>()).string(), n * d.shape.size());
    d.clean_labels = read_blob<int>((dir / e.at("clean_labels").get<std::string>()).string(), n);
    d.assigned_labels = read_blob<int>((dir / e.at("assigned_labels").get<std::string>()).string(), n);
    auto flags = read_blob<std::uint8_t>((dir / e.at("flags").get<std::string>()).string(), n);
    d.manipulated.resize(n);
    d.forget.resize(n);
    d.triggered.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      d.manipulated[i] = flags[i] & 1;
      d.forget[i] = (flags[i] >> 1) & 1;
      d.triggered[i] = (flags[i] >> 2) & 1;
    }
    d.validate();
    if (d.id() != e.at("checksum").get<std::string>())
      throw std::runtime_error("checksum mismatch for split '" + name + "'");
    return d;
  } catch (const json::exception& ex) {
    throw std::runtime_error("malformed manifest: " + std::string(ex.what()));
  } catch (const std::invalid_argument& ex) {
    throw std::runtime_error("malformed dataset: " + std::string(ex.what()));
  }
}

}  // namespace potionlab

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "data.hpp"
#include "json_util.hpp"
#include "util.hpp"

namespace potionlab {

enum class AttackKind { badnet, sine, moving, label_flip };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::badnet: return "badnet";
    case AttackKind::sine: return "sine";
    case AttackKind::moving: return "moving";
    case AttackKind::label_flip: return "label_flip";
  }
  return "?";
}

inline AttackKind attack_from_string(const std::string& s) {
  if (s == "badnet") return AttackKind::badnet;
  if (s == "sine") return AttackKind::sine;
  if (s == "moving") return AttackKind::moving;
  if (s == "label_flip") return AttackKind::label_flip;
  throw std::invalid_argument("unknown attack kind: " + s);
}

struct AttackSpec {
  AttackKind kind = AttackKind::badnet;
  int target = 0;
  double patch_area = 0.003;
  double frequency = 0.025;
  double amplitude = 0.1;
  // label_flip only
  int flip_a = 0, flip_b = 1;
  double flip_fraction = 0.5;
  std::uint64_t seed = 0;
  bool operator==(const AttackSpec&) const = default;

  void validate(std::size_t classes) const {
    if (kind == AttackKind::label_flip) {
      if (flip_a == flip_b) throw std::invalid_argument("label_flip: identical class pair");
      if (flip_a < 0 || flip_b < 0 || static_cast<std::size_t>(std::max(flip_a, flip_b)) >= classes)
        throw std::invalid_argument("label_flip: class outside range");
      if (!(flip_fraction >= 0.0 && flip_fraction <= 1.0))
        throw std::invalid_argument("label_flip: fraction outside [0,1]");
      return;
    }
    if (target < 0 || static_cast<std::size_t>(target) >= classes)
      throw std::invalid_argument("attack: target class outside range");
    if (!(patch_area > 0.0 && patch_area <= 0.25)) throw std::invalid_argument("attack: patch area outside (0,0.25]");
    if (!(amplitude > 0.0 && amplitude <= 1.0)) throw std::invalid_argument("attack: amplitude outside (0,1]");
    if (!(frequency > 0.0)) throw std::invalid_argument("attack: frequency must be positive");
  }
};

inline std::size_t patch_side(Shape3 shape, double area) {
  const double side = std::round(std::sqrt(area * static_cast<double>(shape.height * shape.width)));
  return std::max<std::size_t>(1, static_cast<std::size_t>(side));
}

// corner: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right
inline std::vector<double> apply_patch(std::span<const double> image, Shape3 shape, double area, int corner) {
  if (image.size() != shape.size()) throw std::invalid_argument("patch: image size does not match shape");
  if (corner < 0 || corner > 3) throw std::invalid_argument("patch: corner index outside 0..3");
  const std::size_t side = patch_side(shape, area);
  if (side > shape.height || side > shape.width) throw std::invalid_argument("patch larger than image");
  std::vector<double> out(image.begin(), image.end());
  const std::size_t r0 = corner >= 2 ? shape.height - side : 0;
  const std::size_t c0 = corner % 2 == 1 ? shape.width - side : 0;
  for (std::size_t r = r0; r < r0 + side; ++r)
    for (std::size_t c = c0; c < c0 + side; ++c)
      for (std::size_t ch = 0; ch < shape.channels; ++ch) out[(r * shape.width + c) * shape.channels + ch] = 1.0;
  return out;
}

inline std::vector<double> apply_badnet(std::span<const double> image, Shape3 shape, const AttackSpec& spec) {
  return apply_patch(image, shape, spec.patch_area, 3);
}

inline std::vector<double> apply_moving(std::span<const double> image, Shape3 shape, const AttackSpec& spec,
                                        int corner) {
  return apply_patch(image, shape, spec.patch_area, corner);
}

inline std::vector<double> apply_sine(std::span<const double> image, Shape3 shape, const AttackSpec& spec) {
  if (image.size() != shape.size()) throw std::invalid_argument("sine: image size does not match shape");
  std::vector<double> out(image.begin(), image.end());
  for (std::size_t c = 0; c < shape.width; ++c) {
    const double delta = spec.amplitude * std::sin(2.0 * std::numbers::pi * spec.frequency * static_cast<double>(c));
    for (std::size_t r = 0; r < shape.height; ++r)
      for (std::size_t ch = 0; ch < shape.channels; ++ch) {
        double& px = out[(r * shape.width + c) * shape.channels + ch];
        px = std::clamp(px + delta, 0.0, 1.0);
      }
  }
  return out;
}

inline int draw_corner(Rng& rng) { return std::uniform_int_distribution<int>(0, 3)(rng); }

// Swaps assigned labels a <-> b on round(fraction * min(n_a, n_b)) samples of each
// class. Selection uses clean labels only, so applying it twice is the identity.
inline std::vector<int> apply_label_flip(std::span<const int> clean, std::span<const int> assigned,
                                         const AttackSpec& spec) {
  if (spec.flip_a == spec.flip_b) throw std::invalid_argument("label_flip: identical class pair");
  if (clean.size() != assigned.size()) throw std::invalid_argument("label_flip: label vectors differ in length");
  std::vector<std::size_t> in_a, in_b;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (clean[i] == spec.flip_a) in_a.push_back(i);
    if (clean[i] == spec.flip_b) in_b.push_back(i);
  }
  const auto m = static_cast<std::size_t>(std::round(spec.flip_fraction * static_cast<double>(std::min(in_a.size(), in_b.size()))));
  Rng rng = make_rng(spec.seed, 0x1f);
  std::vector<int> out(assigned.begin(), assigned.end());
  for (const auto* group : {&in_a, &in_b}) {
    for (std::size_t k : sample_indices(rng, group->size(), m)) {
      int& y = out[(*group)[k]];
      if (y == spec.flip_a)
        y = spec.flip_b;
      else if (y == spec.flip_b)
        y = spec.flip_a;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario construction.

// Either an absolute count (One-Shot Healing uses 1) or a fraction of |S_m|.
struct Discovery {
  std::variant<std::size_t, double> value = 1.0;

  static Discovery count(std::size_t n) { return {n}; }
  static Discovery fraction(double f) { return {f}; }
  bool is_count() const { return std::holds_alternative<std::size_t>(value); }

  std::size_t resolve(std::size_t m) const {
    std::size_t k;
    if (is_count()) {
      k = std::get<std::size_t>(value);
    } else {
      const double f = std::get<double>(value);
      if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("discovery fraction outside (0,1]");
      k = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(f * static_cast<double>(m))));
    }
    if (k < 1 || k > m) throw std::invalid_argument("discovery resolves outside [1, |S_m|]");
    return k;
  }

  std::string label() const {
    if (is_count()) return "n=" + std::to_string(std::get<std::size_t>(value));
    return format_number(std::get<double>(value));
  }
  bool operator==(const Discovery&) const = default;
};

struct ScenarioSeeds {
  std::uint64_t poison = 0;
  std::uint64_t discovery = 0;
  bool operator==(const ScenarioSeeds&) const = default;
};

struct Scenario {
  Dataset train;
  Dataset test_clean;
  Dataset test_poisoned;
  std::vector<std::size_t> manipulated;  // S_m, ascending
  std::vector<std::size_t> forget;       // S_f, ascending
  std::vector<int> train_corners;        // moving attack draws, aligned with `manipulated`
  json metadata;
};

inline void apply_trigger(Dataset& d, std::size_t i, const AttackSpec& spec, std::optional<int> corner) {
  std::vector<double> img;
  switch (spec.kind) {
    case AttackKind::badnet: img = apply_badnet(d.image(i), d.shape, spec); break;
    case AttackKind::sine: img = apply_sine(d.image(i), d.shape, spec); break;
    case AttackKind::moving: img = apply_moving(d.image(i), d.shape, spec, corner.value()); break;
    case AttackKind::label_flip: return;
  }
  std::copy(img.begin(), img.end(), d.image(i).begin());
  d.triggered[i] = 1;
}

// S_m is drawn from train samples whose clean label differs from the target unless
// `exclude_target` is false. Triggered samples get the target as assigned label.
inline Scenario build_scenario(const Dataset& clean_train, const Dataset& clean_test, const AttackSpec& spec,
                               std::size_t m, const Discovery& discovery, const ScenarioSeeds& seeds,
                               bool exclude_target = true) {
  spec.validate(clean_train.classes);
  if (m == 0) throw std::invalid_argument("scenario: |S_m| must be >= 1");
  Scenario sc{clean_train, clean_test, clean_test, {}, {}, {}, json::object()};
  sc.train.split = Split::train;
  sc.test_clean.split = Split::test_clean;
  sc.test_poisoned.split = Split::test_poisoned;

  Rng poison_rng = make_rng(seeds.poison, 0x11);
  Rng corner_rng = make_rng(seeds.poison, 0x12);
  Rng discovery_rng = make_rng(seeds.discovery, 0x13);

  if (spec.kind == AttackKind::label_flip) {
    sc.train.assigned_labels = apply_label_flip(sc.train.clean_labels, sc.train.assigned_labels, spec);
    for (std::size_t i = 0; i < sc.train.size(); ++i)
      if (sc.train.assigned_labels[i] != sc.train.clean_labels[i]) sc.manipulated.push_back(i);
    if (sc.manipulated.empty()) throw std::invalid_argument("scenario: label flip selected no samples");
  } else {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < clean_train.size(); ++i)
      if (!exclude_target || clean_train.clean_labels[i] != spec.target) eligible.push_back(i);
    if (m > eligible.size())
      throw std::invalid_argument("scenario: |S_m| = " + std::to_string(m) + " exceeds " +
                                  std::to_string(eligible.size()) + " eligible samples");
    for (std::size_t k : sample_indices(poison_rng, eligible.size(), m)) sc.manipulated.push_back(eligible[k]);
    for (std::size_t i : sc.manipulated) {
      std::optional<int> corner;
      if (spec.kind == AttackKind::moving) {
        corner = draw_corner(corner_rng);
        sc.train_corners.push_back(*corner);
      }
      apply_trigger(sc.train, i, spec, corner);
      sc.train.assigned_labels[i] = spec.target;
    }
    Rng test_corner_rng = make_rng(seeds.poison, 0x14);
    for (std::size_t i = 0; i < sc.test_poisoned.size(); ++i) {
      std::optional<int> corner;
      if (spec.kind == AttackKind::moving) corner = draw_corner(test_corner_rng);
      apply_trigger(sc.test_poisoned, i, spec, corner);
    }
  }
  for (std::size_t i : sc.manipulated) sc.train.manipulated[i] = 1;

  const std::size_t k = discovery.resolve(sc.manipulated.size());
  for (std::size_t j : sample_indices(discovery_rng, sc.manipulated.size(), k)) sc.forget.push_back(sc.manipulated[j]);
  for (std::size_t i : sc.forget) sc.train.forget[i] = 1;

  sc.metadata = {{"attack", to_string(spec.kind)},
                 {"target", spec.target},
                 {"patch_area", spec.patch_area},
                 {"frequency", spec.frequency},
                 {"amplitude", spec.amplitude},
                 {"poison_count", sc.manipulated.size()},
                 {"discovery", discovery.label()},
                 {"poison_seed", seeds.poison},
                 {"discovery_seed", seeds.discovery},
                 {"exclude_target_class", exclude_target},
                 {"manipulated", sc.manipulated},
                 {"forget", sc.forget}};
  if (spec.kind == AttackKind::moving) sc.metadata["train_corners"] = sc.train_corners;
  if (spec.kind == AttackKind::label_flip) {
    sc.metadata["flip_pair"] = {spec.flip_a, spec.flip_b};
    sc.metadata["flip_fraction"] = spec.flip_fraction;
  }
  return sc;
}

}  // namespace potionlab

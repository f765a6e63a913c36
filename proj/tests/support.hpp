#pragma once

// Test-side reference implementations. Nothing here calls into the engine's
// oracle or explanation code: the builtin families are re-derived from their
// closed forms and every search is a plain loop over explicit pixel vectors.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "causex/classifier.hpp"
#include "causex/imagery.hpp"

namespace causex::testing {

inline std::filesystem::path fixture_dir() { return CAUSEX_TEST_FIXTURES; }
inline std::filesystem::path data_dir() { return CAUSEX_TEST_DATA; }

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("causex_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Reference builtin model over single-channel grids with identity
// preprocessing.

enum class RefFamily { all_of, any_of, count_conf, threshold };

struct RefRule {
  RefFamily family = RefFamily::all_of;
  std::vector<std::size_t> pixels;
  std::size_t t = 0;

  std::string name() const {
    std::string list;
    for (std::size_t i = 0; i < pixels.size(); ++i) list += (i ? "," : "") + std::to_string(pixels[i]);
    switch (family) {
      case RefFamily::all_of:
        return "and:" + list;
      case RefFamily::any_of:
        return "or:" + list;
      case RefFamily::count_conf:
        return "count-conf";
      case RefFamily::threshold:
        return "threshold:" + list + ":" + std::to_string(t);
    }
    return {};
  }
  std::size_t classes() const {
    return family == RefFamily::count_conf || family == RefFamily::threshold ? 3 : 2;
  }
};

struct RefOutput {
  std::size_t label = 0;
  std::vector<double> conf;
};

// `values` holds one raw value per pixel; a pixel is on above 0.5.
inline RefOutput ref_classify(const RefRule& rule, const std::vector<float>& values) {
  auto on = [&](std::size_t p) { return values[p] > 0.5f; };
  std::size_t hits = 0;
  for (std::size_t p : rule.pixels) hits += on(p);
  RefOutput out;
  out.conf.assign(rule.classes(), 0.0);
  auto three = [&](std::size_t winner_label, double winner) {
    for (std::size_t i = 0; i < 3; ++i) out.conf[i] = (1.0 - winner) / 2.0;
    out.conf[winner_label] = winner;
    out.label = winner_label;
  };
  switch (rule.family) {
    case RefFamily::all_of:
      out.label = hits == rule.pixels.size();
      out.conf[out.label] = 1.0;
      break;
    case RefFamily::any_of:
      out.label = hits > 0;
      out.conf[out.label] = 1.0;
      break;
    case RefFamily::count_conf: {
      std::size_t others = 0;
      for (std::size_t p = 1; p < values.size(); ++p) others += on(p);
      three(on(0) ? 1 : 0, 0.5 + static_cast<double>(others) / (2.0 * values.size()));
      break;
    }
    case RefFamily::threshold: {
      const double margin =
          std::abs(static_cast<double>(hits) - static_cast<double>(rule.t)) + 1.0;
      three(hits >= rule.t ? 1 : 0, 0.5 + margin / (2.0 * (rule.pixels.size() + 2.0)));
      break;
    }
  }
  return out;
}

struct RefInstance {
  std::size_t height = 0;
  std::size_t width = 0;
  RefRule rule;
  std::vector<float> values;
  float baseline = 0.0f;

  std::size_t n() const { return height * width; }
  Shape shape() const { return Shape{height, width, 1}; }
  ImageTensor image() const { return ImageTensor(shape(), values); }
  std::string describe() const {
    std::ostringstream out;
    out << rule.name() << " on " << height << "x" << width << " [";
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? " " : "") << values[i];
    out << "]";
    return out.str();
  }

  // Values with `keep` bits at image value and the rest at the baseline.
  std::vector<float> keep(std::uint32_t bits) const {
    std::vector<float> v(values.size(), baseline);
    for (std::size_t p = 0; p < v.size(); ++p) {
      if ((bits >> p) & 1u) v[p] = values[p];
    }
    return v;
  }
  std::uint32_t full() const { return (1u << n()) - 1; }
  RefOutput original() const { return ref_classify(rule, values); }
  RefOutput with_kept(std::uint32_t bits) const { return ref_classify(rule, keep(bits)); }
  bool baseline_valid() const { return with_kept(0).label != original().label; }
};

inline std::uint32_t bits_of(const PixelMask& mask) {
  return static_cast<std::uint32_t>(mask.to_bits());
}

// Sufficiency and contrast evaluated directly on the reference model.
inline bool ref_sufficient(const RefInstance& inst, std::uint32_t kept, double delta) {
  const RefOutput orig = inst.original();
  const RefOutput out = inst.with_kept(kept);
  return out.label == orig.label && out.conf[orig.label] >= delta * orig.conf[orig.label];
}
inline bool ref_contrastive(const RefInstance& inst, std::uint32_t occluded) {
  return inst.with_kept(inst.full() & ~occluded).label != inst.original().label;
}

// Subset-minimal sets for a monotone-agnostic predicate: a set qualifies when
// it satisfies the predicate and no proper subset does.
template <typename Pred>
std::vector<std::uint32_t> ref_minimal_sets(std::size_t n, Pred pred) {
  std::vector<std::uint32_t> out;
  const std::uint32_t count = 1u << n;
  std::vector<std::uint8_t> holds(count);
  for (std::uint32_t m = 0; m < count; ++m) holds[m] = pred(m);
  for (std::uint32_t m = 0; m < count; ++m) {
    if (!holds[m]) continue;
    bool minimal = true;
    // Every proper subset, via the standard submask walk.
    for (std::uint32_t s = (m - 1) & m; m != 0; s = (s - 1) & m) {
      if (holds[s]) {
        minimal = false;
        break;
      }
      if (s == 0) break;
    }
    if (minimal) out.push_back(m);
  }
  return out;
}

// 1/(1+k) for the smallest witness W not containing p such that occluding W
// keeps the label and occluding W plus p flips it.
inline double ref_responsibility(const RefInstance& inst, std::size_t p) {
  const std::size_t label = inst.original().label;
  const std::uint32_t bit = 1u << p;
  int best = -1;
  for (std::uint32_t w = 0; w <= inst.full(); ++w) {
    if (w & bit) continue;
    const std::uint32_t kept = inst.full() & ~w;
    if (inst.with_kept(kept).label == label && inst.with_kept(kept & ~bit).label != label) {
      const int k = std::popcount(w);
      if (best < 0 || k < best) best = k;
    }
  }
  return best < 0 ? 0.0 : 1.0 / (1.0 + best);
}

// ---------------------------------------------------------------------------
// Random instances.

inline RefRule random_rule(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::size_t> all(n);
  for (std::size_t p = 0; p < n; ++p) all[p] = p;
  std::shuffle(all.begin(), all.end(), rng);
  const std::size_t size = 1 + rng() % std::min<std::size_t>(n, 4);
  std::vector<std::size_t> pick(all.begin(), all.begin() + size);
  std::sort(pick.begin(), pick.end());
  RefRule rule;
  switch (rng() % 4) {
    case 0:
      rule = {RefFamily::all_of, pick, 0};
      break;
    case 1:
      rule = {RefFamily::any_of, pick, 0};
      break;
    case 2:
      rule = {RefFamily::count_conf, {0}, 0};
      break;
    default:
      rule = {RefFamily::threshold, pick, 1 + rng() % pick.size()};
      break;
  }
  return rule;
}

// Grid of at most 4x4 (and at least two pixels), random rule, random values.
// Values are either binary or uniform in [0, 1]. With `valid_only` the
// instance is redrawn until the baseline classifies differently.
inline RefInstance random_instance(std::mt19937_64& rng, bool valid_only = true) {
  for (;;) {
    RefInstance inst;
    do {
      inst.height = 1 + rng() % 4;
      inst.width = 1 + rng() % 4;
    } while (inst.n() < 2);
    inst.rule = random_rule(rng, inst.n());
    const bool binary = rng() % 2 == 0;
    std::uniform_real_distribution<float> uniform(0.0f, 1.0f);
    inst.values.resize(inst.n());
    for (float& v : inst.values) v = binary ? static_cast<float>(rng() % 4 != 0) : uniform(rng);
    if (!valid_only || inst.baseline_valid()) return inst;
  }
}

}  // namespace causex::testing

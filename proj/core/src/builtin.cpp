#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "causex/classifier.hpp"
#include "causex/error.hpp"

namespace causex {

namespace {

enum class Family { all_of, any_of, count_conf, threshold };

struct Rule {
  Family family = Family::all_of;
  std::vector<PixelIndex> pixels;
  std::size_t threshold = 0;
  std::uint32_t class_count = 2;
};

std::size_t parse_index(std::string_view text, const std::string& name) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw InputError("builtin '" + name + "': bad number '" + std::string(text) + "'");
  }
  return value;
}

std::vector<PixelIndex> parse_list(std::string_view text, const std::string& name) {
  std::vector<PixelIndex> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    out.push_back(parse_index(text.substr(0, comma), name));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  if (out.empty()) throw InputError("builtin '" + name + "': empty pixel list");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Rule parse_rule(const std::string& name, const Shape& shape) {
  const std::size_t n = shape.pixels();
  Rule rule;
  std::vector<PixelIndex> all(n);
  for (std::size_t p = 0; p < n; ++p) all[p] = p;

  if (name == "and2") {
    rule = {Family::all_of, {0, 1}};
  } else if (name == "or2") {
    rule = {Family::any_of, {0, 1}};
  } else if (name == "p0-only") {
    rule = {Family::all_of, {0}};
  } else if (name == "any-on") {
    rule = {Family::any_of, all};
  } else if (name == "count-conf") {
    rule = {Family::count_conf, {0}, 0, 3};
  } else if (name.starts_with("and:")) {
    rule = {Family::all_of, parse_list(std::string_view(name).substr(4), name)};
  } else if (name.starts_with("or:")) {
    rule = {Family::any_of, parse_list(std::string_view(name).substr(3), name)};
  } else if (name.starts_with("threshold:")) {
    std::string_view rest = std::string_view(name).substr(10);
    const auto colon = rest.rfind(':');
    if (colon == std::string_view::npos) {
      throw InputError("builtin '" + name + "': expected threshold:<pixels>:<t>");
    }
    rule = {Family::threshold, parse_list(rest.substr(0, colon), name),
            parse_index(rest.substr(colon + 1), name), 3};
    if (rule.threshold == 0 || rule.threshold > rule.pixels.size()) {
      throw InputError("builtin '" + name + "': threshold must be in [1, #pixels]");
    }
  } else {
    throw InputError("unknown builtin classifier '" + name +
                     "' (known: and2, or2, p0-only, any-on, count-conf, and:<list>, "
                     "or:<list>, threshold:<list>:<t>)");
  }
  if (n < 2) throw InputError("builtin classifiers need at least 2 pixels");
  for (PixelIndex p : rule.pixels) {
    if (p >= n) {
      throw InputError("builtin '" + name + "' references pixel " + std::to_string(p) +
                       " on a grid of " + std::to_string(n));
    }
  }
  return rule;
}

class BuiltinClassifier final : public Classifier {
 public:
  BuiltinClassifier(const ClassifierSpec& spec, Rule rule)
      : Classifier(spec), rule_(std::move(rule)) {}

 protected:
  std::vector<RawScores> evaluate(std::span<const ImageTensor> normalized) const override {
    std::vector<RawScores> out;
    out.reserve(normalized.size());
    for (const auto& image : normalized) out.push_back(score(image));
    return out;
  }

 private:
  static bool on(const ImageTensor& image, PixelIndex p) {
    double sum = 0.0;
    for (float v : image.pixel(p)) sum += v;
    return sum / static_cast<double>(image.channels()) > 0.5;
  }

  RawScores score(const ImageTensor& image) const {
    std::size_t listed_on = 0;
    for (PixelIndex p : rule_.pixels) listed_on += on(image, p) ? 1 : 0;

    RawScores raw;
    raw.scores.assign(rule_.class_count, 0.0);
    switch (rule_.family) {
      case Family::all_of:
        raw.scores[listed_on == rule_.pixels.size() ? 1 : 0] = 1.0;
        break;
      case Family::any_of:
        raw.scores[listed_on > 0 ? 1 : 0] = 1.0;
        break;
      case Family::count_conf: {
        const std::size_t n = image.pixel_count();
        std::size_t others_on = 0;
        for (PixelIndex p = 1; p < n; ++p) others_on += on(image, p) ? 1 : 0;
        const double winner =
            0.5 + static_cast<double>(others_on) / (2.0 * static_cast<double>(n));
        fill_three(raw.scores, listed_on == 1 ? 1 : 0, winner);
        break;
      }
      case Family::threshold: {
        const auto t = static_cast<double>(rule_.threshold);
        const auto on_count = static_cast<double>(listed_on);
        const double margin = std::abs(on_count - t) + 1.0;
        const double winner =
            0.5 + margin / (2.0 * (static_cast<double>(rule_.pixels.size()) + 2.0));
        fill_three(raw.scores, listed_on >= rule_.threshold ? 1 : 0, winner);
        break;
      }
    }
    return raw;
  }

  static void fill_three(std::vector<double>& scores, std::size_t winner_index, double winner) {
    const double rest = (1.0 - winner) / 2.0;
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = i == winner_index ? winner : rest;
  }

  Rule rule_;
};

}  // namespace

std::unique_ptr<Classifier> make_builtin_classifier(const ClassifierSpec& spec) {
  Rule rule = parse_rule(spec.model_ref, spec.input_shape);
  if (spec.class_count != rule.class_count) {
    throw InputError("builtin '" + spec.model_ref + "' has " + std::to_string(rule.class_count) +
                     " classes, spec says " + std::to_string(spec.class_count));
  }
  return std::make_unique<BuiltinClassifier>(spec, std::move(rule));
}

BuiltinInfo describe_builtin(const std::string& name, const Shape& shape) {
  return BuiltinInfo{name, parse_rule(name, shape).class_count};
}

ClassifierSpec builtin_spec(const std::string& name, const Shape& shape) {
  ClassifierSpec spec;
  spec.backend = BackendKind::builtin;
  spec.model_ref = name;
  spec.input_shape = shape;
  spec.class_count = describe_builtin(name, shape).class_count;
  spec.score_kind = ScoreKind::probabilities;
  return spec;
}

}  // namespace causex

#include "causex/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "causex/error.hpp"
#include "subprocess_backend.hpp"

#ifndef CAUSEX_DEFAULT_ONNX_RUNNER
#define CAUSEX_DEFAULT_ONNX_RUNNER "onnx_runner.py"
#endif
#ifndef CAUSEX_INSTALLED_ONNX_RUNNER
#define CAUSEX_INSTALLED_ONNX_RUNNER CAUSEX_DEFAULT_ONNX_RUNNER
#endif

namespace causex {

namespace {

std::vector<float> broadcast(const std::vector<float>& values, std::size_t channels,
                             float fallback, const char* what) {
  if (values.empty()) return std::vector<float>(channels, fallback);
  if (values.size() == 1) return std::vector<float>(channels, values.front());
  if (values.size() != channels) {
    throw InputError(std::string(what) + " has " + std::to_string(values.size()) +
                     " entries for " + std::to_string(channels) + " channels");
  }
  return values;
}

}  // namespace

// Defined in builtin.cpp.
std::unique_ptr<Classifier> make_builtin_classifier(const ClassifierSpec& spec);

void ClassifierSpec::validate() const {
  if (input_shape.height == 0 || input_shape.width == 0 || input_shape.channels == 0) {
    throw InputError("classifier input shape dims must be >= 1");
  }
  for (float s : preprocessing.std) {
    if (s == 0.0f || !std::isfinite(s)) throw InputError("preprocessing std must be non-zero");
  }
  for (float m : preprocessing.mean) {
    if (!std::isfinite(m)) throw InputError("preprocessing mean must be finite");
  }
  if (class_count < 2) {
    throw InputError("class_count must be >= 2 (a classifier cannot be constant)");
  }
  if (!(preprocessing.value_range.lo < preprocessing.value_range.hi)) {
    throw InputError("value range must satisfy lo < hi");
  }
}

ClassLabel argmax_lowest(std::span<const double> scores) {
  ClassLabel best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = static_cast<ClassLabel>(i);
  }
  return best;
}

Classifier::Classifier(ClassifierSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t channels = spec_.input_shape.channels;
  mean_ = broadcast(spec_.preprocessing.mean, channels, 0.0f, "mean");
  std_ = broadcast(spec_.preprocessing.std, channels, 1.0f, "std");
  identity_ = true;
  for (std::size_t c = 0; c < channels; ++c) {
    if (mean_[c] != 0.0f || std_[c] != 1.0f) identity_ = false;
  }
}

ImageTensor Classifier::normalize(const ImageTensor& image) const {
  if (identity_) return image;
  const std::size_t channels = image.channels();
  std::vector<float> data(image.data().begin(), image.data().end());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t c = i % channels;
    // Division (not multiplication by the reciprocal) keeps (x + m) - m
    // shifted inputs bit-identical for unit std.
    data[i] = (data[i] - mean_[c]) / std_[c];
  }
  return ImageTensor(image.shape(), std::move(data),
                     ValueRange{-std::numeric_limits<float>::infinity(),
                                std::numeric_limits<float>::infinity()});
}

ClassifierOutput Classifier::finish(RawScores raw) const {
  if (raw.scores.size() != spec_.class_count) {
    throw ProtocolError("backend returned " + std::to_string(raw.scores.size()) +
                        " scores, expected " + std::to_string(spec_.class_count));
  }
  for (double s : raw.scores) {
    if (!std::isfinite(s)) throw ProtocolError("backend returned a non-finite confidence");
  }
  ClassifierOutput out;
  out.confidences = std::move(raw.scores);
  double sum = 0.0;
  bool in_unit = true;
  for (double s : out.confidences) {
    sum += s;
    in_unit = in_unit && s >= 0.0 && s <= 1.0;
  }
  const bool looks_normalized = in_unit && std::abs(sum - 1.0) <= kProbabilitySumTolerance;
  const bool apply_softmax =
      spec_.score_kind == ScoreKind::logits ||
      (spec_.score_kind == ScoreKind::auto_detect && !looks_normalized);
  if (apply_softmax) {
    const double top = *std::max_element(out.confidences.begin(), out.confidences.end());
    double z = 0.0;
    for (double& s : out.confidences) {
      s = std::exp(s - top);
      z += s;
    }
    for (double& s : out.confidences) s /= z;
    softmax_applied_.store(true);
  } else if (!looks_normalized) {
    throw ProtocolError("backend declared probabilities that do not sum to 1");
  }
  out.label = argmax_lowest(out.confidences);
  if (raw.reported_label >= 0 && static_cast<ClassLabel>(raw.reported_label) != out.label) {
    // A reported label may only differ from the argmax through a tie.
    if (out.confidences[static_cast<std::size_t>(raw.reported_label)] != out.confidence()) {
      throw ProtocolError("backend label " + std::to_string(raw.reported_label) +
                          " disagrees with its confidences (argmax " +
                          std::to_string(out.label) + ")");
    }
  }
  return out;
}

std::vector<ClassifierOutput> Classifier::classify_batch(
    std::span<const ImageTensor> images) const {
  if (images.empty()) throw InputError("classify_batch needs a nonempty batch");
  std::vector<ImageTensor> normalized;
  normalized.reserve(images.size());
  for (const auto& image : images) {
    if (image.shape() != spec_.input_shape) {
      throw InputError("image shape " + std::to_string(image.height()) + "x" +
                       std::to_string(image.width()) + "x" + std::to_string(image.channels()) +
                       " does not match classifier input " +
                       std::to_string(spec_.input_shape.height) + "x" +
                       std::to_string(spec_.input_shape.width) + "x" +
                       std::to_string(spec_.input_shape.channels));
    }
    normalized.push_back(normalize(image));
  }
  auto raw = evaluate(normalized);
  if (raw.size() != images.size()) {
    throw ProtocolError("backend returned " + std::to_string(raw.size()) + " results for " +
                        std::to_string(images.size()) + " images");
  }
  evaluations_.fetch_add(images.size());
  std::vector<ClassifierOutput> out;
  out.reserve(raw.size());
  for (auto& r : raw) out.push_back(finish(std::move(r)));
  return out;
}

ClassifierOutput Classifier::classify(const ImageTensor& image) const {
  return classify_batch(std::span(&image, 1)).front();
}

std::unique_ptr<Classifier> make_classifier(const ClassifierSpec& spec) {
  spec.validate();
  switch (spec.backend) {
    case BackendKind::builtin:
      return make_builtin_classifier(spec);
    case BackendKind::subprocess:
      return std::make_unique<detail::SubprocessClassifier>(spec, spec.model_ref);
    case BackendKind::onnx_file: {
      if (!std::filesystem::exists(spec.model_ref)) {
        throw BackendError("ONNX model not found: " + spec.model_ref);
      }
      const std::string command = "python3 " + detail::shell_quote(onnx_runner_path().string()) +
                                  " --model " + detail::shell_quote(spec.model_ref);
      return std::make_unique<detail::SubprocessClassifier>(spec, command);
    }
  }
  throw InputError("unknown backend kind");
}

bool validate_baseline(const Classifier& classifier, const ImageTensor& image,
                       const BaselineSpec& baseline) {
  baseline.validate_for(image.shape(), image.range());
  const std::vector<ImageTensor> batch{image,
                                       baseline_image(image.shape(), image.range(), baseline)};
  const auto out = classifier.classify_batch(batch);
  return out[0].label != out[1].label;
}

ClassifierSpec load_model_manifest(const std::filesystem::path& manifest_path,
                                   const std::filesystem::path& model_path) {
  std::ifstream in(manifest_path);
  if (!in) throw InputError("cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("manifest " + manifest_path.string() + ": " + e.what());
  }
  try {
    ClassifierSpec spec;
    spec.backend = BackendKind::onnx_file;
    spec.model_ref = model_path.string();
    const auto shape = j.at("input_shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) throw InputError("manifest input_shape must be [H, W, C]");
    spec.input_shape = Shape{shape[0], shape[1], shape[2]};
    spec.preprocessing.mean = j.value("mean", std::vector<float>{});
    spec.preprocessing.std = j.value("std", std::vector<float>{});
    if (j.contains("value_range")) {
      const auto range = j.at("value_range").get<std::vector<float>>();
      if (range.size() != 2) throw InputError("manifest value_range must be [lo, hi]");
      spec.preprocessing.value_range = ValueRange{range[0], range[1]};
    }
    spec.class_count = j.at("class_count").get<std::uint32_t>();
    const std::string kind = j.value("logits_or_probs", std::string("auto"));
    if (kind == "logits") {
      spec.score_kind = ScoreKind::logits;
    } else if (kind == "probs" || kind == "probabilities") {
      spec.score_kind = ScoreKind::probabilities;
    } else if (kind == "auto") {
      spec.score_kind = ScoreKind::auto_detect;
    } else {
      throw InputError("manifest logits_or_probs must be logits|probs|auto, got " + kind);
    }
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("manifest " + manifest_path.string() + ": " + e.what());
  }
}

std::filesystem::path onnx_runner_path() {
  if (const char* env = std::getenv("CAUSEX_ONNX_RUNNER"); env && *env) return env;
  // Source tree first, then the installed copy.
  std::error_code ec;
  if (std::filesystem::exists(CAUSEX_DEFAULT_ONNX_RUNNER, ec)) return CAUSEX_DEFAULT_ONNX_RUNNER;
  return CAUSEX_INSTALLED_ONNX_RUNNER;
}

}  // namespace causex

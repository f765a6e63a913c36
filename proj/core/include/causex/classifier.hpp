#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "causex/imagery.hpp"

namespace causex {

using ClassLabel = std::uint32_t;

enum class BackendKind { onnx_file, subprocess, builtin };

// What the backend emits. `auto_detect` applies softmax when the scores do not
// already sum to one.
enum class ScoreKind { auto_detect, logits, probabilities };

struct Preprocessing {
  // Per-channel; a single entry is broadcast over all channels. Empty means
  // identity.
  std::vector<float> mean;
  std::vector<float> std;
  // Raw pixel range the model expects before normalization.
  ValueRange value_range;
};

struct ClassifierSpec {
  BackendKind backend = BackendKind::builtin;
  // Builtin name, subprocess command line, or ONNX model path.
  std::string model_ref;
  Shape input_shape;
  Preprocessing preprocessing;
  std::uint32_t class_count = 2;
  ScoreKind score_kind = ScoreKind::auto_detect;

  // Throws InputError on zero dims, zero std or fewer than two classes.
  void validate() const;
};

struct ClassifierOutput {
  ClassLabel label = 0;
  std::vector<double> confidences;

  double confidence() const { return confidences[label]; }
  double confidence_of(ClassLabel l) const { return confidences[l]; }
};

// Tolerance on sum(confidences) == 1.
inline constexpr double kProbabilitySumTolerance = 1e-5;

// Index of the largest score; ties go to the lowest index.
ClassLabel argmax_lowest(std::span<const double> scores);

// Black-box model. Shapes are checked and preprocessing applied here, so
// callers always work in raw pixel space. classify_batch may be called from
// several threads at once.
class Classifier {
 public:
  explicit Classifier(ClassifierSpec spec);
  virtual ~Classifier() = default;

  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;

  const ClassifierSpec& spec() const { return spec_; }

  std::vector<ClassifierOutput> classify_batch(std::span<const ImageTensor> images) const;
  ClassifierOutput classify(const ImageTensor& image) const;

  // True once any batch needed softmax applied to raw scores.
  bool softmax_applied() const { return softmax_applied_.load(); }
  // Images evaluated since construction.
  std::uint64_t evaluations() const { return evaluations_.load(); }

 protected:
  struct RawScores {
    std::vector<double> scores;
    // Label reported by the backend, if it reports one.
    std::int64_t reported_label = -1;
  };

  // Scores for already-normalized inputs, positionally aligned.
  virtual std::vector<RawScores> evaluate(std::span<const ImageTensor> normalized) const = 0;

 private:
  ImageTensor normalize(const ImageTensor& image) const;
  ClassifierOutput finish(RawScores raw) const;

  ClassifierSpec spec_;
  std::vector<float> mean_;
  std::vector<float> std_;
  bool identity_ = true;
  mutable std::atomic<bool> softmax_applied_{false};
  mutable std::atomic<std::uint64_t> evaluations_{0};
};

std::unique_ptr<Classifier> make_classifier(const ClassifierSpec& spec);

// True iff the all-baseline image is classified differently from `image`.
bool validate_baseline(const Classifier& classifier, const ImageTensor& image,
                       const BaselineSpec& baseline);

// Sidecar manifest written next to an exported ONNX model
// (`<name>.manifest.json`): input_shape, mean, std, class_count,
// logits_or_probs and optionally value_range.
ClassifierSpec load_model_manifest(const std::filesystem::path& manifest_path,
                                   const std::filesystem::path& model_path);

// Path of the Python runner used by the ONNX backend. Overridable with the
// CAUSEX_ONNX_RUNNER environment variable.
std::filesystem::path onnx_runner_path();

// Builtin synthetic classifiers over small binary grids. A pixel is "on" when
// the mean of its normalized channels exceeds 0.5.
//
//   and2         label 1 iff p0 and p1 on                     (2 classes, one-hot)
//   or2          label 1 iff p0 or p1 on                      (2 classes, one-hot)
//   p0-only      label 1 iff p0 on                            (2 classes, one-hot)
//   any-on       label 1 iff any pixel on                     (2 classes, one-hot)
//   and:i,j,..   label 1 iff all listed pixels on             (2 classes, one-hot)
//   or:i,j,..    label 1 iff any listed pixel on              (2 classes, one-hot)
//   count-conf   label 1 iff p0 on; winner confidence
//                0.5 + (#other pixels on) / (2 * H * W)       (3 classes)
//   threshold:i,j,..:t
//                label 1 iff at least t listed pixels on; winner confidence
//                0.5 + (|on - t| + 1) / (2 * (n + 2))         (3 classes)
//
// In the 3-class builtins the two losing classes share the remainder equally.
struct BuiltinInfo {
  std::string name;
  std::uint32_t class_count;
};
BuiltinInfo describe_builtin(const std::string& name, const Shape& shape);

// Spec for a builtin with identity preprocessing over [0, 1].
ClassifierSpec builtin_spec(const std::string& name, const Shape& shape);

}  // namespace causex

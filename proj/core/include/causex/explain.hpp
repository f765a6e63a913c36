#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "causex/classifier.hpp"
#include "causex/error.hpp"
#include "causex/imagery.hpp"
#include "causex/responsibility.hpp"

namespace causex {

struct ExplanationFlags {
  bool sufficient_valid = false;
  bool contrastive_valid = false;
  bool complete_valid = false;
};

// Output of the sufficient/contrastive scan, optionally extended with
// adjustment pixels.
struct ExplanationRecord {
  PixelMask sufficient;
  PixelMask contrastive;
  // Possibly empty; disjoint from `sufficient`.
  PixelMask adjustment;
  double delta = 1.0;
  // original_confidence * delta.
  double tau = 0.0;
  ClassLabel original_label = 0;
  double original_confidence = 0.0;
  // Confidence for original_label with only the explanation inserted.
  double sufficient_confidence = 0.0;
  // Label and its confidence with the explanation occluded.
  ClassLabel contrast_label = 0;
  double contrast_confidence = 0.0;
  // Number of ranked pixels in the explanation.
  std::size_t scan_index = 0;
  // Confidence for original_label with contrastive ∪ adjustment inserted.
  double complete_confidence = 0.0;
  std::uint32_t precision_dp = 4;
  ExplanationFlags flags;

  PixelMask complete() const { return contrastive.united(adjustment); }
};

// Closest the scan came to meeting its three conditions.
struct PartialWitness {
  std::size_t scan_index = 0;
  int conditions_met = 0;
  ClassLabel insertion_label = 0;
  double insertion_confidence = 0.0;
  ClassLabel deletion_label = 0;
};

class ExplanationNotFound : public NotFoundError {
 public:
  ExplanationNotFound(const std::string& what, PartialWitness best)
      : NotFoundError(what), best_(best) {}
  const PartialWitness& best() const { return best_; }

 private:
  PartialWitness best_;
};

struct ExplainOptions {
  // Contexts classified per backend call during the scans.
  std::size_t chunk_size = 64;
  // Decimal places for the adjustment equality test.
  std::uint32_t precision_dp = 4;
};

// Walks the ranking high to low, growing the insertion context K+ (top-k
// pixels over the baseline) and the deletion context K- (top-k pixels
// occluded), and stops at the first k where K+ keeps the label, K- loses it
// and K+ keeps at least delta times the original confidence.
//
// Throws ConfigurationError when the baseline is classified like the image,
// InputError for delta outside [0, 1], ExplanationNotFound when no k works.
ExplanationRecord sufficient_contrastive(const ImageTensor& image, const Classifier& classifier,
                                         const BaselineSpec& baseline, double delta,
                                         const ResponsibilityLandscape& landscape,
                                         const ExplainOptions& options = {});

// Adds pixels low to high (skipping the explanation's own) until the
// explanation plus additions reproduces the original confidence at
// precision_dp decimals. Stores the result in `record` and returns it.
PixelMask adjustment_discovery(const ImageTensor& image, const Classifier& classifier,
                               const BaselineSpec& baseline,
                               const ResponsibilityLandscape& landscape,
                               ExplanationRecord& record, const ExplainOptions& options = {});

// Round half to even at `dp` decimal places, returned as the scaled integer.
double round_to_precision(double value, std::uint32_t dp);

struct SufficiencyCheck {
  bool holds = false;
  // Label of the composed image.
  ClassLabel label = 0;
  // Confidence of the original label on the composed image.
  double confidence = 0.0;
};

// `mask` inserted over the baseline keeps the original label with at least
// delta times the original confidence.
SufficiencyCheck check_sufficient(const ImageTensor& image, const Classifier& classifier,
                                  const BaselineSpec& baseline, const PixelMask& mask,
                                  double delta);

struct ContrastCheck {
  bool holds = false;
  ClassLabel contrast_label = 0;
};

// Occluding `mask` (everything else kept) changes the label.
ContrastCheck check_contrastive(const ImageTensor& image, const Classifier& classifier,
                                const BaselineSpec& baseline, const PixelMask& mask);

struct MinimalityPredicate {
  enum class Kind { sufficient, contrastive };
  Kind kind = Kind::sufficient;
  double delta = 1.0;

  static MinimalityPredicate sufficient(double delta) { return {Kind::sufficient, delta}; }
  static MinimalityPredicate contrastive() { return {Kind::contrastive, 0.0}; }
};

// Greedy 1-minimal subset of `mask` that still satisfies `predicate`. Pixels
// are tried for removal from the tail of the high-to-low ranking, repeating
// until no single removal keeps the predicate. Throws InputError when the
// predicate fails on `mask`.
PixelMask shrink_minimal(const ImageTensor& image, const Classifier& classifier,
                         const BaselineSpec& baseline, const PixelMask& mask,
                         const MinimalityPredicate& predicate,
                         const ResponsibilityLandscape& landscape);

}  // namespace causex

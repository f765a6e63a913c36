#include "causex/explain.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

namespace causex {

namespace {

void require_landscape_matches(const ImageTensor& image,
                               const ResponsibilityLandscape& landscape) {
  if (landscape.height != image.height() || landscape.width != image.width() ||
      landscape.scores.size() != image.pixel_count()) {
    throw InputError("responsibility landscape does not match the image dimensions");
  }
}

void require_mask_matches(const ImageTensor& image, const PixelMask& mask) {
  if (mask.height() != image.height() || mask.width() != image.width()) {
    throw InputError("mask dimensions do not match the image");
  }
}

PixelMask prefix_mask(const ImageTensor& image, const std::vector<PixelIndex>& ranking,
                      std::size_t k) {
  return PixelMask::from_pixels(image.height(), image.width(), std::span(ranking).first(k));
}

}  // namespace

double round_to_precision(double value, std::uint32_t dp) {
  // nearbyint follows the current rounding mode, which defaults to
  // round-to-nearest-even.
  return std::nearbyint(value * std::pow(10.0, static_cast<double>(dp)));
}

ExplanationRecord sufficient_contrastive(const ImageTensor& image, const Classifier& classifier,
                                         const BaselineSpec& baseline, double delta,
                                         const ResponsibilityLandscape& landscape,
                                         const ExplainOptions& options) {
  if (!(delta >= 0.0 && delta <= 1.0)) {
    throw InputError("delta must lie in [0, 1], got " + std::to_string(delta));
  }
  require_landscape_matches(image, landscape);
  if (!validate_baseline(classifier, image, baseline)) {
    throw ConfigurationError("baseline is classified like the image; no contrast is possible");
  }

  const ClassifierOutput original = classifier.classify(image);
  const ClassLabel label = original.label;
  const double tau = original.confidence() * delta;

  auto ranking = std::make_shared<const std::vector<PixelIndex>>(
      rank_pixels(landscape, RankOrder::high_to_low));
  ContextStream insertion(image, baseline, ranking, ContextMode::insertion);
  ContextStream deletion(image, baseline, ranking, ContextMode::deletion);

  const std::size_t chunk = std::max<std::size_t>(1, options.chunk_size);
  PartialWitness best;
  best.conditions_met = -1;
  std::vector<ImageTensor> batch;
  while (insertion.position() < ranking->size()) {
    const std::size_t first_k = insertion.position() + 1;
    batch.clear();
    for (std::size_t i = 0; i < chunk && insertion.advance(); ++i) {
      deletion.advance();
      batch.push_back(insertion.current());
      batch.push_back(deletion.current());
    }
    const auto outputs = classifier.classify_batch(batch);
    for (std::size_t i = 0; i < outputs.size() / 2; ++i) {
      const ClassifierOutput& plus = outputs[2 * i];
      const ClassifierOutput& minus = outputs[2 * i + 1];
      const bool keeps = plus.label == label;
      const bool flips = minus.label != label;
      const double plus_confidence = plus.confidence_of(label);
      const bool confident = plus_confidence >= tau;
      const std::size_t k = first_k + i;
      if (keeps && flips && confident) {
        ExplanationRecord record;
        record.sufficient = prefix_mask(image, *ranking, k);
        record.contrastive = record.sufficient;
        record.adjustment = PixelMask(image.height(), image.width());
        record.delta = delta;
        record.tau = tau;
        record.original_label = label;
        record.original_confidence = original.confidence();
        record.sufficient_confidence = plus_confidence;
        record.contrast_label = minus.label;
        record.contrast_confidence = minus.confidence();
        record.scan_index = k;
        record.precision_dp = options.precision_dp;
        record.flags.sufficient_valid = true;
        record.flags.contrastive_valid = true;
        return record;
      }
      const int met = int{keeps} + int{flips} + int{confident};
      if (met > best.conditions_met) {
        best = PartialWitness{k, met, plus.label, plus_confidence, minus.label};
      }
    }
  }
  throw ExplanationNotFound(
      "no prefix of the ranking is both sufficient (confidence >= " + std::to_string(tau) +
          ") and contrastive; best k = " + std::to_string(best.scan_index) + " met " +
          std::to_string(best.conditions_met) + " of 3 conditions",
      best);
}

PixelMask adjustment_discovery(const ImageTensor& image, const Classifier& classifier,
                               const BaselineSpec& baseline,
                               const ResponsibilityLandscape& landscape,
                               ExplanationRecord& record, const ExplainOptions& options) {
  require_landscape_matches(image, landscape);
  require_mask_matches(image, record.contrastive);
  if (record.contrastive.empty()) {
    throw InputError("adjustment discovery needs a nonempty contrastive explanation");
  }
  const ClassLabel label = record.original_label;
  const std::uint32_t dp = record.precision_dp;
  const double target = round_to_precision(record.original_confidence, dp);

  ImageTensor working = compose(image, record.contrastive, baseline);
  PixelMask adjustment(image.height(), image.width());
  auto finish = [&](double confidence) {
    record.adjustment = adjustment;
    record.complete_confidence = confidence;
    record.flags.complete_valid = true;
    return adjustment;
  };

  const double start = classifier.classify(working).confidence_of(label);
  if (round_to_precision(start, dp) == target) return finish(start);

  std::vector<PixelIndex> order;
  for (PixelIndex p : rank_pixels(landscape, RankOrder::low_to_high)) {
    if (!record.contrastive.test(p)) order.push_back(p);
  }

  const std::size_t chunk = std::max<std::size_t>(1, options.chunk_size);
  std::vector<ImageTensor> batch;
  for (std::size_t begin = 0; begin < order.size(); begin += chunk) {
    const std::size_t end = std::min(order.size(), begin + chunk);
    batch.clear();
    for (std::size_t i = begin; i < end; ++i) {
      std::ranges::copy(image.pixel(order[i]), working.mutable_pixel(order[i]).begin());
      batch.push_back(working);
    }
    const auto outputs = classifier.classify_batch(batch);
    for (std::size_t i = begin; i < end; ++i) {
      adjustment.set(order[i]);
      const double confidence = outputs[i - begin].confidence_of(label);
      if (round_to_precision(confidence, dp) == target) return finish(confidence);
    }
  }
  throw NotFoundError(
      "the full image did not reproduce its own confidence; the backend is not deterministic");
}

SufficiencyCheck check_sufficient(const ImageTensor& image, const Classifier& classifier,
                                  const BaselineSpec& baseline, const PixelMask& mask,
                                  double delta) {
  require_mask_matches(image, mask);
  const std::vector<ImageTensor> batch{image, compose(image, mask, baseline)};
  const auto out = classifier.classify_batch(batch);
  const ClassLabel label = out[0].label;
  SufficiencyCheck check;
  check.label = out[1].label;
  check.confidence = out[1].confidence_of(label);
  check.holds = check.label == label && check.confidence >= delta * out[0].confidence();
  return check;
}

ContrastCheck check_contrastive(const ImageTensor& image, const Classifier& classifier,
                                const BaselineSpec& baseline, const PixelMask& mask) {
  require_mask_matches(image, mask);
  const std::vector<ImageTensor> batch{image, occlude(image, mask, baseline)};
  const auto out = classifier.classify_batch(batch);
  return ContrastCheck{out[1].label != out[0].label, out[1].label};
}

PixelMask shrink_minimal(const ImageTensor& image, const Classifier& classifier,
                         const BaselineSpec& baseline, const PixelMask& mask,
                         const MinimalityPredicate& predicate,
                         const ResponsibilityLandscape& landscape) {
  require_mask_matches(image, mask);
  require_landscape_matches(image, landscape);
  const ClassifierOutput original = classifier.classify(image);

  auto holds = [&](const PixelMask& candidate) {
    if (predicate.kind == MinimalityPredicate::Kind::sufficient) {
      const auto out = classifier.classify(compose(image, candidate, baseline));
      return out.label == original.label &&
             out.confidence_of(original.label) >= predicate.delta * original.confidence();
    }
    return classifier.classify(occlude(image, candidate, baseline)).label != original.label;
  };

  if (!holds(mask)) throw InputError("predicate does not hold on the mask to shrink");

  auto ranking = rank_pixels(landscape, RankOrder::high_to_low);
  std::reverse(ranking.begin(), ranking.end());
  PixelMask current = mask;
  for (bool changed = true; changed;) {
    changed = false;
    for (PixelIndex p : ranking) {
      if (!current.test(p)) continue;
      PixelMask trial = current;
      trial.reset(p);
      if (holds(trial)) {
        current = std::move(trial);
        changed = true;
      }
    }
  }
  return current;
}

}  // namespace causex

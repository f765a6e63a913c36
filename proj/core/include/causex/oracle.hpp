#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "causex/classifier.hpp"
#include "causex/imagery.hpp"

namespace causex {

// Exhaustive ground truth over the {image value, baseline} alphabet. Mask
// enumeration is 2^n, so instances are capped at 16 pixels.
inline constexpr std::size_t kOracleMaxPixels = 16;

struct TinyInstance {
  std::string name;
  ImageTensor image;
  std::shared_ptr<const Classifier> classifier;
  BaselineSpec baseline;

  // Throws RefusalError beyond kOracleMaxPixels, InputError on shape mismatch.
  void validate() const;
};

// A builtin classifier over an h x w single-channel grid, every pixel set to
// `fill`, baseline 0.
TinyInstance builtin_instance(const std::string& classifier_name, std::size_t height = 2,
                              std::size_t width = 2, float fill = 1.0f);

// Every subset-minimal mask whose insertion over the baseline keeps the label
// with confidence >= delta * original. Ordered by cardinality, then by bit
// value.
std::vector<PixelMask> minimal_sufficient_sets(const TinyInstance& instance, double delta);

// Every subset-minimal mask whose occlusion (rest kept) changes the label.
std::vector<PixelMask> minimal_contrastive_sets(const TinyInstance& instance);

// 1 / (1 + k), k the size of the smallest witness set W (pixel excluded) such
// that occluding W keeps the label and occluding W plus the pixel changes it;
// 0 when no witness exists.
double exact_responsibility(const TinyInstance& instance, PixelIndex pixel);
std::vector<double> exact_responsibilities(const TinyInstance& instance);

}  // namespace causex

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "causex/classifier.hpp"
#include "causex/imagery.hpp"

namespace causex {

// Half-open pixel rectangle [row0, row1) x [col0, col1).
struct Rect {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t row1 = 0;
  std::size_t col1 = 0;

  std::size_t rows() const { return row1 - row0; }
  std::size_t cols() const { return col1 - col0; }
  std::size_t area() const { return rows() * cols(); }
  bool operator==(const Rect&) const = default;
};

struct PartitionNode {
  Rect rect;
  std::vector<PartitionNode> children;
  double score = 0.0;
};

enum class PartitionScheme {
  // Each active rectangle is cut by random lines into up to four parts.
  random_quadrants,
  // The whole image is split once into single-pixel parts and every
  // combination is tested. Exact, and only feasible for <= 16 pixels.
  singletons,
};

struct ResponsibilityConfig {
  std::uint64_t seed = 0;
  std::uint32_t iterations = 20;
  PartitionScheme scheme = PartitionScheme::random_quadrants;
  // 4: one horizontal and one vertical cut; 2: one cut along the longer side.
  std::uint32_t branching = 4;
  // Maximum refinement depth below the root; 0 means unlimited.
  std::uint32_t depth_limit = 0;
  // Parts with area <= min_area are not split further.
  std::size_t min_area = 4;
  // Parts are refined only when their responsibility exceeds this.
  double refine_threshold = 0.0;
  // At most this many parts are refined per level (highest score first).
  std::size_t refine_limit = 16;
  // Mutants classified per backend call.
  std::size_t batch_size = 256;
  // Iterations evaluated concurrently.
  std::size_t threads = 1;
};

// Per-pixel responsibility for the image's classification, in [0, 1].
struct ResponsibilityLandscape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> scores;
  std::uint64_t seed = 0;
  std::uint32_t iterations = 0;
  // No part combination reproduced the classification; scores are all zero.
  bool degenerate = false;

  double at(PixelIndex p) const { return scores[p]; }
  bool operator==(const ResponsibilityLandscape&) const = default;
};

// Cuts `rect` into at most `branching` children that tile it exactly. Cut
// positions are drawn from `rng`; a side of length one is never cut.
std::vector<Rect> split_rect(const Rect& rect, std::uint32_t branching, std::mt19937_64& rng);

// Degree of responsibility of each of m parts (m <= 20) given pass[S] for
// every subset S of parts, bit i = part i kept. Part i scores 1 / (1 + k),
// k the smallest number of other parts that must be removed from the full set
// (with the classification kept) so that removing i as well flips it; 0 if no
// such set exists. `witness` receives that smallest set (lowest value on
// ties), or all-ones when the score is 0.
std::vector<double> part_responsibility(std::span<const std::uint8_t> pass, std::size_t parts,
                                        std::vector<std::uint32_t>* witness = nullptr);

// Approximate pixel responsibility by iterative partition refinement. Throws
// ConfigurationError when the baseline classifies like the image. When `trees`
// is given it receives the partition explored by each iteration.
ResponsibilityLandscape pixel_ranking(const ImageTensor& image, const Classifier& classifier,
                                      const BaselineSpec& baseline,
                                      const ResponsibilityConfig& config,
                                      std::vector<PartitionNode>* trees = nullptr);

enum class RankOrder { high_to_low, low_to_high };

// Permutation of all pixels ordered by score; ties broken by ascending
// row-major index in both orders.
std::vector<PixelIndex> rank_pixels(const ResponsibilityLandscape& landscape, RankOrder order);

// `<stem>.bin`: little-endian float32, row-major. `<stem>.json`: dims, seed,
// iterations, degenerate flag.
void write_landscape(const ResponsibilityLandscape& landscape, const std::filesystem::path& stem);
ResponsibilityLandscape read_landscape(const std::filesystem::path& stem);
// Grayscale heatmap, 255 = highest score.
void write_heatmap_png(const ResponsibilityLandscape& landscape, const std::filesystem::path& path);

}  // namespace causex

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "causex/classifier.hpp"
#include "causex/explain.hpp"
#include "causex/imagery.hpp"
#include "causex/oracle.hpp"
#include "causex/responsibility.hpp"
#include "causex/taxonomy.hpp"

namespace causex {

struct RunConfig {
  double delta = 1.0;
  float baseline = 0.0f;
  ResponsibilityConfig responsibility;
  ExplainOptions explain;
  // Post-pass that greedily drops pixels from the sufficient set; recorded as
  // "shrunk" next to the algorithm's own output.
  bool shrink = false;
  // Images processed concurrently by run_batch.
  std::size_t workers = 1;
};

enum class RunStatus { ok, not_found, error };
std::string to_string(RunStatus status);

struct RunOutcome {
  std::string image_id;
  std::string source;
  RunStatus status = RunStatus::error;
  std::string reason;
  std::optional<ExplanationRecord> record;
  // Label of the adjustment pixels alone over the baseline.
  std::optional<ClassLabel> adjustment_label;
  std::optional<std::size_t> contrast_distance;
  std::optional<std::size_t> adjustment_distance;
  double wallclock_ms = 0.0;
  std::filesystem::path output_dir;
};

// Decodes PNG/JPEG/BMP, scales with bilinear interpolation so the image
// covers `shape`, center-crops the overflow and maps 0..255 onto `range`.
ImageTensor load_image(const std::filesystem::path& path, const Shape& shape,
                       const ValueRange& range);
// Native height and width of an image file, with the given channel count.
Shape probe_image_shape(const std::filesystem::path& path, std::size_t channels);
// Inverse mapping of load_image, for previews.
void write_image_png(const ImageTensor& image, const std::filesystem::path& path);

// Responsibility, then the sufficient/contrastive scan, then adjustment
// discovery. Writes record.json, sufficient.png, contrastive.png,
// adjustment.png, responsibility.{bin,json}, responsibility_heatmap.png and
// preview_*.png into `out_dir`. Failures are reported in the outcome, not
// thrown.
RunOutcome run_single(const std::filesystem::path& image_path, const Classifier& classifier,
                      const RunConfig& config, const std::filesystem::path& out_dir,
                      const TaxonomyTree* taxonomy = nullptr);
RunOutcome run_tensor(const std::string& image_id, const ImageTensor& image,
                      const Classifier& classifier, const RunConfig& config,
                      const std::filesystem::path& out_dir,
                      const TaxonomyTree* taxonomy = nullptr);

struct StatsRow {
  std::string image_id;
  double sufficient_size_pct = 0.0;
  double contrastive_size_pct = 0.0;
  double adjustment_size_pct = 0.0;
  ClassLabel original_label = 0;
  ClassLabel contrast_label = 0;
  std::optional<ClassLabel> adjustment_label;
  std::optional<std::size_t> contrast_distance;
  std::optional<std::size_t> adjustment_distance;
  double wallclock_ms = 0.0;
};

// Only ok outcomes produce a row.
std::optional<StatsRow> stats_row(const RunOutcome& outcome);

struct BatchResult {
  // One entry per attempted file, in file-name order.
  std::vector<RunOutcome> outcomes;
  std::vector<StatsRow> rows;
};

// Processes every supported image in `dataset_dir` (sorted by name) into
// `out_dir/<image_id>/` and writes manifest.json, stats.csv and the plot data
// files. Per-image failures are recorded; only an empty directory throws.
BatchResult run_batch(const std::filesystem::path& dataset_dir, const Classifier& classifier,
                      const RunConfig& config, const std::filesystem::path& out_dir,
                      const TaxonomyTree* taxonomy = nullptr);

void write_stats_csv(const std::vector<StatsRow>& rows, const std::filesystem::path& path);

struct Quartiles {
  std::size_t count = 0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

// Linear interpolation between order statistics: position (n - 1) * q.
Quartiles quartiles(std::vector<double> values);

// hist_contrast.csv and hist_adjustment.csv ("distance,count", ascending) and
// sizes_summary.csv (quartiles per set kind). Throws InputError on no rows.
void emit_plot_data(const std::vector<StatsRow>& rows, const std::filesystem::path& out_dir);

// Greedy pipeline against the exhaustive oracle on one tiny instance.
struct OracleCheck {
  bool responsibility_matches = false;
  bool sufficient_contains_minimal = false;
  bool shrink_not_below_minimum = false;
  bool contrastive_contains_cause = false;
  bool all_pass() const {
    return responsibility_matches && sufficient_contains_minimal && shrink_not_below_minimum &&
           contrastive_contains_cause;
  }
  // Full JSON report.
  std::string report;
};

OracleCheck oracle_check(const TinyInstance& instance, double delta,
                         double tolerance = 1e-12);

// {"classifier": "and2", "shape": [h, w] | [h, w, c], "pixels": [...],
//  "baseline": 0.0}
TinyInstance load_instance_file(const std::filesystem::path& path);

}  // namespace causex

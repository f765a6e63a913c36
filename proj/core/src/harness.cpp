#include "causex/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "causex/error.hpp"

namespace causex {

namespace {

using ordered_json = nlohmann::ordered_json;

bool supported_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::string image_id_for(const std::filesystem::path& path) {
  std::string id = path.filename().string();
  std::replace(id.begin(), id.end(), '.', '_');
  return id;
}

double percent(const PixelMask& mask) {
  return 100.0 * static_cast<double>(mask.cardinality()) / static_cast<double>(mask.size());
}

ordered_json flags_json(const ExplanationFlags& flags) {
  return {{"sufficient_valid", flags.sufficient_valid},
          {"contrastive_valid", flags.contrastive_valid},
          {"complete_valid", flags.complete_valid}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string backend_name(BackendKind kind) {
  switch (kind) {
    case BackendKind::onnx_file:
      return "onnx";
    case BackendKind::subprocess:
      return "subprocess";
    case BackendKind::builtin:
      return "builtin";
  }
  return "unknown";
}

std::string format_number(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << v;
  return out.str();
}

}  // namespace

std::string to_string(RunStatus status) {
  switch (status) {
    case RunStatus::ok:
      return "ok";
    case RunStatus::not_found:
      return "not_found";
    case RunStatus::error:
      return "error";
  }
  return "error";
}

ImageTensor load_image(const std::filesystem::path& path, const Shape& shape,
                       const ValueRange& range) {
  if (shape.channels != 1 && shape.channels != 3) {
    throw InputError("image loading supports 1 or 3 channels, model wants " +
                     std::to_string(shape.channels));
  }
  cv::Mat decoded = cv::imread(path.string(), shape.channels == 1 ? cv::IMREAD_GRAYSCALE
                                                                  : cv::IMREAD_COLOR);
  if (decoded.empty()) throw InputError("cannot decode image " + path.string());
  if (shape.channels == 3) cv::cvtColor(decoded, decoded, cv::COLOR_BGR2RGB);

  const auto target_h = static_cast<int>(shape.height);
  const auto target_w = static_cast<int>(shape.width);
  if (decoded.rows != target_h || decoded.cols != target_w) {
    const double scale = std::max(static_cast<double>(target_h) / decoded.rows,
                                  static_cast<double>(target_w) / decoded.cols);
    const int scaled_h = std::max(target_h, static_cast<int>(std::lround(decoded.rows * scale)));
    const int scaled_w = std::max(target_w, static_cast<int>(std::lround(decoded.cols * scale)));
    cv::Mat scaled;
    cv::resize(decoded, scaled, cv::Size(scaled_w, scaled_h), 0, 0, cv::INTER_LINEAR);
    const int top = (scaled_h - target_h) / 2;
    const int left = (scaled_w - target_w) / 2;
    decoded = scaled(cv::Rect(left, top, target_w, target_h)).clone();
  }

  std::vector<float> data(shape.elements());
  const float span = range.hi - range.lo;
  for (int r = 0; r < target_h; ++r) {
    const std::uint8_t* row = decoded.ptr<std::uint8_t>(r);
    for (int c = 0; c < target_w * static_cast<int>(shape.channels); ++c) {
      data[static_cast<std::size_t>(r) * target_w * shape.channels + c] =
          range.lo + span * (static_cast<float>(row[c]) / 255.0f);
    }
  }
  return ImageTensor(shape, std::move(data), range);
}

Shape probe_image_shape(const std::filesystem::path& path, std::size_t channels) {
  const cv::Mat decoded = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (decoded.empty()) throw InputError("cannot decode image " + path.string());
  return Shape{static_cast<std::size_t>(decoded.rows), static_cast<std::size_t>(decoded.cols),
               channels};
}

void write_image_png(const ImageTensor& image, const std::filesystem::path& path) {
  const int type = image.channels() == 1 ? CV_8UC1 : CV_8UC3;
  if (image.channels() != 1 && image.channels() != 3) {
    throw InputError("previews support 1 or 3 channels");
  }
  cv::Mat out(static_cast<int>(image.height()), static_cast<int>(image.width()), type);
  const float span = image.range().hi - image.range().lo;
  const auto data = image.data();
  for (int r = 0; r < out.rows; ++r) {
    std::uint8_t* row = out.ptr<std::uint8_t>(r);
    for (int c = 0; c < out.cols * static_cast<int>(image.channels()); ++c) {
      const float v = (data[static_cast<std::size_t>(r) * out.cols * image.channels() + c] -
                       image.range().lo) / span;
      row[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L));
    }
  }
  if (image.channels() == 3) cv::cvtColor(out, out, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), out)) throw Error("cannot write " + path.string());
}

RunOutcome run_tensor(const std::string& image_id, const ImageTensor& image,
                      const Classifier& classifier, const RunConfig& config,
                      const std::filesystem::path& out_dir, const TaxonomyTree* taxonomy) {
  const auto started = std::chrono::steady_clock::now();
  RunOutcome outcome;
  outcome.image_id = image_id;
  outcome.output_dir = out_dir;
  std::filesystem::create_directories(out_dir);

  const BaselineSpec baseline = BaselineSpec::constant(config.baseline);
  ExplainOptions options = config.explain;

  ordered_json doc;
  doc["image_id"] = image_id;
  try {
    image.validate();
    baseline.validate_for(image.shape(), image.range());
    if (!validate_baseline(classifier, image, baseline)) {
      throw ConfigurationError("baseline value " + std::to_string(config.baseline) +
                               " is classified like the image");
    }
    const ResponsibilityLandscape landscape =
        pixel_ranking(image, classifier, baseline, config.responsibility);
    write_landscape(landscape, out_dir / "responsibility");
    write_heatmap_png(landscape, out_dir / "responsibility_heatmap.png");

    ExplanationRecord record =
        sufficient_contrastive(image, classifier, baseline, config.delta, landscape, options);
    adjustment_discovery(image, classifier, baseline, landscape, record, options);

    std::optional<PixelMask> shrunk;
    if (config.shrink) {
      shrunk = shrink_minimal(image, classifier, baseline, record.sufficient,
                              MinimalityPredicate::sufficient(config.delta), landscape);
    }

    ordered_json analysis;
    if (!record.adjustment.empty()) {
      const auto adjusted = classifier.classify(compose(image, record.adjustment, baseline));
      outcome.adjustment_label = adjusted.label;
      analysis["adjustment_label"] = adjusted.label;
      analysis["adjustment_confidence"] = adjusted.confidence();
    } else {
      analysis["adjustment_label"] = nullptr;
      analysis["adjustment_confidence"] = nullptr;
    }
    if (taxonomy) {
      outcome.contrast_distance =
          taxonomy->shortest_path(record.original_label, record.contrast_label);
      analysis["contrast_distance"] = *outcome.contrast_distance;
      if (outcome.adjustment_label) {
        outcome.adjustment_distance =
            taxonomy->shortest_path(record.original_label, *outcome.adjustment_label);
        analysis["adjustment_distance"] = *outcome.adjustment_distance;
      } else {
        analysis["adjustment_distance"] = nullptr;
      }
    }

    write_mask_png(record.sufficient, out_dir / "sufficient.png");
    write_mask_png(record.contrastive, out_dir / "contrastive.png");
    write_mask_png(record.adjustment, out_dir / "adjustment.png");
    write_image_png(compose(image, record.sufficient, baseline), out_dir / "preview_sufficient.png");
    write_image_png(occlude(image, record.contrastive, baseline),
                    out_dir / "preview_contrastive.png");
    write_image_png(compose(image, record.complete(), baseline), out_dir / "preview_complete.png");
    if (shrunk) write_mask_png(*shrunk, out_dir / "shrunk.png");

    doc["status"] = "ok";
    doc["sufficient"] = "sufficient.png";
    doc["contrastive"] = "contrastive.png";
    doc["adjustment"] = "adjustment.png";
    doc["delta"] = record.delta;
    doc["tau"] = record.tau;
    doc["original_label"] = record.original_label;
    doc["original_confidence"] = record.original_confidence;
    doc["sufficient_confidence"] = record.sufficient_confidence;
    doc["contrast_label"] = record.contrast_label;
    doc["contrast_confidence"] = record.contrast_confidence;
    doc["complete_confidence"] = record.complete_confidence;
    doc["precision_dp"] = record.precision_dp;
    doc["flags"] = flags_json(record.flags);
    doc["sizes"] = {{"pixels", image.pixel_count()},
                    {"sufficient", record.sufficient.cardinality()},
                    {"contrastive", record.contrastive.cardinality()},
                    {"adjustment", record.adjustment.cardinality()}};
    doc["scan_index"] = record.scan_index;
    doc["responsibility_degenerate"] = landscape.degenerate;
    if (shrunk) {
      doc["shrunk"] = "shrunk.png";
      doc["shrunk_size"] = shrunk->cardinality();
    }
    doc["analysis"] = std::move(analysis);
    outcome.record = std::move(record);
    outcome.status = RunStatus::ok;
  } catch (const ExplanationNotFound& e) {
    outcome.status = RunStatus::not_found;
    outcome.reason = e.what();
    doc["status"] = "not_found";
    doc["reason"] = e.what();
    doc["partial_witness"] = {{"scan_index", e.best().scan_index},
                              {"conditions_met", e.best().conditions_met},
                              {"insertion_label", e.best().insertion_label},
                              {"insertion_confidence", e.best().insertion_confidence},
                              {"deletion_label", e.best().deletion_label}};
  } catch (const NotFoundError& e) {
    outcome.status = RunStatus::not_found;
    outcome.reason = e.what();
    doc["status"] = "not_found";
    doc["reason"] = e.what();
  } catch (const std::exception& e) {
    outcome.status = RunStatus::error;
    outcome.reason = e.what();
    doc["status"] = "error";
    doc["reason"] = e.what();
  }

  outcome.wallclock_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  doc["run"] = {{"model_ref", classifier.spec().model_ref},
                {"backend", backend_name(classifier.spec().backend)},
                {"seed", config.responsibility.seed},
                {"iterations", config.responsibility.iterations},
                {"delta", config.delta},
                {"baseline", config.baseline},
                {"precision_dp", config.explain.precision_dp},
                {"softmax_applied", classifier.softmax_applied()},
                {"wallclock_ms", outcome.wallclock_ms}};
  try {
    write_text(out_dir / "record.json", doc.dump(2) + "\n");
  } catch (const std::exception& e) {
    outcome.status = RunStatus::error;
    outcome.reason = e.what();
  }
  return outcome;
}

RunOutcome run_single(const std::filesystem::path& image_path, const Classifier& classifier,
                      const RunConfig& config, const std::filesystem::path& out_dir,
                      const TaxonomyTree* taxonomy) {
  const std::string id = image_id_for(image_path);
  RunOutcome outcome;
  try {
    const ImageTensor image = load_image(image_path, classifier.spec().input_shape,
                                         classifier.spec().preprocessing.value_range);
    outcome = run_tensor(id, image, classifier, config, out_dir, taxonomy);
  } catch (const std::exception& e) {
    outcome.image_id = id;
    outcome.status = RunStatus::error;
    outcome.reason = e.what();
    outcome.output_dir = out_dir;
  }
  outcome.source = image_path.string();
  return outcome;
}

std::optional<StatsRow> stats_row(const RunOutcome& outcome) {
  if (outcome.status != RunStatus::ok || !outcome.record) return std::nullopt;
  const ExplanationRecord& r = *outcome.record;
  StatsRow row;
  row.image_id = outcome.image_id;
  row.sufficient_size_pct = percent(r.sufficient);
  row.contrastive_size_pct = percent(r.contrastive);
  row.adjustment_size_pct = percent(r.adjustment);
  row.original_label = r.original_label;
  row.contrast_label = r.contrast_label;
  row.adjustment_label = outcome.adjustment_label;
  row.contrast_distance = outcome.contrast_distance;
  row.adjustment_distance = outcome.adjustment_distance;
  row.wallclock_ms = outcome.wallclock_ms;
  return row;
}

void write_stats_csv(const std::vector<StatsRow>& rows, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "image_id,sufficient_size_pct,contrastive_size_pct,adjustment_size_pct,"
         "original_label,contrast_label,adjustment_label,contrast_distance,"
         "adjustment_distance,wallclock_ms\n";
  auto opt = [](const auto& v) { return v ? std::to_string(*v) : std::string(); };
  for (const auto& row : rows) {
    out << row.image_id << ',' << format_number(row.sufficient_size_pct) << ','
        << format_number(row.contrastive_size_pct) << ','
        << format_number(row.adjustment_size_pct) << ',' << row.original_label << ','
        << row.contrast_label << ',' << opt(row.adjustment_label) << ','
        << opt(row.contrast_distance) << ',' << opt(row.adjustment_distance) << ','
        << format_number(row.wallclock_ms) << '\n';
  }
  write_text(path, out.str());
}

Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw InputError("quartiles of an empty sample");
  std::sort(values.begin(), values.end());
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return Quartiles{values.size(), values.front(), at(0.25), at(0.5), at(0.75), values.back()};
}

void emit_plot_data(const std::vector<StatsRow>& rows, const std::filesystem::path& out_dir) {
  if (rows.empty()) throw InputError("no successful explanations to summarize");
  std::filesystem::create_directories(out_dir);

  auto histogram = [&](auto member, const std::string& file) {
    std::map<std::size_t, std::size_t> counts;
    for (const auto& row : rows) {
      if (const auto& d = row.*member) ++counts[*d];
    }
    std::ostringstream out;
    out << "distance,count\n";
    for (const auto& [distance, count] : counts) out << distance << ',' << count << '\n';
    write_text(out_dir / file, out.str());
  };
  histogram(&StatsRow::contrast_distance, "hist_contrast.csv");
  histogram(&StatsRow::adjustment_distance, "hist_adjustment.csv");

  std::ostringstream out;
  out << "kind,count,min,q1,median,q3,max\n";
  auto summarize = [&](const std::string& kind, double StatsRow::*member) {
    std::vector<double> values;
    for (const auto& row : rows) values.push_back(row.*member);
    const Quartiles q = quartiles(values);
    out << kind << ',' << q.count << ',' << format_number(q.min) << ',' << format_number(q.q1)
        << ',' << format_number(q.median) << ',' << format_number(q.q3) << ','
        << format_number(q.max) << '\n';
  };
  summarize("sufficient", &StatsRow::sufficient_size_pct);
  summarize("contrastive", &StatsRow::contrastive_size_pct);
  summarize("adjustment", &StatsRow::adjustment_size_pct);
  write_text(out_dir / "sizes_summary.csv", out.str());
}

BatchResult run_batch(const std::filesystem::path& dataset_dir, const Classifier& classifier,
                      const RunConfig& config, const std::filesystem::path& out_dir,
                      const TaxonomyTree* taxonomy) {
  if (!std::filesystem::is_directory(dataset_dir)) {
    throw InputError(dataset_dir.string() + " is not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dataset_dir)) {
    if (entry.is_regular_file() && supported_image(entry.path())) files.push_back(entry.path());
  }
  if (files.empty()) throw InputError("no supported images in " + dataset_dir.string());
  std::sort(files.begin(), files.end());
  std::filesystem::create_directories(out_dir);

  const auto started_at = std::chrono::system_clock::now();
  BatchResult result;
  result.outcomes.resize(files.size());
  std::atomic<std::size_t> next{0};
  std::mutex manifest_mutex;
  std::vector<std::size_t> completion_order;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < files.size();) {
      RunOutcome outcome =
          run_single(files[i], classifier, config, out_dir / image_id_for(files[i]), taxonomy);
      std::lock_guard lock(manifest_mutex);
      result.outcomes[i] = std::move(outcome);
      completion_order.push_back(i);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(config.workers, 1, files.size());
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  for (const auto& outcome : result.outcomes) {
    if (auto row = stats_row(outcome)) result.rows.push_back(std::move(*row));
  }

  ordered_json manifest;
  manifest["model_ref"] = classifier.spec().model_ref;
  manifest["backend"] = backend_name(classifier.spec().backend);
  manifest["dataset_dir"] = dataset_dir.string();
  manifest["delta"] = config.delta;
  manifest["seed"] = config.responsibility.seed;
  manifest["iterations"] = config.responsibility.iterations;
  manifest["baseline"] = config.baseline;
  manifest["precision_dp"] = config.explain.precision_dp;
  manifest["softmax_applied"] = classifier.softmax_applied();
  manifest["image_preprocessing"] = "bilinear resize to cover input, center crop";
  manifest["started_at"] = std::chrono::duration_cast<std::chrono::seconds>(
                               started_at.time_since_epoch())
                               .count();
  ordered_json statuses = ordered_json::array();
  for (const auto& outcome : result.outcomes) {
    ordered_json entry = {{"image_id", outcome.image_id},
                          {"source", outcome.source},
                          {"status", to_string(outcome.status)}};
    if (!outcome.reason.empty()) entry["reason"] = outcome.reason;
    statuses.push_back(std::move(entry));
  }
  manifest["images"] = std::move(statuses);
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  write_stats_csv(result.rows, out_dir / "stats.csv");
  if (!result.rows.empty()) emit_plot_data(result.rows, out_dir);
  return result;
}

OracleCheck oracle_check(const TinyInstance& instance, double delta, double tolerance) {
  instance.validate();
  const Classifier& classifier = *instance.classifier;
  const ImageTensor& image = instance.image;

  ResponsibilityConfig rc;
  rc.scheme = PartitionScheme::singletons;
  rc.iterations = 1;
  const ResponsibilityLandscape landscape =
      pixel_ranking(image, classifier, instance.baseline, rc);
  const std::vector<double> exact = exact_responsibilities(instance);
  const auto minimal_sufficient = minimal_sufficient_sets(instance, delta);
  const auto minimal_contrastive = minimal_contrastive_sets(instance);

  ExplanationRecord record =
      sufficient_contrastive(image, classifier, instance.baseline, delta, landscape);
  adjustment_discovery(image, classifier, instance.baseline, landscape, record);
  const PixelMask shrunk =
      shrink_minimal(image, classifier, instance.baseline, record.sufficient,
                     MinimalityPredicate::sufficient(delta), landscape);

  OracleCheck check;
  check.responsibility_matches = true;
  ordered_json rows = ordered_json::array();
  for (std::size_t p = 0; p < exact.size(); ++p) {
    const bool match = std::abs(exact[p] - landscape.scores[p]) <= tolerance;
    check.responsibility_matches = check.responsibility_matches && match;
    rows.push_back({{"pixel", p},
                    {"exact", exact[p]},
                    {"greedy", landscape.scores[p]},
                    {"match", match}});
  }
  check.sufficient_contains_minimal =
      std::any_of(minimal_sufficient.begin(), minimal_sufficient.end(),
                  [&](const PixelMask& m) { return m.is_subset_of(record.sufficient); });
  std::size_t smallest = image.pixel_count();
  for (const auto& m : minimal_sufficient) smallest = std::min(smallest, m.cardinality());
  check.shrink_not_below_minimum = shrunk.cardinality() >= smallest;
  check.contrastive_contains_cause =
      std::any_of(minimal_contrastive.begin(), minimal_contrastive.end(),
                  [&](const PixelMask& m) { return m.is_subset_of(record.contrastive); });

  auto masks = [](const std::vector<PixelMask>& sets) {
    ordered_json out = ordered_json::array();
    for (const auto& m : sets) out.push_back(m.pixels());
    return out;
  };
  ordered_json report;
  report["instance"] = {{"name", instance.name},
                        {"classifier", classifier.spec().model_ref},
                        {"shape", {image.height(), image.width(), image.channels()}},
                        {"pixels", std::vector<float>(image.data().begin(), image.data().end())},
                        {"baseline", std::vector<float>(instance.baseline.values().begin(),
                                                        instance.baseline.values().end())}};
  report["delta"] = delta;
  report["minimal_sufficient_sets"] = masks(minimal_sufficient);
  report["minimal_contrastive_sets"] = masks(minimal_contrastive);
  report["responsibility"] = std::move(rows);
  report["greedy"] = {{"sufficient", record.sufficient.pixels()},
                      {"contrastive", record.contrastive.pixels()},
                      {"adjustment", record.adjustment.pixels()},
                      {"shrunk", shrunk.pixels()},
                      {"sufficient_confidence", record.sufficient_confidence},
                      {"contrast_label", record.contrast_label}};
  report["checks"] = {{"responsibility_matches", check.responsibility_matches},
                      {"sufficient_contains_minimal", check.sufficient_contains_minimal},
                      {"shrink_not_below_minimum", check.shrink_not_below_minimum},
                      {"contrastive_contains_cause", check.contrastive_contains_cause},
                      {"all_pass", check.all_pass()}};
  check.report = report.dump(2);
  return check;
}

TinyInstance load_instance_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open instance file " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    const auto dims = j.at("shape").get<std::vector<std::size_t>>();
    if (dims.size() != 2 && dims.size() != 3) throw InputError("shape must be [h, w] or [h, w, c]");
    const Shape shape{dims[0], dims[1], dims.size() == 3 ? dims[2] : 1};
    const auto name = j.at("classifier").get<std::string>();
    TinyInstance instance{path.stem().string(),
                          ImageTensor(shape, j.at("pixels").get<std::vector<float>>()),
                          make_classifier(builtin_spec(name, shape)),
                          BaselineSpec::constant(j.value("baseline", 0.0f))};
    instance.image.validate();
    instance.validate();
    return instance;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("instance file " + path.string() + ": " + e.what());
  }
}

}  // namespace causex

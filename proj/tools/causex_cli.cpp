// causex: causal explanations for black-box image classifiers.
//
//   causex explain <image> --backend builtin:count-conf --out run/
//   causex batch <dir> --backend onnx --model resnet50.onnx --out runs/
//   causex oracle-check --instance and2 --delta 1
//   causex taxonomy-dist --edges edges.txt --map map.txt 301 302

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "causex/classifier.hpp"
#include "causex/error.hpp"
#include "causex/harness.hpp"
#include "causex/oracle.hpp"
#include "causex/taxonomy.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitError = 1;
constexpr int kExitNotFound = 3;
constexpr int kExitCheckFailed = 4;

struct ModelOptions {
  std::string backend = "builtin:count-conf";
  std::string model;
  std::string manifest;
  std::vector<std::size_t> input_shape;
  std::uint32_t class_count = 0;
  std::vector<float> mean;
  std::vector<float> std;
  std::vector<float> value_range;
  std::string scores = "auto";
};

struct RunOptions {
  double delta = 1.0;
  std::uint64_t seed = 0;
  std::uint32_t iterations = 20;
  float baseline = 0.0f;
  std::uint32_t precision_dp = 4;
  std::size_t threads = 1;
  std::size_t workers = 1;
  bool shrink = false;
  std::string out = "causex_out";
};

void add_model_options(CLI::App& cmd, ModelOptions& m) {
  cmd.add_option("--backend", m.backend, "onnx | subprocess | builtin:<name>")
      ->capture_default_str();
  cmd.add_option("--model", m.model, "ONNX model path or subprocess command line");
  cmd.add_option("--manifest", m.manifest,
                 "Preprocessing manifest (default: <model>.manifest.json next to the model)");
  cmd.add_option("--input-shape", m.input_shape, "H W C")->expected(3)->delimiter(',');
  cmd.add_option("--class-count", m.class_count, "Number of classes (subprocess backend)");
  cmd.add_option("--mean", m.mean, "Per-channel normalization mean")->delimiter(',');
  cmd.add_option("--std", m.std, "Per-channel normalization std")->delimiter(',');
  cmd.add_option("--value-range", m.value_range, "Raw pixel range lo,hi")
      ->expected(2)
      ->delimiter(',');
  cmd.add_option("--scores", m.scores, "Backend output: auto | logits | probs")
      ->check(CLI::IsMember({"auto", "logits", "probs"}))
      ->capture_default_str();
}

void add_run_options(CLI::App& cmd, RunOptions& r) {
  cmd.add_option("--delta", r.delta, "Confidence fraction the sufficient set must keep")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd.add_option("--seed", r.seed, "Partition RNG seed")->capture_default_str();
  cmd.add_option("--iterations", r.iterations, "Responsibility iterations")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd.add_option("--baseline", r.baseline, "Occlusion value in raw pixel units")
      ->capture_default_str();
  cmd.add_option("--precision-dp", r.precision_dp, "Decimals for the adjustment equality test")
      ->check(CLI::Range(0, 15))
      ->capture_default_str();
  cmd.add_option("--threads", r.threads, "Responsibility iterations run concurrently")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd.add_flag("--shrink", r.shrink, "Also write a 1-minimal shrink of the sufficient set");
  cmd.add_option("--out", r.out, "Output directory")->capture_default_str();
}

causex::ScoreKind score_kind(const std::string& name) {
  if (name == "logits") return causex::ScoreKind::logits;
  if (name == "probs") return causex::ScoreKind::probabilities;
  return causex::ScoreKind::auto_detect;
}

// `probe` supplies a shape for builtins when --input-shape is absent.
std::unique_ptr<causex::Classifier> build_classifier(const ModelOptions& m,
                                                     const std::optional<fs::path>& probe) {
  using namespace causex;
  std::optional<Shape> shape;
  if (!m.input_shape.empty()) shape = Shape{m.input_shape[0], m.input_shape[1], m.input_shape[2]};

  ClassifierSpec spec;
  if (m.backend.rfind("builtin:", 0) == 0) {
    const std::string name = m.backend.substr(8);
    if (!shape) {
      if (!probe) throw InputError("builtin backend needs --input-shape");
      shape = probe_image_shape(*probe, 1);
    }
    spec = builtin_spec(name, *shape);
  } else if (m.backend == "onnx") {
    if (m.model.empty()) throw InputError("onnx backend needs --model <file.onnx>");
    fs::path manifest = m.manifest;
    if (manifest.empty()) manifest = fs::path(m.model).replace_extension(".manifest.json");
    spec = load_model_manifest(manifest, m.model);
  } else if (m.backend == "subprocess") {
    if (m.model.empty()) throw InputError("subprocess backend needs --model <command>");
    if (!shape) throw InputError("subprocess backend needs --input-shape");
    if (m.class_count == 0) throw InputError("subprocess backend needs --class-count");
    spec.backend = BackendKind::subprocess;
    spec.model_ref = m.model;
    spec.input_shape = *shape;
    spec.class_count = m.class_count;
    spec.score_kind = score_kind(m.scores);
  } else {
    throw InputError("unknown backend '" + m.backend + "'");
  }
  // Explicit flags override manifest values.
  if (!m.mean.empty()) spec.preprocessing.mean = m.mean;
  if (!m.std.empty()) spec.preprocessing.std = m.std;
  if (!m.value_range.empty()) spec.preprocessing.value_range = {m.value_range[0], m.value_range[1]};
  if (m.backend == "onnx" && m.scores != "auto") spec.score_kind = score_kind(m.scores);
  if (m.backend == "onnx" && shape) spec.input_shape = *shape;
  spec.validate();
  return make_classifier(spec);
}

causex::RunConfig run_config(const RunOptions& r) {
  causex::RunConfig config;
  config.delta = r.delta;
  config.baseline = r.baseline;
  config.responsibility.seed = r.seed;
  config.responsibility.iterations = r.iterations;
  config.responsibility.threads = r.threads;
  config.explain.precision_dp = r.precision_dp;
  config.shrink = r.shrink;
  config.workers = r.workers;
  return config;
}

std::optional<causex::TaxonomyTree> maybe_taxonomy(const std::string& edges,
                                                   const std::string& map) {
  if (edges.empty() && map.empty()) return std::nullopt;
  if (edges.empty() || map.empty()) {
    throw causex::InputError("--taxonomy-edges and --class-map go together");
  }
  return causex::load_taxonomy(edges, map);
}

void print_outcome(const causex::RunOutcome& outcome) {
  std::cout << outcome.image_id << ": " << causex::to_string(outcome.status);
  if (outcome.record) {
    const auto& r = *outcome.record;
    std::cout << " label=" << r.original_label << " sufficient=" << r.sufficient.cardinality()
              << " contrastive=" << r.contrastive.cardinality()
              << " adjustment=" << r.adjustment.cardinality()
              << " contrast_label=" << r.contrast_label;
  }
  if (!outcome.reason.empty()) std::cout << " (" << outcome.reason << ")";
  std::cout << " -> " << outcome.output_dir.string() << "\n";
}

int exit_code(causex::RunStatus status) {
  switch (status) {
    case causex::RunStatus::ok:
      return 0;
    case causex::RunStatus::not_found:
      return kExitNotFound;
    case causex::RunStatus::error:
      return kExitError;
  }
  return kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal explanations for black-box image classifiers"};
  app.set_config("--config", "", "TOML file with option values")->check(CLI::ExistingFile);
  app.require_subcommand(1);

  ModelOptions model;
  RunOptions run;

  auto* explain = app.add_subcommand("explain", "Explain one image");
  std::string image_path;
  explain->add_option("image", image_path, "Input image")->required()->check(CLI::ExistingFile);
  add_model_options(*explain, model);
  add_run_options(*explain, run);
  std::string explain_edges, explain_map;
  explain->add_option("--taxonomy-edges", explain_edges, "Taxonomy edge file");
  explain->add_option("--class-map", explain_map, "Class index to taxonomy node map");

  auto* batch = app.add_subcommand("batch", "Explain every image in a directory");
  std::string dataset_dir;
  batch->add_option("dir", dataset_dir, "Image directory")->required()->check(CLI::ExistingDirectory);
  add_model_options(*batch, model);
  add_run_options(*batch, run);
  batch->add_option("--workers", run.workers, "Images processed concurrently")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  std::string batch_edges, batch_map;
  batch->add_option("--taxonomy-edges", batch_edges, "Taxonomy edge file");
  batch->add_option("--class-map", batch_map, "Class index to taxonomy node map");

  auto* oracle = app.add_subcommand("oracle-check", "Compare greedy results with the exact oracle");
  std::string instance;
  double oracle_delta = 1.0;
  std::size_t grid_h = 2, grid_w = 2;
  oracle->add_option("--instance", instance, "Builtin name or instance JSON file")->required();
  oracle->add_option("--delta", oracle_delta, "Sufficiency fraction")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  oracle->add_option("--height", grid_h, "Grid height for builtin instances")->capture_default_str();
  oracle->add_option("--width", grid_w, "Grid width for builtin instances")->capture_default_str();

  auto* dist = app.add_subcommand("taxonomy-dist", "Shortest is-a path between two classes");
  std::string edges_path, map_path;
  std::uint32_t class_a = 0, class_b = 0;
  dist->add_option("--edges", edges_path, "Edge file")->required()->check(CLI::ExistingFile);
  dist->add_option("--map", map_path, "Class map")->required()->check(CLI::ExistingFile);
  dist->add_option("class_a", class_a)->required();
  dist->add_option("class_b", class_b)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*explain) {
      const auto classifier = build_classifier(model, fs::path(image_path));
      const auto taxonomy = maybe_taxonomy(explain_edges, explain_map);
      const auto outcome = causex::run_single(image_path, *classifier, run_config(run), run.out,
                                              taxonomy ? &*taxonomy : nullptr);
      print_outcome(outcome);
      return exit_code(outcome.status);
    }
    if (*batch) {
      // First image by name, the same one run_batch starts with.
      std::optional<fs::path> probe;
      for (const auto& entry : fs::directory_iterator(dataset_dir)) {
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        const bool image = ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
        if (entry.is_regular_file() && image && (!probe || entry.path() < *probe)) {
          probe = entry.path();
        }
      }
      const auto classifier = build_classifier(model, probe);
      const auto taxonomy = maybe_taxonomy(batch_edges, batch_map);
      const auto result = causex::run_batch(dataset_dir, *classifier, run_config(run), run.out,
                                            taxonomy ? &*taxonomy : nullptr);
      std::size_t ok = 0;
      for (const auto& outcome : result.outcomes) {
        print_outcome(outcome);
        ok += outcome.status == causex::RunStatus::ok;
      }
      std::cout << ok << "/" << result.outcomes.size() << " explained; manifest at "
                << (fs::path(run.out) / "manifest.json").string() << "\n";
      return 0;
    }
    if (*oracle) {
      const causex::TinyInstance tiny = fs::exists(instance)
                                            ? causex::load_instance_file(instance)
                                            : causex::builtin_instance(instance, grid_h, grid_w);
      const auto check = causex::oracle_check(tiny, oracle_delta);
      std::cout << check.report << "\n";
      return check.all_pass() ? 0 : kExitCheckFailed;
    }
    if (*dist) {
      const auto tree = causex::load_taxonomy(edges_path, map_path);
      std::cout << tree.shortest_path(class_a, class_b) << "\n";
      return 0;
    }
  } catch (const causex::Error& e) {
    std::cerr << "causex: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "causex: unexpected failure: " << e.what() << "\n";
    return kExitError;
  }
  return 0;
}

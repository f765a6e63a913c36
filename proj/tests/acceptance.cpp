// Acceptance checks. Prints one PASS, FAIL or SKIP line per criterion and
// exits non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "causex/error.hpp"
#include "causex/harness.hpp"
#include "support.hpp"

namespace {

using namespace causex;
namespace ref = causex::testing;

enum class Verdict { pass, fail, skip };

int failures = 0;

void report(const std::string& id, Verdict verdict, const std::string& detail) {
  const char* word = verdict == Verdict::pass ? "PASS" : verdict == Verdict::fail ? "FAIL" : "SKIP";
  if (verdict == Verdict::fail) ++failures;
  std::cout << word << " " << id << ": " << detail << std::endl;
}

Verdict verdict_of(bool ok) { return ok ? Verdict::pass : Verdict::fail; }

std::unique_ptr<Classifier> model_for(const ref::RefInstance& inst) {
  return make_classifier(builtin_spec(inst.rule.name(), inst.shape()));
}

std::uint32_t top_k(const std::vector<PixelIndex>& ranking, std::size_t k) {
  std::uint32_t bits = 0;
  for (std::size_t i = 0; i < k; ++i) bits |= 1u << ranking[i];
  return bits;
}

bool all_three(const ref::RefInstance& inst, std::uint32_t bits, double delta) {
  return ref::ref_sufficient(inst, bits, delta) && ref::ref_contrastive(inst, bits);
}

double rounded(double v, int dp) { return std::nearbyint(v * std::pow(10.0, dp)); }

constexpr double kDeltas[] = {0.0, 0.25, 0.5, 1.0};

void scan_postconditions() {
  std::mt19937_64 rng(1001);
  ResponsibilityConfig config;
  config.iterations = 8;
  const auto start = std::chrono::steady_clock::now();
  std::size_t instances = 0;
  std::size_t violations = 0;
  std::map<std::string, std::size_t> families;
  std::ostringstream first;
  while (instances < 240) {
    const ref::RefInstance inst = ref::random_instance(rng);
    const double delta = kDeltas[rng() % 4];
    const auto model = model_for(inst);
    const BaselineSpec baseline = BaselineSpec::constant(inst.baseline);
    const auto landscape = pixel_ranking(inst.image(), *model, baseline, config);
    const auto ranking = rank_pixels(landscape, RankOrder::high_to_low);
    const ExplanationRecord r =
        sufficient_contrastive(inst.image(), *model, baseline, delta, landscape);
    ++instances;
    ++families[inst.rule.name().substr(0, inst.rule.name().find(':'))];

    const std::uint32_t s = ref::bits_of(r.sufficient);
    const std::uint32_t c = ref::bits_of(r.contrastive);
    const ref::RefOutput orig = inst.original();
    const ref::RefOutput kept = inst.with_kept(s);
    const ref::RefOutput removed = inst.with_kept(inst.full() & ~c);
    bool ok = s == top_k(ranking, r.scan_index) && c == s && all_three(inst, s, delta) &&
              r.original_label == orig.label && r.contrast_label == removed.label &&
              r.sufficient_confidence == kept.conf[orig.label];
    for (std::size_t k = 1; ok && k < r.scan_index; ++k) {
      if (all_three(inst, top_k(ranking, k), delta)) ok = false;
    }
    if (!ok) {
      if (violations == 0) first << " first: " << inst.describe() << " delta " << delta;
      ++violations;
    }
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream detail;
  detail << instances << " instances (";
  for (const auto& [family, count] : families) detail << family << " " << count << " ";
  detail << "), " << violations << " violations, " << seconds << " s" << first.str();
  report("1 scan postconditions", verdict_of(violations == 0 && seconds < 30.0 && families.size() == 4),
         detail.str());
}

void oracle_equivalence() {
  std::mt19937_64 rng(1002);
  ResponsibilityConfig singletons;
  singletons.scheme = PartitionScheme::singletons;
  singletons.iterations = 1;
  std::size_t instances = 0;
  std::size_t resp_bad = 0, contain_bad = 0, shrink_bad = 0;
  double worst = 0.0;
  while (instances < 120) {
    const ref::RefInstance inst = ref::random_instance(rng);
    if (inst.n() > 12) continue;
    ++instances;
    const double delta = kDeltas[rng() % 4];
    const TinyInstance tiny{inst.rule.name(), inst.image(), model_for(inst),
                            BaselineSpec::constant(inst.baseline)};
    const auto landscape = pixel_ranking(tiny.image, *tiny.classifier, tiny.baseline, singletons);
    const auto exact = exact_responsibilities(tiny);
    bool resp_ok = true;
    for (std::size_t p = 0; p < inst.n(); ++p) {
      const double diff = std::abs(exact[p] - landscape.scores[p]);
      worst = std::max(worst, diff);
      if (diff > 1e-12 || exact[p] != ref::ref_responsibility(inst, p)) resp_ok = false;
    }
    resp_bad += !resp_ok;

    const ExplanationRecord r =
        sufficient_contrastive(tiny.image, *tiny.classifier, tiny.baseline, delta, landscape);
    const auto minimal = minimal_sufficient_sets(tiny, delta);
    const auto ref_minimal = ref::ref_minimal_sets(
        inst.n(), [&](std::uint32_t m) { return ref::ref_sufficient(inst, m, delta); });
    const std::uint32_t s = ref::bits_of(r.sufficient);
    bool contains = false;
    for (const auto& m : minimal) {
      const std::uint32_t mb = ref::bits_of(m);
      const bool listed = std::find(ref_minimal.begin(), ref_minimal.end(), mb) != ref_minimal.end();
      if (listed && (mb & ~s) == 0) contains = true;
    }
    contain_bad += !contains || minimal.size() != ref_minimal.size();

    const PixelMask shrunk = shrink_minimal(tiny.image, *tiny.classifier, tiny.baseline,
                                            r.sufficient, MinimalityPredicate::sufficient(delta),
                                            landscape);
    std::size_t smallest = inst.n();
    for (std::uint32_t m : ref_minimal) smallest = std::min<std::size_t>(smallest, std::popcount(m));
    const bool shrink_ok = shrunk.cardinality() >= smallest &&
                           ref::ref_sufficient(inst, ref::bits_of(shrunk), delta) &&
                           shrunk.is_subset_of(r.sufficient);
    shrink_bad += !shrink_ok;
  }
  std::ostringstream detail;
  detail << instances << " instances, responsibility mismatches " << resp_bad
         << " (max diff " << worst << "), containment misses " << contain_bad
         << ", shrink below minimum " << shrink_bad;
  report("2 oracle equivalence", verdict_of(resp_bad + contain_bad + shrink_bad == 0),
         detail.str());
}

void completeness() {
  std::mt19937_64 rng(1003);
  ResponsibilityConfig config;
  config.iterations = 8;
  std::size_t misses = 0;
  const std::size_t total = 200;
  for (std::size_t i = 0; i < total; ++i) {
    const ref::RefInstance inst = ref::random_instance(rng);
    const double delta = kDeltas[rng() % 4];
    const auto model = model_for(inst);
    const BaselineSpec baseline = BaselineSpec::constant(inst.baseline);
    const auto landscape = pixel_ranking(inst.image(), *model, baseline, config);
    ExplanationRecord r = sufficient_contrastive(inst.image(), *model, baseline, delta, landscape);
    adjustment_discovery(inst.image(), *model, baseline, landscape, r);
    const ref::RefOutput orig = inst.original();
    const std::uint32_t complete = ref::bits_of(r.contrastive) | ref::bits_of(r.adjustment);
    const double conf = inst.with_kept(complete).conf[orig.label];
    if (rounded(conf, 4) != rounded(orig.conf[orig.label], 4) ||
        (ref::bits_of(r.adjustment) & ref::bits_of(r.sufficient)) != 0) {
      ++misses;
    }
  }

  // count-conf on an all-on 2 x 2 grid, delta 0.5: s = {p0}, then p1..p3
  // are needed to climb back from 0.5 to 0.875.
  const TinyInstance fixture = builtin_instance("count-conf");
  const auto landscape = pixel_ranking(fixture.image, *fixture.classifier, fixture.baseline, {});
  ExplanationRecord r =
      sufficient_contrastive(fixture.image, *fixture.classifier, fixture.baseline, 0.5, landscape);
  adjustment_discovery(fixture.image, *fixture.classifier, fixture.baseline, landscape, r);
  const bool fixture_ok = ref::bits_of(r.sufficient) == 0b0001 &&
                          ref::bits_of(r.adjustment) == 0b1110 &&
                          rounded(r.complete_confidence, 4) == 8750;
  std::ostringstream detail;
  detail << total - misses << "/" << total << " complete explanations match at 4 dp; count-conf a = {";
  for (PixelIndex p : r.adjustment.pixels()) detail << " p" << p;
  detail << " }";
  report("3 completeness", verdict_of(misses == 0 && fixture_ok), detail.str());
}

void termination() {
  std::mt19937_64 rng(1004);
  ResponsibilityConfig config;
  config.iterations = 8;
  std::size_t scan_ok = 0, adjust_ok = 0;
  const std::size_t total = 200;
  for (std::size_t i = 0; i < total; ++i) {
    const ref::RefInstance inst = ref::random_instance(rng);
    const auto model = model_for(inst);
    const BaselineSpec baseline = BaselineSpec::constant(inst.baseline);
    try {
      const auto landscape = pixel_ranking(inst.image(), *model, baseline, config);
      ExplanationRecord r = sufficient_contrastive(inst.image(), *model, baseline, 0.0, landscape);
      ++scan_ok;
      adjustment_discovery(inst.image(), *model, baseline, landscape, r);
      ++adjust_ok;
    } catch (const Error&) {
    }
  }
  bool rejected = false;
  const TinyInstance dark = builtin_instance("or2", 2, 2, 0.0f);
  try {
    const ResponsibilityLandscape flat{2, 2, std::vector<double>(4, 0.0)};
    sufficient_contrastive(dark.image, *dark.classifier, dark.baseline, 0.0, flat);
  } catch (const ConfigurationError&) {
    rejected = true;
  } catch (const Error&) {
  }
  std::ostringstream detail;
  detail << "scan returned " << scan_ok << "/" << total << ", adjustment returned " << adjust_ok
         << "/" << total << ", invalid baseline "
         << (rejected ? "raised ConfigurationError" : "was not rejected");
  report("4 termination", verdict_of(scan_ok == total && adjust_ok == total && rejected),
         detail.str());
}

void shift_invariance() {
  std::mt19937_64 rng(1005);
  constexpr float kShift = 0.25f;
  std::size_t mismatches = 0;
  const std::size_t total = 100;
  for (std::size_t i = 0; i < total; ++i) {
    const ref::RefInstance inst = ref::random_instance(rng);
    // Dyadic values survive the shift and its undoing exactly.
    std::vector<float> values = inst.values;
    for (float& v : values) v = std::round(v * 64.0f) / 64.0f;
    const ImageTensor image(inst.shape(), values);
    const double delta = kDeltas[rng() % 4];
    const auto plain = make_classifier(builtin_spec(inst.rule.name(), inst.shape()));
    if (!validate_baseline(*plain, image, BaselineSpec::constant(0.0f))) {
      --i;
      continue;
    }

    ClassifierSpec spec = builtin_spec(inst.rule.name(), inst.shape());
    spec.preprocessing.mean = {kShift};
    spec.preprocessing.value_range = ValueRange{kShift, 1.0f + kShift};
    const auto shifted = make_classifier(spec);
    std::vector<float> moved = values;
    for (float& v : moved) v += kShift;
    const ImageTensor shifted_image(inst.shape(), moved, spec.preprocessing.value_range);

    auto explain = [&](const Classifier& model, const ImageTensor& img, float b) {
      const BaselineSpec baseline = BaselineSpec::constant(b);
      ResponsibilityConfig config;
      config.seed = 5;
      config.iterations = 6;
      const auto landscape = pixel_ranking(img, model, baseline, config);
      ExplanationRecord r = sufficient_contrastive(img, model, baseline, delta, landscape);
      adjustment_discovery(img, model, baseline, landscape, r);
      return r;
    };
    const ExplanationRecord a = explain(*plain, image, 0.0f);
    const ExplanationRecord b = explain(*shifted, shifted_image, kShift);
    if (!(a.sufficient == b.sufficient && a.contrastive == b.contrastive &&
          a.adjustment == b.adjustment)) {
      ++mismatches;
    }
  }
  std::ostringstream detail;
  detail << mismatches << " of " << total << " shifted instances differ in s, c or a";
  report("5 shift invariance", verdict_of(mismatches == 0), detail.str());
}

void taxonomy_metric() {
  const auto dir = ref::data_dir() / "taxonomy";
  const TaxonomyTree tree =
      load_taxonomy(dir / "imagenet1k_edges.txt", dir / "imagenet1k_class_map.txt");
  std::mt19937_64 rng(1006);
  std::size_t bad = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto a = static_cast<std::uint32_t>(rng() % 1000);
    const auto b = static_cast<std::uint32_t>(rng() % 1000);
    const std::size_t ab = tree.shortest_path(a, b);
    const bool same_node = tree.node_of_class(a) == tree.node_of_class(b);
    if (ab != tree.shortest_path(b, a) || tree.shortest_path(a, a) != 0 || (ab == 0) != same_node) {
      ++bad;
    }
  }
  const std::size_t diameter = tree.class_diameter();
  std::ostringstream detail;
  detail << bad << " symmetry or identity violations in 10000 pairs; class diameter " << diameter
         << " (bound 24)";
  report("6 taxonomy", verdict_of(bad == 0 && diameter <= 24), detail.str());
}

// Directory contents with run timings and timestamps blanked.
std::map<std::string, std::string> snapshot(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = std::filesystem::relative(entry.path(), root).string();
    std::string bytes = ref::read_file(entry.path());
    const std::string name = entry.path().filename().string();
    if (name == "record.json" || name == "manifest.json") {
      auto doc = nlohmann::ordered_json::parse(bytes);
      if (doc.contains("run")) doc["run"].erase("wallclock_ms");
      doc.erase("started_at");
      bytes = doc.dump();
    } else if (name == "stats.csv") {
      std::istringstream in(bytes);
      std::string trimmed;
      for (std::string line; std::getline(in, line);) {
        trimmed += line.substr(0, line.rfind(',')) + "\n";
      }
      bytes = trimmed;
    }
    out[rel] = bytes;
  }
  return out;
}

void determinism_and_sweep() {
  ref::TempDir data("accept_data");
  ref::TempDir run_a("accept_a");
  ref::TempDir run_b("accept_b");
  std::mt19937_64 rng(1007);
  for (int i = 0; i < 3; ++i) {
    cv::Mat img(8, 8, CV_8UC1);
    for (int p = 0; p < 64; ++p) img.data[p] = (p == 0 || rng() % 2) ? 255 : 0;
    cv::imwrite((data / ("img" + std::to_string(i) + ".png")).string(), img);
  }
  const auto model = make_classifier(builtin_spec("count-conf", Shape{8, 8, 1}));
  RunConfig config;
  config.delta = 0.75;
  config.responsibility.seed = 1234;
  config.shrink = true;
  run_batch(data.path(), *model, config, run_a.path());
  config.workers = 3;
  config.responsibility.threads = 2;
  run_batch(data.path(), *model, config, run_b.path());
  const auto a = snapshot(run_a.path());
  const auto b = snapshot(run_b.path());
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) ++differing;
  }
  differing += a.size() != b.size();

  const Shape shape{224, 224, 3};
  const ImageTensor image(shape, 1.0f);
  auto ranking = std::make_shared<std::vector<PixelIndex>>(shape.pixels());
  for (PixelIndex p = 0; p < shape.pixels(); ++p) (*ranking)[p] = shape.pixels() - 1 - p;
  ContextStream stream(image, BaselineSpec::constant(0.0f), ranking, ContextMode::insertion);
  std::size_t contexts = 0;
  while (stream.advance()) ++contexts;
  const bool final_matches = stream.current() == image;

  std::ostringstream detail;
  detail << a.size() << " output files, " << differing << " differ between reruns; 224x224 sweep gave "
         << contexts << " insertion contexts";
  report("7 determinism and sweep size",
         verdict_of(differing == 0 && !a.empty() && contexts == 50176 && final_matches),
         detail.str());
}

std::filesystem::path from_env_or(const char* var, const std::filesystem::path& fallback) {
  const char* value = std::getenv(var);
  return value ? std::filesystem::path(value) : fallback;
}

void resnet_ladybug() {
  const auto models = ref::data_dir() / "models";
  const auto model_path = from_env_or("CAUSEX_RESNET50_ONNX", models / "resnet50.onnx");
  const auto image_path = from_env_or("CAUSEX_LADYBUG_IMAGE", models / "ladybug.jpg");
  if (!std::filesystem::exists(model_path) || !std::filesystem::exists(image_path)) {
    report("8 resnet50 ladybug", Verdict::skip,
           "no model at " + model_path.string() + " or no image at " + image_path.string());
    return;
  }
  const auto manifest = model_path.parent_path() / (model_path.stem().string() + ".manifest.json");
  const auto model = make_classifier(load_model_manifest(manifest, model_path));
  ref::TempDir out("accept_resnet");
  RunConfig config;
  config.responsibility.iterations = 4;
  config.responsibility.threads = 4;
  const RunOutcome outcome = run_single(image_path, *model, config, out.path());
  constexpr ClassLabel kLadybug = 301;
  const bool ok = outcome.status == RunStatus::ok && outcome.record &&
                  outcome.record->original_label == kLadybug &&
                  !outcome.record->sufficient.empty() &&
                  outcome.record->sufficient.cardinality() < outcome.record->sufficient.size();
  std::ostringstream detail;
  detail << "status " << to_string(outcome.status);
  if (outcome.record) {
    detail << ", label " << outcome.record->original_label << ", sufficient "
           << outcome.record->sufficient.cardinality() << " of "
           << outcome.record->sufficient.size() << " pixels";
  } else {
    detail << ": " << outcome.reason;
  }
  report("8 resnet50 ladybug", verdict_of(ok), detail.str());
}

template <typename F>
void guarded(const std::string& id, F&& check) {
  try {
    check();
  } catch (const std::exception& e) {
    report(id, Verdict::fail, std::string("threw: ") + e.what());
  }
}

}  // namespace

int main() {
  guarded("1 scan postconditions", scan_postconditions);
  guarded("2 oracle equivalence", oracle_equivalence);
  guarded("3 completeness", completeness);
  guarded("4 termination", termination);
  guarded("5 shift invariance", shift_invariance);
  guarded("6 taxonomy", taxonomy_metric);
  guarded("7 determinism and sweep size", determinism_and_sweep);
  guarded("8 resnet50 ladybug", resnet_ladybug);
  return failures == 0 ? 0 : 1;
}

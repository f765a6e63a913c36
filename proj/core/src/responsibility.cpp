#include "causex/responsibility.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "causex/error.hpp"

namespace causex {

namespace {

// Cut offset in [1, length - 1]. Modulo keeps the stream portable across
// standard libraries (distributions are implementation-defined).
std::size_t draw_cut(std::size_t length, std::mt19937_64& rng) {
  return 1 + static_cast<std::size_t>(rng() % (length - 1));
}

void fill_rect(std::vector<double>& scores, std::size_t width, const Rect& rect, double value) {
  for (std::size_t r = rect.row0; r < rect.row1; ++r) {
    for (std::size_t c = rect.col0; c < rect.col1; ++c) scores[r * width + c] = value;
  }
}

void add_rect(PixelMask& mask, const Rect& rect) {
  for (std::size_t r = rect.row0; r < rect.row1; ++r) {
    for (std::size_t c = rect.col0; c < rect.col1; ++c) mask.set(r * mask.width() + c);
  }
}

struct Task {
  Rect rect;
  PixelMask context;
  double chain = 1.0;
  std::uint32_t depth = 0;
  PartitionNode* node = nullptr;
};

struct Split {
  std::size_t task = 0;
  std::vector<Rect> parts;
  std::vector<std::uint8_t> pass;
};

class IterationRunner {
 public:
  IterationRunner(const ImageTensor& image, const Classifier& classifier,
                  const BaselineSpec& baseline, const ResponsibilityConfig& config,
                  ClassLabel label)
      : image_(image), classifier_(classifier), baseline_(baseline), config_(config),
        label_(label) {}

  // Fills pass[S] (S != 0) for every split by classifying context ∪ parts(S).
  void evaluate(std::vector<Split>& splits, const std::vector<Task>& tasks) const {
    struct Job {
      std::size_t split;
      std::uint32_t subset;
    };
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < splits.size(); ++s) {
      const std::uint32_t combos = 1u << splits[s].parts.size();
      splits[s].pass.assign(combos, 0);
      for (std::uint32_t subset = 1; subset < combos; ++subset) jobs.push_back({s, subset});
    }
    const std::size_t chunk = std::max<std::size_t>(1, config_.batch_size);
    std::vector<ImageTensor> batch;
    for (std::size_t begin = 0; begin < jobs.size(); begin += chunk) {
      const std::size_t end = std::min(jobs.size(), begin + chunk);
      batch.clear();
      for (std::size_t j = begin; j < end; ++j) {
        const Split& split = splits[jobs[j].split];
        PixelMask mask = tasks[split.task].context;
        for (std::size_t i = 0; i < split.parts.size(); ++i) {
          if ((jobs[j].subset >> i) & 1u) add_rect(mask, split.parts[i]);
        }
        batch.push_back(compose(image_, mask, baseline_));
      }
      const auto outputs = classifier_.classify_batch(batch);
      for (std::size_t j = begin; j < end; ++j) {
        splits[jobs[j].split].pass[jobs[j].subset] = outputs[j - begin].label == label_ ? 1 : 0;
      }
    }
  }

  std::vector<double> run_random(std::uint32_t iteration, PartitionNode& root) const {
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed),
                      static_cast<std::uint32_t>(config_.seed >> 32), iteration};
    std::mt19937_64 rng(seq);

    const std::size_t width = image_.width();
    std::vector<double> scores(image_.pixel_count(), 0.0);
    root = PartitionNode{Rect{0, 0, image_.height(), width}, {}, 1.0};

    std::vector<Task> level;
    level.push_back(Task{root.rect, PixelMask(image_.height(), width), 1.0, 0, &root});
    while (!level.empty()) {
      std::vector<Split> splits;
      for (std::size_t t = 0; t < level.size(); ++t) {
        const Task& task = level[t];
        const bool stop = task.rect.area() <= config_.min_area ||
                          (config_.depth_limit != 0 && task.depth >= config_.depth_limit);
        std::vector<Rect> parts;
        if (!stop) parts = split_rect(task.rect, config_.branching, rng);
        if (parts.size() < 2) {
          fill_rect(scores, width, task.rect, task.chain);
          continue;
        }
        splits.push_back(Split{t, std::move(parts), {}});
      }
      if (splits.empty()) break;
      evaluate(splits, level);

      struct Candidate {
        Task task;
        double part_score;
      };
      std::vector<Candidate> candidates;
      for (const Split& split : splits) {
        const Task& parent = level[split.task];
        const std::size_t m = split.parts.size();
        std::vector<std::uint32_t> witness;
        const auto resp = part_responsibility(split.pass, m, &witness);
        const std::uint32_t full = (1u << m) - 1;
        parent.node->children.resize(m);
        for (std::size_t i = 0; i < m; ++i) {
          PartitionNode& child = parent.node->children[i];
          child.rect = split.parts[i];
          child.score = resp[i];
          const double chain = parent.chain * resp[i];
          if (resp[i] > config_.refine_threshold) {
            PixelMask context = parent.context;
            const std::uint32_t kept = full & ~witness[i] & ~(1u << i);
            for (std::size_t j = 0; j < m; ++j) {
              if ((kept >> j) & 1u) add_rect(context, split.parts[j]);
            }
            candidates.push_back(
                {Task{split.parts[i], std::move(context), chain, parent.depth + 1, &child}, resp[i]});
          } else {
            fill_rect(scores, width, split.parts[i], chain);
          }
        }
      }
      // Highest chain first; creation order breaks ties.
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const Candidate& a, const Candidate& b) {
                         return a.task.chain > b.task.chain;
                       });
      std::vector<Task> next;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (i < config_.refine_limit) {
          next.push_back(std::move(candidates[i].task));
        } else {
          fill_rect(scores, width, candidates[i].task.rect, candidates[i].task.chain);
        }
      }
      level = std::move(next);
    }
    return scores;
  }

  std::vector<double> run_singletons(PartitionNode& root) const {
    const std::size_t n = image_.pixel_count();
    if (n > 16) {
      throw InputError("singleton partition needs at most 16 pixels, image has " +
                       std::to_string(n));
    }
    root = PartitionNode{Rect{0, 0, image_.height(), image_.width()}, {}, 1.0};
    std::vector<Task> tasks{Task{root.rect, PixelMask(image_.height(), image_.width()), 1.0, 0, &root}};
    Split split;
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t r = p / image_.width();
      const std::size_t c = p % image_.width();
      split.parts.push_back(Rect{r, c, r + 1, c + 1});
    }
    std::vector<Split> splits{std::move(split)};
    evaluate(splits, tasks);
    auto scores = part_responsibility(splits[0].pass, n);
    for (std::size_t p = 0; p < n; ++p) {
      root.children.push_back(PartitionNode{splits[0].parts[p], {}, scores[p]});
    }
    return scores;
  }

 private:
  const ImageTensor& image_;
  const Classifier& classifier_;
  const BaselineSpec& baseline_;
  const ResponsibilityConfig& config_;
  ClassLabel label_;
};

}  // namespace

std::vector<Rect> split_rect(const Rect& rect, std::uint32_t branching, std::mt19937_64& rng) {
  if (branching != 2 && branching != 4) {
    throw InputError("branching must be 2 or 4, got " + std::to_string(branching));
  }
  const bool cut_rows_allowed = rect.rows() >= 2;
  const bool cut_cols_allowed = rect.cols() >= 2;
  bool cut_rows = cut_rows_allowed;
  bool cut_cols = cut_cols_allowed;
  if (branching == 2 && cut_rows && cut_cols) {
    // One cut, across the longer side (rows on ties).
    cut_cols = rect.cols() > rect.rows();
    cut_rows = !cut_cols;
  }
  if (!cut_rows && !cut_cols) return {rect};

  std::vector<std::size_t> row_edges{rect.row0};
  if (cut_rows) row_edges.push_back(rect.row0 + draw_cut(rect.rows(), rng));
  row_edges.push_back(rect.row1);
  std::vector<std::size_t> col_edges{rect.col0};
  if (cut_cols) col_edges.push_back(rect.col0 + draw_cut(rect.cols(), rng));
  col_edges.push_back(rect.col1);

  std::vector<Rect> parts;
  for (std::size_t r = 0; r + 1 < row_edges.size(); ++r) {
    for (std::size_t c = 0; c + 1 < col_edges.size(); ++c) {
      parts.push_back(Rect{row_edges[r], col_edges[c], row_edges[r + 1], col_edges[c + 1]});
    }
  }
  return parts;
}

std::vector<double> part_responsibility(std::span<const std::uint8_t> pass, std::size_t parts,
                                        std::vector<std::uint32_t>* witness) {
  if (parts == 0 || parts > 20) throw InputError("part count must be in [1, 20]");
  const std::uint32_t full = (1u << parts) - 1;
  if (pass.size() != std::size_t{full} + 1) throw InputError("pass table has the wrong size");

  std::vector<double> out(parts, 0.0);
  if (witness) witness->assign(parts, full);
  for (std::size_t i = 0; i < parts; ++i) {
    const std::uint32_t bit = 1u << i;
    int best = std::numeric_limits<int>::max();
    std::uint32_t best_witness = full;
    // W ranges over subsets of the other parts; kept = full \ W always holds i.
    for (std::uint32_t removed = 0; removed <= full; ++removed) {
      if (removed & bit) continue;
      const std::uint32_t kept = full & ~removed;
      if (!pass[kept] || pass[kept & ~bit]) continue;
      const int k = std::popcount(removed);
      if (k < best) {
        best = k;
        best_witness = removed;
      }
    }
    if (best != std::numeric_limits<int>::max()) {
      out[i] = 1.0 / (1.0 + static_cast<double>(best));
      if (witness) (*witness)[i] = best_witness;
    }
  }
  return out;
}

ResponsibilityLandscape pixel_ranking(const ImageTensor& image, const Classifier& classifier,
                                      const BaselineSpec& baseline,
                                      const ResponsibilityConfig& config,
                                      std::vector<PartitionNode>* trees) {
  if (config.iterations == 0) throw InputError("iterations must be >= 1");
  if (!validate_baseline(classifier, image, baseline)) {
    throw ConfigurationError("baseline is classified like the image; it cannot act as occlusion");
  }
  const ClassLabel label = classifier.classify(image).label;
  const IterationRunner runner(image, classifier, baseline, config, label);

  ResponsibilityLandscape landscape;
  landscape.height = image.height();
  landscape.width = image.width();
  landscape.seed = config.seed;
  landscape.iterations = config.iterations;

  if (config.scheme == PartitionScheme::singletons) {
    PartitionNode root;
    landscape.scores = runner.run_singletons(root);
    if (trees) *trees = {std::move(root)};
  } else {
    std::vector<std::vector<double>> per_iteration(config.iterations);
    std::vector<PartitionNode> roots(config.iterations);
    std::atomic<std::uint32_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
      for (std::uint32_t it; (it = next.fetch_add(1)) < config.iterations;) {
        try {
          per_iteration[it] = runner.run_random(it, roots[it]);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    const std::size_t threads =
        std::clamp<std::size_t>(config.threads, 1, config.iterations);
    if (threads == 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    // Summation in iteration order keeps the mean bit-identical under threading.
    landscape.scores.assign(image.pixel_count(), 0.0);
    for (const auto& scores : per_iteration) {
      for (std::size_t p = 0; p < scores.size(); ++p) landscape.scores[p] += scores[p];
    }
    for (double& s : landscape.scores) s /= static_cast<double>(config.iterations);
    if (trees) *trees = std::move(roots);
  }
  landscape.degenerate =
      std::all_of(landscape.scores.begin(), landscape.scores.end(), [](double s) { return s == 0.0; });
  return landscape;
}

std::vector<PixelIndex> rank_pixels(const ResponsibilityLandscape& landscape, RankOrder order) {
  std::vector<PixelIndex> ranking(landscape.scores.size());
  for (std::size_t p = 0; p < ranking.size(); ++p) ranking[p] = p;
  const auto& s = landscape.scores;
  if (order == RankOrder::high_to_low) {
    std::stable_sort(ranking.begin(), ranking.end(),
                     [&](PixelIndex a, PixelIndex b) { return s[a] > s[b]; });
  } else {
    std::stable_sort(ranking.begin(), ranking.end(),
                     [&](PixelIndex a, PixelIndex b) { return s[a] < s[b]; });
  }
  return ranking;
}

void write_landscape(const ResponsibilityLandscape& landscape, const std::filesystem::path& stem) {
  auto bin_path = stem;
  bin_path += ".bin";
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error("cannot write " + bin_path.string());
  for (double s : landscape.scores) {
    const float f = static_cast<float>(s);
    bin.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
  auto json_path = stem;
  json_path += ".json";
  std::ofstream meta(json_path);
  if (!meta) throw Error("cannot write " + json_path.string());
  const nlohmann::json j = {{"height", landscape.height},
                            {"width", landscape.width},
                            {"dtype", "float32"},
                            {"byte_order", "little"},
                            {"layout", "row-major"},
                            {"seed", landscape.seed},
                            {"iterations", landscape.iterations},
                            {"degenerate", landscape.degenerate}};
  meta << j.dump(2) << '\n';
}

ResponsibilityLandscape read_landscape(const std::filesystem::path& stem) {
  auto json_path = stem;
  json_path += ".json";
  std::ifstream meta(json_path);
  if (!meta) throw InputError("cannot read " + json_path.string());
  const auto j = nlohmann::json::parse(meta);
  ResponsibilityLandscape landscape;
  landscape.height = j.at("height").get<std::size_t>();
  landscape.width = j.at("width").get<std::size_t>();
  landscape.seed = j.at("seed").get<std::uint64_t>();
  landscape.iterations = j.at("iterations").get<std::uint32_t>();
  landscape.degenerate = j.value("degenerate", false);
  auto bin_path = stem;
  bin_path += ".bin";
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw InputError("cannot read " + bin_path.string());
  landscape.scores.resize(landscape.height * landscape.width);
  for (double& s : landscape.scores) {
    float f = 0.0f;
    if (!bin.read(reinterpret_cast<char*>(&f), sizeof f)) {
      throw InputError(bin_path.string() + " is truncated");
    }
    s = f;
  }
  return landscape;
}

void write_heatmap_png(const ResponsibilityLandscape& landscape,
                       const std::filesystem::path& path) {
  const double top = landscape.scores.empty()
                         ? 0.0
                         : *std::max_element(landscape.scores.begin(), landscape.scores.end());
  cv::Mat img(static_cast<int>(landscape.height), static_cast<int>(landscape.width), CV_8UC1);
  for (std::size_t p = 0; p < landscape.scores.size(); ++p) {
    const double v = top > 0.0 ? landscape.scores[p] / top : 0.0;
    img.at<std::uint8_t>(static_cast<int>(p / landscape.width),
                         static_cast<int>(p % landscape.width)) =
        static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  if (!cv::imwrite(path.string(), img)) throw Error("cannot write " + path.string());
}

}  // namespace causex

#include "causex/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>

#include "causex/error.hpp"

namespace causex {

namespace {

// Outcome of inserting every keep-set over the baseline, indexed by bitmask.
struct KeepTable {
  std::size_t pixels = 0;
  ClassLabel original_label = 0;
  double original_confidence = 0.0;
  std::vector<ClassLabel> label;
  std::vector<double> confidence;  // of original_label

  std::uint32_t full() const { return (1u << pixels) - 1; }
};

KeepTable tabulate(const TinyInstance& instance) {
  instance.validate();
  const ImageTensor& image = instance.image;
  KeepTable table;
  table.pixels = image.pixel_count();
  const std::uint32_t count = 1u << table.pixels;
  table.label.resize(count);
  table.confidence.resize(count);

  const auto original = instance.classifier->classify(image);
  table.original_label = original.label;
  table.original_confidence = original.confidence();

  constexpr std::uint32_t kBatch = 1024;
  std::vector<ImageTensor> batch;
  for (std::uint32_t begin = 0; begin < count; begin += kBatch) {
    const std::uint32_t end = std::min(count, begin + kBatch);
    batch.clear();
    for (std::uint32_t bits = begin; bits < end; ++bits) {
      ImageTensor mutant = image;
      for (std::size_t p = 0; p < table.pixels; ++p) {
        if (!((bits >> p) & 1u)) {
          auto px = mutant.mutable_pixel(p);
          for (std::size_t c = 0; c < px.size(); ++c) px[c] = instance.baseline.value_for(c);
        }
      }
      batch.push_back(std::move(mutant));
    }
    const auto outputs = instance.classifier->classify_batch(batch);
    for (std::uint32_t bits = begin; bits < end; ++bits) {
      table.label[bits] = outputs[bits - begin].label;
      table.confidence[bits] = outputs[bits - begin].confidence_of(original.label);
    }
  }
  return table;
}

// All masks over n bits by cardinality, then numeric value.
std::vector<std::uint32_t> enumeration_order(std::size_t n) {
  std::vector<std::uint32_t> order(std::size_t{1} << n);
  for (std::uint32_t m = 0; m < order.size(); ++m) order[m] = m;
  std::stable_sort(order.begin(), order.end(), [](std::uint32_t a, std::uint32_t b) {
    return std::popcount(a) < std::popcount(b);
  });
  return order;
}

template <typename Predicate>
std::vector<PixelMask> minimal_sets(const TinyInstance& instance, std::size_t n, Predicate holds) {
  std::vector<std::uint32_t> found;
  for (std::uint32_t m : enumeration_order(n)) {
    if (!holds(m)) continue;
    const bool has_smaller = std::any_of(found.begin(), found.end(),
                                         [m](std::uint32_t f) { return (f & m) == f; });
    if (!has_smaller) found.push_back(m);
  }
  std::vector<PixelMask> out;
  for (std::uint32_t m : found) {
    out.push_back(PixelMask::from_bits(instance.image.height(), instance.image.width(), m));
  }
  return out;
}

}  // namespace

void TinyInstance::validate() const {
  if (!classifier) throw InputError("tiny instance has no classifier");
  if (image.pixel_count() > kOracleMaxPixels) {
    throw RefusalError("oracle refuses instances above " + std::to_string(kOracleMaxPixels) +
                       " pixels (got " + std::to_string(image.pixel_count()) +
                       "); exact explanation search is intractable at scale");
  }
  if (image.shape() != classifier->spec().input_shape) {
    throw InputError("tiny instance image does not match its classifier");
  }
  baseline.validate_for(image.shape(), image.range());
}

TinyInstance builtin_instance(const std::string& classifier_name, std::size_t height,
                              std::size_t width, float fill) {
  const Shape shape{height, width, 1};
  TinyInstance instance{classifier_name, ImageTensor(shape, fill),
                        make_classifier(builtin_spec(classifier_name, shape)),
                        BaselineSpec::constant(0.0f)};
  instance.validate();
  return instance;
}

std::vector<PixelMask> minimal_sufficient_sets(const TinyInstance& instance, double delta) {
  const KeepTable table = tabulate(instance);
  const double floor = delta * table.original_confidence;
  return minimal_sets(instance, table.pixels, [&](std::uint32_t keep) {
    return table.label[keep] == table.original_label && table.confidence[keep] >= floor;
  });
}

std::vector<PixelMask> minimal_contrastive_sets(const TinyInstance& instance) {
  const KeepTable table = tabulate(instance);
  const std::uint32_t full = table.full();
  return minimal_sets(instance, table.pixels, [&](std::uint32_t occluded) {
    return table.label[full & ~occluded] != table.original_label;
  });
}

namespace {

double responsibility_from_table(const KeepTable& table, PixelIndex pixel) {
  const std::uint32_t full = table.full();
  const std::uint32_t bit = 1u << pixel;
  for (std::uint32_t witness : enumeration_order(table.pixels)) {
    if (witness & bit) continue;
    const std::uint32_t kept = full & ~witness;
    if (table.label[kept] == table.original_label &&
        table.label[kept & ~bit] != table.original_label) {
      return 1.0 / (1.0 + static_cast<double>(std::popcount(witness)));
    }
  }
  return 0.0;
}

}  // namespace

double exact_responsibility(const TinyInstance& instance, PixelIndex pixel) {
  if (pixel >= instance.image.pixel_count()) throw InputError("pixel index out of range");
  return responsibility_from_table(tabulate(instance), pixel);
}

std::vector<double> exact_responsibilities(const TinyInstance& instance) {
  const KeepTable table = tabulate(instance);
  std::vector<double> out(table.pixels);
  for (std::size_t p = 0; p < table.pixels; ++p) out[p] = responsibility_from_table(table, p);
  return out;
}

}  // namespace causex

#include "causex/imagery.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "causex/error.hpp"

namespace causex {

namespace {

void require_shape(const Shape& shape) {
  if (shape.height == 0 || shape.width == 0 || shape.channels == 0) {
    throw InputError("image dimensions must be positive");
  }
}

void require_mask_matches(const ImageTensor& image, const PixelMask& mask) {
  if (mask.height() != image.height() || mask.width() != image.width()) {
    throw InputError("mask is " + std::to_string(mask.height()) + "x" +
                     std::to_string(mask.width()) + " but image is " +
                     std::to_string(image.height()) + "x" + std::to_string(image.width()));
  }
}

}  // namespace

ImageTensor::ImageTensor(Shape shape, std::vector<float> data, ValueRange range)
    : shape_(shape), range_(range), data_(std::move(data)) {
  require_shape(shape_);
  if (data_.size() != shape_.elements()) {
    throw InputError("image data holds " + std::to_string(data_.size()) +
                     " values, shape needs " + std::to_string(shape_.elements()));
  }
}

ImageTensor::ImageTensor(Shape shape, float fill, ValueRange range)
    : shape_(shape), range_(range), data_(shape.elements(), fill) {
  require_shape(shape_);
}

void ImageTensor::validate() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const float v = data_[i];
    if (!std::isfinite(v)) {
      throw InputError("non-finite pixel value at element " + std::to_string(i));
    }
    if (!range_.contains(v)) {
      throw InputError("pixel value " + std::to_string(v) + " outside [" +
                       std::to_string(range_.lo) + ", " + std::to_string(range_.hi) + "]");
    }
  }
}

PixelMask::PixelMask(std::size_t height, std::size_t width)
    : height_(height), width_(width), bits_(height * width, 0) {}

PixelMask PixelMask::full(std::size_t height, std::size_t width) {
  PixelMask mask(height, width);
  std::fill(mask.bits_.begin(), mask.bits_.end(), std::uint8_t{1});
  mask.cardinality_ = mask.bits_.size();
  return mask;
}

PixelMask PixelMask::from_pixels(std::size_t height, std::size_t width,
                                 std::span<const PixelIndex> pixels) {
  PixelMask mask(height, width);
  for (PixelIndex p : pixels) {
    if (p >= mask.size()) {
      throw InputError("pixel index " + std::to_string(p) + " out of range");
    }
    mask.set(p);
  }
  return mask;
}

PixelMask PixelMask::from_bits(std::size_t height, std::size_t width, std::uint64_t bits) {
  PixelMask mask(height, width);
  if (mask.size() > 64) {
    throw InputError("from_bits supports at most 64 pixels");
  }
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if ((bits >> p) & 1u) mask.set(p);
  }
  return mask;
}

void PixelMask::set(PixelIndex p) {
  if (!bits_[p]) {
    bits_[p] = 1;
    ++cardinality_;
  }
}

void PixelMask::reset(PixelIndex p) {
  if (bits_[p]) {
    bits_[p] = 0;
    --cardinality_;
  }
}

std::vector<PixelIndex> PixelMask::pixels() const {
  std::vector<PixelIndex> out;
  out.reserve(cardinality_);
  for (std::size_t p = 0; p < bits_.size(); ++p) {
    if (bits_[p]) out.push_back(p);
  }
  return out;
}

std::uint64_t PixelMask::to_bits() const {
  if (bits_.size() > 64) {
    throw InputError("to_bits supports at most 64 pixels");
  }
  std::uint64_t out = 0;
  for (std::size_t p = 0; p < bits_.size(); ++p) {
    if (bits_[p]) out |= std::uint64_t{1} << p;
  }
  return out;
}

void PixelMask::require_same_dims(const PixelMask& other) const {
  if (height_ != other.height_ || width_ != other.width_) {
    throw InputError("mask dimensions differ");
  }
}

PixelMask PixelMask::complement() const {
  PixelMask out(height_, width_);
  for (std::size_t p = 0; p < bits_.size(); ++p) {
    if (!bits_[p]) out.set(p);
  }
  return out;
}

PixelMask PixelMask::united(const PixelMask& other) const {
  require_same_dims(other);
  PixelMask out = *this;
  for (std::size_t p = 0; p < bits_.size(); ++p) {
    if (other.bits_[p]) out.set(p);
  }
  return out;
}

PixelMask PixelMask::intersected(const PixelMask& other) const {
  require_same_dims(other);
  PixelMask out(height_, width_);
  for (std::size_t p = 0; p < bits_.size(); ++p) {
    if (bits_[p] && other.bits_[p]) out.set(p);
  }
  return out;
}

bool PixelMask::is_subset_of(const PixelMask& other) const {
  require_same_dims(other);
  for (std::size_t p = 0; p < bits_.size(); ++p) {
    if (bits_[p] && !other.bits_[p]) return false;
  }
  return true;
}

bool PixelMask::disjoint_from(const PixelMask& other) const {
  require_same_dims(other);
  for (std::size_t p = 0; p < bits_.size(); ++p) {
    if (bits_[p] && other.bits_[p]) return false;
  }
  return true;
}

BaselineSpec BaselineSpec::constant(float value) {
  BaselineSpec b;
  b.kind_ = Kind::constant;
  b.values_ = {value};
  return b;
}

BaselineSpec BaselineSpec::per_channel(std::vector<float> values) {
  if (values.empty()) {
    throw InputError("per-channel baseline needs at least one value");
  }
  BaselineSpec b;
  b.kind_ = Kind::per_channel;
  b.values_ = std::move(values);
  return b;
}

BaselineSpec BaselineSpec::shifted(std::span<const float> offset) const {
  if (offset.empty()) return *this;
  if (kind_ == Kind::constant) {
    if (std::any_of(offset.begin(), offset.end(),
                    [&](float o) { return o != offset.front(); })) {
      std::vector<float> values;
      for (float o : offset) values.push_back(values_.front() + o);
      return per_channel(std::move(values));
    }
    return constant(values_.front() + offset.front());
  }
  if (offset.size() != values_.size()) {
    throw InputError("baseline shift has wrong channel count");
  }
  std::vector<float> values = values_;
  for (std::size_t c = 0; c < values.size(); ++c) values[c] += offset[c];
  return per_channel(std::move(values));
}

void BaselineSpec::validate_for(const Shape& shape, const ValueRange& range) const {
  if (kind_ == Kind::per_channel && values_.size() != shape.channels) {
    throw InputError("baseline has " + std::to_string(values_.size()) +
                     " channel values, image has " + std::to_string(shape.channels));
  }
  for (float v : values_) {
    if (!std::isfinite(v) || !range.contains(v)) {
      throw InputError("baseline value " + std::to_string(v) + " outside the image range");
    }
  }
}

ImageTensor baseline_image(const Shape& shape, const ValueRange& range,
                           const BaselineSpec& baseline) {
  ImageTensor out(shape, 0.0f, range);
  auto data = out.mutable_data();
  for (std::size_t p = 0; p < shape.pixels(); ++p) {
    for (std::size_t c = 0; c < shape.channels; ++c) {
      data[p * shape.channels + c] = baseline.value_for(c);
    }
  }
  return out;
}

ImageTensor compose(const ImageTensor& image, const PixelMask& mask,
                    const BaselineSpec& baseline) {
  require_mask_matches(image, mask);
  ImageTensor out = baseline_image(image.shape(), image.range(), baseline);
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    if (mask.test(p)) {
      std::ranges::copy(image.pixel(p), out.mutable_pixel(p).begin());
    }
  }
  return out;
}

ImageTensor occlude(const ImageTensor& image, const PixelMask& mask,
                    const BaselineSpec& baseline) {
  require_mask_matches(image, mask);
  ImageTensor out = image;
  const std::size_t channels = image.channels();
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    if (mask.test(p)) {
      auto px = out.mutable_pixel(p);
      for (std::size_t c = 0; c < channels; ++c) px[c] = baseline.value_for(c);
    }
  }
  return out;
}

ContextCursor::ContextCursor(std::shared_ptr<const std::vector<PixelIndex>> ranking,
                             ContextMode mode, std::size_t position)
    : ranking_(std::move(ranking)), mode_(mode), position_(position) {
  if (!ranking_) throw InputError("context cursor needs a ranking");
  if (position_ > ranking_->size()) throw InputError("cursor position past ranking end");
}

std::optional<std::pair<ContextCursor, ImageTensor>> advance(const ContextCursor& cursor,
                                                             const ImageTensor& image,
                                                             const BaselineSpec& baseline) {
  if (cursor.exhausted()) return std::nullopt;
  const auto& ranking = *cursor.ranking_;
  if (ranking.size() != image.pixel_count()) {
    throw InputError("ranking does not cover the image");
  }
  const std::size_t k = cursor.position_ + 1;
  PixelMask prefix = PixelMask::from_pixels(image.height(), image.width(),
                                            std::span(ranking).first(k));
  ImageTensor context = cursor.mode_ == ContextMode::insertion
                            ? compose(image, prefix, baseline)
                            : occlude(image, prefix, baseline);
  return std::make_pair(ContextCursor(cursor.ranking_, cursor.mode_, k), std::move(context));
}

ContextStream::ContextStream(const ImageTensor& image, const BaselineSpec& baseline,
                             std::shared_ptr<const std::vector<PixelIndex>> ranking,
                             ContextMode mode)
    : image_(&image),
      baseline_(baseline),
      ranking_(std::move(ranking)),
      mode_(mode),
      current_(mode == ContextMode::insertion
                   ? baseline_image(image.shape(), image.range(), baseline)
                   : image) {
  if (!ranking_ || ranking_->size() != image.pixel_count()) {
    throw InputError("ranking does not cover the image");
  }
}

bool ContextStream::advance() {
  if (position_ >= ranking_->size()) return false;
  const PixelIndex p = (*ranking_)[position_++];
  auto dst = current_.mutable_pixel(p);
  if (mode_ == ContextMode::insertion) {
    std::ranges::copy(image_->pixel(p), dst.begin());
  } else {
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = baseline_.value_for(c);
  }
  return true;
}

void write_mask_png(const PixelMask& mask, const std::filesystem::path& path) {
  cv::Mat img(static_cast<int>(mask.height()), static_cast<int>(mask.width()), CV_8UC1);
  for (std::size_t p = 0; p < mask.size(); ++p) {
    img.at<std::uint8_t>(static_cast<int>(p / mask.width()), static_cast<int>(p % mask.width())) =
        mask.test(p) ? 255 : 0;
  }
  if (!cv::imwrite(path.string(), img)) {
    throw Error("cannot write " + path.string());
  }
}

PixelMask read_mask_png(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw InputError("cannot read mask " + path.string());
  PixelMask mask(static_cast<std::size_t>(img.rows), static_cast<std::size_t>(img.cols));
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < img.cols; ++c) {
      if (img.at<std::uint8_t>(r, c) >= 128) mask.set(static_cast<PixelIndex>(r) * img.cols + c);
    }
  }
  return mask;
}

}  // namespace causex

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace causex {

// Row-major index of a pixel: row * width + col.
using PixelIndex = std::size_t;

struct ValueRange {
  float lo = 0.0f;
  float hi = 1.0f;

  bool contains(float v) const { return v >= lo && v <= hi; }
  bool operator==(const ValueRange&) const = default;
};

struct Shape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t pixels() const { return height * width; }
  std::size_t elements() const { return height * width * channels; }
  bool operator==(const Shape&) const = default;
};

// H x W x C float image, channels interleaved (HWC).
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(Shape shape, std::vector<float> data, ValueRange range = {});
  // Every element set to `fill`.
  ImageTensor(Shape shape, float fill, ValueRange range = {});

  const Shape& shape() const { return shape_; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t pixel_count() const { return shape_.pixels(); }
  const ValueRange& range() const { return range_; }

  std::span<const float> data() const { return data_; }
  std::span<float> mutable_data() { return data_; }

  std::span<const float> pixel(PixelIndex p) const {
    return std::span<const float>(data_).subspan(p * shape_.channels, shape_.channels);
  }
  std::span<float> mutable_pixel(PixelIndex p) {
    return std::span<float>(data_).subspan(p * shape_.channels, shape_.channels);
  }
  float at(std::size_t row, std::size_t col, std::size_t ch) const {
    return data_[(row * shape_.width + col) * shape_.channels + ch];
  }

  // Throws InputError unless every value is finite and inside range().
  void validate() const;

  bool operator==(const ImageTensor&) const = default;

 private:
  Shape shape_;
  ValueRange range_;
  std::vector<float> data_;
};

// Set of pixels over an H x W grid. A bit governs every channel of its pixel.
class PixelMask {
 public:
  PixelMask() = default;
  PixelMask(std::size_t height, std::size_t width);

  static PixelMask full(std::size_t height, std::size_t width);
  static PixelMask from_pixels(std::size_t height, std::size_t width,
                               std::span<const PixelIndex> pixels);
  // Bit i of `bits` is pixel i; at most 64 pixels.
  static PixelMask from_bits(std::size_t height, std::size_t width, std::uint64_t bits);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return bits_.size(); }
  std::size_t cardinality() const { return cardinality_; }
  bool empty() const { return cardinality_ == 0; }

  bool test(PixelIndex p) const { return bits_[p] != 0; }
  void set(PixelIndex p);
  void reset(PixelIndex p);

  std::vector<PixelIndex> pixels() const;
  std::uint64_t to_bits() const;

  PixelMask complement() const;
  PixelMask united(const PixelMask& other) const;
  PixelMask intersected(const PixelMask& other) const;
  bool is_subset_of(const PixelMask& other) const;
  bool disjoint_from(const PixelMask& other) const;

  bool operator==(const PixelMask& other) const {
    return height_ == other.height_ && width_ == other.width_ && bits_ == other.bits_;
  }

 private:
  void require_same_dims(const PixelMask& other) const;

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
  std::size_t cardinality_ = 0;
};

// Occlusion value substituted for pixels outside a mask.
class BaselineSpec {
 public:
  enum class Kind { constant, per_channel };

  static BaselineSpec constant(float value);
  static BaselineSpec per_channel(std::vector<float> values);

  Kind kind() const { return kind_; }
  std::span<const float> values() const { return values_; }
  float value_for(std::size_t channel) const {
    return kind_ == Kind::constant ? values_.front() : values_[channel];
  }
  // Baseline moved by `offset[c]` per channel (scalar offset for constant kind
  // requires a uniform offset).
  BaselineSpec shifted(std::span<const float> offset) const;

  // Throws InputError when channel count mismatches or a value is non-finite
  // or outside `range`.
  void validate_for(const Shape& shape, const ValueRange& range) const;

  bool operator==(const BaselineSpec&) const = default;

 private:
  Kind kind_ = Kind::constant;
  std::vector<float> values_{0.0f};
};

// Image with every pixel set to the baseline.
ImageTensor baseline_image(const Shape& shape, const ValueRange& range,
                           const BaselineSpec& baseline);

// Pixels in `mask` keep their image value; all others take the baseline.
ImageTensor compose(const ImageTensor& image, const PixelMask& mask,
                    const BaselineSpec& baseline);

// Pixels in `mask` take the baseline; all others keep their image value.
ImageTensor occlude(const ImageTensor& image, const PixelMask& mask,
                    const BaselineSpec& baseline);

enum class ContextMode { insertion, deletion };

// Position in the K+ (insertion) or K- (deletion) context sequence induced by a
// pixel ranking. Value type; advancing returns a new cursor.
class ContextCursor {
 public:
  ContextCursor(std::shared_ptr<const std::vector<PixelIndex>> ranking, ContextMode mode,
                std::size_t position = 0);

  const std::vector<PixelIndex>& ranking() const { return *ranking_; }
  ContextMode mode() const { return mode_; }
  std::size_t position() const { return position_; }
  bool exhausted() const { return position_ >= ranking_->size(); }

 private:
  friend std::optional<std::pair<ContextCursor, ImageTensor>> advance(
      const ContextCursor&, const ImageTensor&, const BaselineSpec&);

  std::shared_ptr<const std::vector<PixelIndex>> ranking_;
  ContextMode mode_;
  std::size_t position_;
};

// Next context of the sequence: the first position+1 ranked pixels inserted
// (insertion) or occluded (deletion). std::nullopt once the ranking is used up.
std::optional<std::pair<ContextCursor, ImageTensor>> advance(const ContextCursor& cursor,
                                                             const ImageTensor& image,
                                                             const BaselineSpec& baseline);

// Incremental form of the same sequence: one pixel write per step instead of a
// full recomposition. Used for long sweeps.
class ContextStream {
 public:
  ContextStream(const ImageTensor& image, const BaselineSpec& baseline,
                std::shared_ptr<const std::vector<PixelIndex>> ranking, ContextMode mode);

  // Applies the next ranked pixel. Returns false when the ranking is used up.
  bool advance();
  const ImageTensor& current() const { return current_; }
  // Number of pixels applied so far (k).
  std::size_t position() const { return position_; }
  ContextMode mode() const { return mode_; }

 private:
  const ImageTensor* image_;
  BaselineSpec baseline_;
  std::shared_ptr<const std::vector<PixelIndex>> ranking_;
  ContextMode mode_;
  std::size_t position_ = 0;
  ImageTensor current_;
};

// 8-bit grayscale PNG: 255 inside the mask, 0 outside.
void write_mask_png(const PixelMask& mask, const std::filesystem::path& path);
PixelMask read_mask_png(const std::filesystem::path& path);

}  // namespace causex

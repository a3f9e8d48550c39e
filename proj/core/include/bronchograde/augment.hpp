#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "bronchograde/data_model.hpp"
#include "bronchograde/image.hpp"
#include "bronchograde/random.hpp"

namespace bronchograde::augment {

inline constexpr int kStandardSize = 256;
inline constexpr double kMinScale = 1.1;
inline constexpr double kMaxScale = 1.5;

enum class TransformKind {
  scale_x,
  scale_y,
  scale_xy,
  rotate90,
  rotate180,
  rotate270,
  reflect_x,
  reflect_y,
  crop,
};

std::string_view to_string(TransformKind kind);
TransformKind transform_kind_from_string(std::string_view s);

enum class Axis { x, y };

/// Crop rectangle in fractions of the image extent: origin (x, y), size (w, h).
struct CropRect {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;
  double area() const { return w * h; }
};

struct TransformSpec {
  TransformKind kind = TransformKind::rotate90;
  double sx = 1.0;
  double sy = 1.0;
  CropRect rect;
};

/// Throws ValidationError when scale factors leave [1.1, 1.5] or the crop rectangle
/// leaves the unit square or covers less than `min_crop_area`.
void validate(const TransformSpec& spec, double min_crop_area = 0.25);

/// Bilinear resize with half-pixel sample centers; rounds half up and clamps to [0, 255].
Image resize(const Image& img, int width = kStandardSize, int height = kStandardSize);

/// Zoom: upscale by (sx, sy) about the center, crop back to the original extent, resize to 256.
/// Each factor is 1 (axis untouched) or within [1.1, 1.5].
Image scale(const Image& img, double sx, double sy);

/// Clockwise rotation by 90, 180 or 270 degrees; a lossless pixel permutation.
Image rotate(const Image& img, int angle);

/// Axis::x mirrors across the horizontal axis (rows reversed);
/// Axis::y mirrors across the vertical axis (columns reversed).
Image reflect(const Image& img, Axis axis);

/// Extracts the rectangle (pixel bounds rounded to nearest) and resizes to 256.
Image crop(const Image& img, const CropRect& rect, double min_crop_area = 0.25);

Image apply(const Image& img, const TransformSpec& spec, double min_crop_area = 0.25);

/// A weighted entry in the op mix. Parameters are drawn per application:
/// scale factors uniform in [scale_min, scale_max], crop area fraction uniform in
/// [crop_area_min, crop_area_max] with aspect ratio in [3/4, 4/3] and a uniform position.
struct TransformGenerator {
  TransformKind kind = TransformKind::rotate90;
  double weight = 1.0;
  double scale_min = kMinScale;
  double scale_max = kMaxScale;
  double crop_area_min = 0.5;
  double crop_area_max = 0.9;
};

TransformSpec sample(const TransformGenerator& gen, Rng& rng);

struct AugmentPlan {
  /// Desired output count per grade (index 0 = grade 1), originals included.
  std::array<std::size_t, GradeLabel::kCount> per_grade_targets{};
  std::vector<TransformGenerator> op_mix;
  std::uint64_t seed = 0;
  double min_crop_area = 0.25;
};

/// Every transform kind with equal weight.
std::vector<TransformGenerator> default_op_mix();

/// Targets taken from the "Transformations" column of the reference 236-image corpus.
AugmentPlan table1_plan(std::uint64_t seed = 0);

/// Targets = ceil(factor * count) for each grade present in `train`.
AugmentPlan scaled_plan(const Dataset& train, double factor, std::uint64_t seed = 0);

struct AugmentResult {
  Dataset dataset;
  /// File stem for each output record: `<source-stem>_<opseq>`.
  std::vector<std::string> names;
  std::array<std::size_t, GradeLabel::kCount> original_counts{};
  std::array<std::size_t, GradeLabel::kCount> output_counts{};
};

/// Per grade: copies each source once, then walks the sources round-robin applying
/// sampled transforms until the grade's target is met. Each output's randomness comes
/// from (seed, grade, source index, op index) only.
AugmentResult augment_dataset(const Dataset& train, const AugmentPlan& plan);

/// Writes `<out>/transform/grade_{g}/<name>.png`, `<out>/transform/manifest.csv`, and
/// the count table `<out>/counts.csv`.
void write_augmented(const AugmentResult& result, const std::filesystem::path& out);

/// Table-1 style count table: header `grade,<columns...>`, one row per grade, then `total`.
std::vector<std::vector<std::string>> count_table(
    const std::vector<std::string>& columns,
    const std::vector<std::array<std::size_t, GradeLabel::kCount>>& counts);

}  // namespace bronchograde::augment

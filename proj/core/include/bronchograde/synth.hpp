#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "bronchograde/data_model.hpp"
#include "bronchograde/image.hpp"

/// Synthetic image generators for offline runs and tests. Nothing here resembles real
/// patient data beyond coarse colour and layout.
namespace bronchograde::synth {

enum class Shape { disk, square, triangle, plus, ring, bar };
inline constexpr int kShapeCount = 6;

struct ShapeStyle {
  std::array<std::uint8_t, 3> foreground{255, 255, 255};
  std::array<std::uint8_t, 3> background{0, 0, 0};
  double cx = 0.5;  ///< centre, fraction of width
  double cy = 0.5;
  double radius = 0.3;  ///< fraction of the side
  double rotation_deg = 0.0;
};

/// One filled shape on a flat background.
Image draw_shape(int size, Shape shape, const ShapeStyle& style);

struct ShapeSetOptions {
  int per_class = 100;
  int size = 32;
  std::uint64_t seed = 0;
  /// Random grey levels, position, size and rotation; classes differ only by shape.
  bool randomise_pose = true;
};

/// Six classes, grade g drawn with Shape(g - 1). Each image is its own patient.
Dataset shape_classes(const ShapeSetOptions& opts);

/// Two unpaired domains for translation tests: reddish disks on dark backgrounds (A) and
/// bluish squares on light backgrounds (B).
struct TwoDomains {
  Dataset a;
  Dataset b;
};
TwoDomains disks_and_squares(int per_domain, int size, std::uint64_t seed);

struct CorpusOptions {
  std::array<int, GradeLabel::kCount> patients_per_grade{4, 4, 4, 4, 4, 4};
  int images_per_patient = 2;
  int size = 256;
  std::uint64_t seed = 0;
};

/// Airway-like frames (mucosa, dark lumen, soot flecks) whose colour and texture drift with
/// grade, plus a ventilation period drawn inside each grade's band.
struct Corpus {
  Dataset dataset;
  std::vector<double> ventilation_hours;
};
Corpus bronchoscopy_corpus(const CorpusOptions& opts);

/// Writes `<dir>/images/<patient>_<k>.png` and `<dir>/manifest.csv` with
/// `patient_id,image_path,ventilation_hours`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

}  // namespace bronchograde::synth

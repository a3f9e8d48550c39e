#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bronchograde/image.hpp"

namespace bronchograde {

/// Severity grade 1..6, banded by mechanical-ventilation duration.
class GradeLabel {
 public:
  static constexpr int kMin = 1;
  static constexpr int kMax = 6;
  static constexpr int kCount = kMax - kMin + 1;

  /// Throws ValidationError outside [1, 6].
  explicit GradeLabel(int value);

  static GradeLabel from_index(int index) { return GradeLabel(index + kMin); }

  int value() const { return value_; }
  /// Zero-based position (grade 1 -> 0), used as the classifier output index.
  int index() const { return value_ - kMin; }

  friend auto operator<=>(const GradeLabel&, const GradeLabel&) = default;

 private:
  int value_;
};

/// All six grades in ascending order.
std::array<GradeLabel, GradeLabel::kCount> all_grades();

/// Ventilation bands in hours: (0,24) -> 1, [24,48] -> 2, (48,168] -> 3,
/// (168,336] -> 4, (336,720] -> 5, (720,inf) -> 6.
GradeLabel grade_from_ventilation(double hours);

enum class Provenance { original, transform, cyclegan, cut };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

enum class SplitTag { train, test };

struct ImageRecord {
  std::string patient_id;
  Image pixels;
  GradeLabel grade{1};
  Provenance provenance = Provenance::original;
  std::filesystem::path source_path;
  /// Set when the manifest pre-assigns the record to a split.
  std::optional<SplitTag> split_hint;
};

/// Immutable ordered collection of records with per-grade counts.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<ImageRecord> records);

  const std::vector<ImageRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const ImageRecord& operator[](std::size_t i) const { return records_[i]; }

  std::size_t count(GradeLabel g) const { return counts_[static_cast<std::size_t>(g.index())]; }
  const std::array<std::size_t, GradeLabel::kCount>& per_grade_counts() const { return counts_; }

  /// Records of grade g, in dataset order.
  Dataset filter(GradeLabel g) const;
  /// Records at the given positions, in the given order.
  Dataset subset(const std::vector<std::size_t>& indices) const;

  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

 private:
  std::vector<ImageRecord> records_;
  std::array<std::size_t, GradeLabel::kCount> counts_{};
};

Dataset concat(const Dataset& a, const Dataset& b);

/// One-vs-all split of a training set: trainB holds target_grade, trainA the rest.
struct DomainPartition {
  GradeLabel target_grade{1};
  Dataset trainA;
  Dataset trainB;
};

struct LoadOptions {
  /// Records are resized to size x size after decoding.
  int size = 256;
};

/// Reads a CSV manifest with header `patient_id,image_path,ventilation_hours[,grade][,split]`
/// (an optional `provenance` column is also understood). image_path is relative to the
/// manifest's directory. Throws LoadError naming the row on any bad row.
Dataset load_manifest(const std::filesystem::path& path, const LoadOptions& opts = {});

/// Directory fallback: `<root>/grade_{1..6}/*.{png,jpg,jpeg}`; each file stem is its patient id.
Dataset load_directory(const std::filesystem::path& root, const LoadOptions& opts = {});

/// Writes each record as PNG under `image_dir` and a manifest CSV (with grade and
/// provenance columns) at `manifest_path`. Image names come from `names` when given.
void save_dataset(const Dataset& ds, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& image_dir,
                  const std::vector<std::string>& names = {});

struct SplitOptions {
  double ratio = 0.7;
  std::uint64_t seed = 0;
  bool by_patient = true;
};

struct SplitResult {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

/// Deterministic stratified split. By patient: whole patients go to one side, stratified by
/// each patient's grade. By image: each grade is shuffled and split at round(ratio * n).
SplitResult split_dataset(const Dataset& ds, const SplitOptions& opts = {});

/// Uses the manifest's split column. Every record must carry a split hint.
SplitResult split_from_hints(const Dataset& ds);

DomainPartition one_vs_all_partition(const Dataset& train, GradeLabel g);
/// Validating overload for raw integers (e.g. from the command line).
DomainPartition one_vs_all_partition(const Dataset& train, int grade);

}  // namespace bronchograde

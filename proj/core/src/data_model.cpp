#include "bronchograde/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "bronchograde/augment.hpp"
#include "bronchograde/csv.hpp"
#include "bronchograde/errors.hpp"
#include "bronchograde/log.hpp"
#include "bronchograde/random.hpp"

namespace bronchograde {

namespace {

constexpr double kHoursPerDay = 24.0;

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

template <typename Rng>
void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  // Fisher-Yates with the portable bounded draw.
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

GradeLabel::GradeLabel(int value) : value_(value) {
  if (value < kMin || value > kMax) {
    throw ValidationError("grade must be in [1, 6], got " + std::to_string(value));
  }
}

std::array<GradeLabel, GradeLabel::kCount> all_grades() {
  return {GradeLabel(1), GradeLabel(2), GradeLabel(3), GradeLabel(4), GradeLabel(5), GradeLabel(6)};
}

GradeLabel grade_from_ventilation(double hours) {
  if (!std::isfinite(hours) || hours <= 0.0) {
    throw ValidationError("ventilation hours must be positive and finite");
  }
  if (hours < 1 * kHoursPerDay) return GradeLabel(1);
  if (hours <= 2 * kHoursPerDay) return GradeLabel(2);
  if (hours <= 7 * kHoursPerDay) return GradeLabel(3);
  if (hours <= 14 * kHoursPerDay) return GradeLabel(4);
  if (hours <= 30 * kHoursPerDay) return GradeLabel(5);
  return GradeLabel(6);
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::original: return "original";
    case Provenance::transform: return "transform";
    case Provenance::cyclegan: return "cyclegan";
    case Provenance::cut: return "cut";
  }
  return "unknown";
}

Provenance provenance_from_string(std::string_view s) {
  for (auto p : {Provenance::original, Provenance::transform, Provenance::cyclegan, Provenance::cut}) {
    if (to_string(p) == s) return p;
  }
  throw ValidationError("unknown provenance: " + std::string(s));
}

Dataset::Dataset(std::vector<ImageRecord> records) : records_(std::move(records)) {
  for (const auto& r : records_) ++counts_[static_cast<std::size_t>(r.grade.index())];
}

Dataset Dataset::filter(GradeLabel g) const {
  std::vector<ImageRecord> out;
  for (const auto& r : records_)
    if (r.grade == g) out.push_back(r);
  return Dataset(std::move(out));
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  std::vector<ImageRecord> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= records_.size()) throw ValidationError("subset index out of range");
    out.push_back(records_[i]);
  }
  return Dataset(std::move(out));
}

Dataset concat(const Dataset& a, const Dataset& b) {
  std::vector<ImageRecord> out(a.records());
  out.insert(out.end(), b.records().begin(), b.records().end());
  return Dataset(std::move(out));
}

Dataset load_manifest(const std::filesystem::path& path, const LoadOptions& opts) {
  if (!std::filesystem::exists(path)) throw LoadError("manifest not found: " + path.string());
  const auto rows = csv::read_file(path);
  if (rows.empty()) {
    log::warn("manifest ", path.string(), " is empty");
    return Dataset();
  }
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) col[lower(trim(rows[0][i]))] = i;
  for (const char* required : {"patient_id", "image_path"}) {
    if (!col.count(required)) {
      throw LoadError("manifest " + path.string() + " lacks required column '" + required + "'");
    }
  }
  auto field = [&](const csv::Row& row, const char* name) -> std::string {
    auto it = col.find(name);
    if (it == col.end() || it->second >= row.size()) return {};
    return trim(row[it->second]);
  };

  const auto base = path.parent_path();
  std::vector<ImageRecord> records;
  if (rows.size() == 1) log::warn("manifest ", path.string(), " has no rows");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = path.string() + " row " + std::to_string(r);
    ImageRecord rec;
    rec.patient_id = field(row, "patient_id");
    const auto image_path = field(row, "image_path");
    if (image_path.empty()) throw LoadError(where + ": empty image_path");
    rec.source_path = base / image_path;

    const auto grade_text = field(row, "grade");
    const auto hours_text = field(row, "ventilation_hours");
    try {
      if (!grade_text.empty()) {
        std::size_t used = 0;
        const int g = std::stoi(grade_text, &used);
        if (used != grade_text.size()) throw ValidationError("grade is not an integer");
        rec.grade = GradeLabel(g);
      } else if (!hours_text.empty()) {
        std::size_t used = 0;
        const double hours = std::stod(hours_text, &used);
        if (used != hours_text.size()) throw ValidationError("ventilation_hours is not a number");
        rec.grade = grade_from_ventilation(hours);
      } else {
        throw LoadError("neither grade nor ventilation_hours given");
      }
    } catch (const std::logic_error& e) {
      throw LoadError(where + ": " + e.what());
    } catch (const LoadError& e) {
      throw LoadError(where + ": " + e.what());
    }

    const auto split = lower(field(row, "split"));
    if (split == "train") rec.split_hint = SplitTag::train;
    else if (split == "test") rec.split_hint = SplitTag::test;
    else if (!split.empty()) throw LoadError(where + ": split must be 'train' or 'test'");

    const auto prov = field(row, "provenance");
    if (!prov.empty()) {
      try {
        rec.provenance = provenance_from_string(prov);
      } catch (const ValidationError& e) {
        throw LoadError(where + ": " + e.what());
      }
    }

    try {
      rec.pixels = augment::resize(read_image(rec.source_path), opts.size, opts.size);
    } catch (const LoadError& e) {
      throw LoadError(where + ": " + e.what());
    }
    records.push_back(std::move(rec));
  }
  return Dataset(std::move(records));
}

Dataset load_directory(const std::filesystem::path& root, const LoadOptions& opts) {
  if (!std::filesystem::is_directory(root)) throw LoadError("not a directory: " + root.string());
  std::vector<ImageRecord> records;
  for (auto g : all_grades()) {
    const auto dir = root / ("grade_" + std::to_string(g.value()));
    if (!std::filesystem::is_directory(dir)) continue;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      const auto ext = lower(e.path().extension().string());
      if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ImageRecord rec;
      rec.patient_id = f.stem().string();
      rec.grade = g;
      rec.source_path = f;
      rec.pixels = augment::resize(read_image(f), opts.size, opts.size);
      records.push_back(std::move(rec));
    }
  }
  if (records.empty()) log::warn("no grade_N images found under ", root.string());
  return Dataset(std::move(records));
}

void save_dataset(const Dataset& ds, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& image_dir, const std::vector<std::string>& names) {
  if (!names.empty() && names.size() != ds.size()) {
    throw ValidationError("save_dataset: names must match the record count");
  }
  std::vector<csv::Row> rows = {{"patient_id", "image_path", "ventilation_hours", "grade", "provenance"}};
  const auto base = manifest_path.parent_path();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& rec = ds[i];
    char fallback[32];
    std::snprintf(fallback, sizeof fallback, "img_%05zu", i);
    const std::string name = names.empty() ? std::string(fallback) : names[i];
    const auto file = image_dir / ("grade_" + std::to_string(rec.grade.value())) / (name + ".png");
    write_png(file, rec.pixels);
    rows.push_back({rec.patient_id, std::filesystem::relative(file, base).generic_string(), "",
                    std::to_string(rec.grade.value()), std::string(to_string(rec.provenance))});
  }
  csv::write_file(manifest_path, rows);
}

SplitResult split_dataset(const Dataset& ds, const SplitOptions& opts) {
  if (!(opts.ratio > 0.0 && opts.ratio < 1.0)) throw ValidationError("split ratio must be in (0, 1)");
  if (ds.empty()) throw ValidationError("cannot split an empty dataset");

  Rng rng(derive_seed(opts.seed, {0x5911ULL}));
  std::vector<bool> in_train(ds.size(), false);

  for (auto g : all_grades()) {
    if (ds.count(g) == 0) {
      log::warn("split: grade ", g.value(), " has no images; stratum skipped");
    }
  }

  if (opts.by_patient) {
    // Patients are stratified by the grade of their first record.
    std::map<std::string, std::vector<std::size_t>> by_patient;
    std::vector<std::string> patient_order;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto [it, inserted] = by_patient.try_emplace(ds[i].patient_id);
      if (inserted) patient_order.push_back(ds[i].patient_id);
      it->second.push_back(i);
    }
    std::sort(patient_order.begin(), patient_order.end());
    for (auto g : all_grades()) {
      std::vector<std::string> stratum;
      std::size_t images = 0;
      for (const auto& p : patient_order) {
        if (ds[by_patient[p].front()].grade == g) {
          stratum.push_back(p);
          images += by_patient[p].size();
        }
      }
      if (stratum.empty()) continue;
      std::vector<std::size_t> order(stratum.size());
      std::iota(order.begin(), order.end(), 0);
      shuffle(order, rng);
      const double want = opts.ratio * static_cast<double>(images);
      std::size_t taken = 0;
      std::size_t patients_taken = 0;
      for (auto k : order) {
        const auto& idx = by_patient[stratum[k]];
        const bool must_take = patients_taken == 0;
        const bool keep_one_for_test = stratum.size() > 1 && patients_taken + 1 == stratum.size();
        if (keep_one_for_test) break;
        const double before = std::abs(want - static_cast<double>(taken));
        const double after = std::abs(want - static_cast<double>(taken + idx.size()));
        if (!must_take && after >= before) break;
        for (auto i : idx) in_train[i] = true;
        taken += idx.size();
        ++patients_taken;
      }
    }
  } else {
    for (auto g : all_grades()) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds[i].grade == g) idx.push_back(i);
      if (idx.empty()) continue;
      shuffle(idx, rng);
      const auto n_train = static_cast<std::size_t>(
          std::floor(opts.ratio * static_cast<double>(idx.size()) + 0.5));
      for (std::size_t k = 0; k < n_train && k < idx.size(); ++k) in_train[idx[k]] = true;
    }
  }

  SplitResult out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    (in_train[i] ? out.train_indices : out.test_indices).push_back(i);
  }
  out.train = ds.subset(out.train_indices);
  out.test = ds.subset(out.test_indices);
  return out;
}

SplitResult split_from_hints(const Dataset& ds) {
  SplitResult out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds[i].split_hint) {
      throw PreconditionError("record " + std::to_string(i) + " has no split assignment");
    }
    (*ds[i].split_hint == SplitTag::train ? out.train_indices : out.test_indices).push_back(i);
  }
  out.train = ds.subset(out.train_indices);
  out.test = ds.subset(out.test_indices);
  return out;
}

DomainPartition one_vs_all_partition(const Dataset& train, GradeLabel g) {
  if (train.empty()) throw PreconditionError("one_vs_all_partition: empty training set");
  if (train.count(g) == 0) {
    throw PreconditionError("one_vs_all_partition: no training images of grade " +
                            std::to_string(g.value()) + "; target domain would be empty");
  }
  std::vector<ImageRecord> a;
  std::vector<ImageRecord> b;
  for (const auto& r : train) (r.grade == g ? b : a).push_back(r);
  return DomainPartition{g, Dataset(std::move(a)), Dataset(std::move(b))};
}

DomainPartition one_vs_all_partition(const Dataset& train, int grade) {
  return one_vs_all_partition(train, GradeLabel(grade));
}

}  // namespace bronchograde

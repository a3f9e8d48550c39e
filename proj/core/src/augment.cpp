#include "bronchograde/augment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "bronchograde/csv.hpp"
#include "bronchograde/errors.hpp"
#include "bronchograde/log.hpp"

namespace bronchograde::augment {

namespace {

constexpr std::array<std::size_t, GradeLabel::kCount> kTable1Transformations = {117, 385, 144,
                                                                               297, 117, 162};

void require_non_empty(const Image& img) {
  if (img.empty() || img.height() == 0 || img.width() == 0) {
    throw ValidationError("image has a zero dimension");
  }
}

std::uint8_t round_clamp(double v) {
  const double r = std::floor(v + 0.5);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

/// Bilinear sample at continuous pixel-center coordinates, edges clamped.
void sample_bilinear(const Image& img, double y, double x, std::uint8_t out[3]) {
  const int h = img.height();
  const int w = img.width();
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  for (int c = 0; c < 3; ++c) {
    const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
    const double bottom = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
    out[c] = round_clamp(top * (1.0 - fy) + bottom * fy);
  }
}

bool valid_factor(double f) { return f == 1.0 || (f >= kMinScale && f <= kMaxScale); }

void validate_rect(const CropRect& r, double min_area) {
  const bool inside = r.x >= 0.0 && r.y >= 0.0 && r.w > 0.0 && r.h > 0.0 &&
                      r.x + r.w <= 1.0 + 1e-12 && r.y + r.h <= 1.0 + 1e-12;
  if (!inside) throw ValidationError("crop rectangle leaves the unit square or is degenerate");
  if (r.area() < min_area) {
    throw ValidationError("crop rectangle area " + std::to_string(r.area()) +
                          " below minimum " + std::to_string(min_area));
  }
}

}  // namespace

std::string_view to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::scale_x: return "scale_x";
    case TransformKind::scale_y: return "scale_y";
    case TransformKind::scale_xy: return "scale_xy";
    case TransformKind::rotate90: return "rotate90";
    case TransformKind::rotate180: return "rotate180";
    case TransformKind::rotate270: return "rotate270";
    case TransformKind::reflect_x: return "reflect_x";
    case TransformKind::reflect_y: return "reflect_y";
    case TransformKind::crop: return "crop";
  }
  return "unknown";
}

TransformKind transform_kind_from_string(std::string_view s) {
  for (auto k : {TransformKind::scale_x, TransformKind::scale_y, TransformKind::scale_xy,
                 TransformKind::rotate90, TransformKind::rotate180, TransformKind::rotate270,
                 TransformKind::reflect_x, TransformKind::reflect_y, TransformKind::crop}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown transform kind: " + std::string(s));
}

void validate(const TransformSpec& spec, double min_crop_area) {
  switch (spec.kind) {
    case TransformKind::scale_x:
    case TransformKind::scale_y:
    case TransformKind::scale_xy:
      if (!valid_factor(spec.sx) || !valid_factor(spec.sy)) {
        throw ValidationError("scale factors must lie in [1.1, 1.5]");
      }
      break;
    case TransformKind::crop:
      validate_rect(spec.rect, min_crop_area);
      break;
    default:
      break;
  }
}

Image resize(const Image& img, int width, int height) {
  require_non_empty(img);
  if (width <= 0 || height <= 0) throw ValidationError("resize target has a zero dimension");
  if (img.width() == width && img.height() == height) return img;
  Image out(height, width);
  const double sy = static_cast<double>(img.height()) / height;
  const double sx = static_cast<double>(img.width()) / width;
  std::uint8_t px[3];
  for (int r = 0; r < height; ++r) {
    const double y = (r + 0.5) * sy - 0.5;
    for (int c = 0; c < width; ++c) {
      sample_bilinear(img, y, (c + 0.5) * sx - 0.5, px);
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = px[ch];
    }
  }
  return out;
}

Image scale(const Image& img, double sx, double sy) {
  require_non_empty(img);
  if (!valid_factor(sx) || !valid_factor(sy)) {
    throw ValidationError("scale factors must lie in [1.1, 1.5]");
  }
  if (sx == 1.0 && sy == 1.0) return resize(img);
  const int h = img.height();
  const int w = img.width();
  Image zoomed(h, w);
  const double cy = h / 2.0;
  const double cx = w / 2.0;
  std::uint8_t px[3];
  for (int r = 0; r < h; ++r) {
    const double y = (r + 0.5 - cy) / sy + cy - 0.5;
    for (int c = 0; c < w; ++c) {
      sample_bilinear(img, y, (c + 0.5 - cx) / sx + cx - 0.5, px);
      for (int ch = 0; ch < 3; ++ch) zoomed.at(r, c, ch) = px[ch];
    }
  }
  return resize(zoomed);
}

Image rotate(const Image& img, int angle) {
  require_non_empty(img);
  const int h = img.height();
  const int w = img.width();
  switch (angle) {
    case 90: {
      Image out(w, h);
      for (int r = 0; r < w; ++r)
        for (int c = 0; c < h; ++c)
          for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = img.at(h - 1 - c, r, ch);
      return out;
    }
    case 180: {
      Image out(h, w);
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = img.at(h - 1 - r, w - 1 - c, ch);
      return out;
    }
    case 270: {
      Image out(w, h);
      for (int r = 0; r < w; ++r)
        for (int c = 0; c < h; ++c)
          for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = img.at(c, w - 1 - r, ch);
      return out;
    }
    default:
      throw ValidationError("rotation angle must be 90, 180 or 270, got " + std::to_string(angle));
  }
}

Image reflect(const Image& img, Axis axis) {
  require_non_empty(img);
  const int h = img.height();
  const int w = img.width();
  Image out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const int sr = axis == Axis::x ? h - 1 - r : r;
      const int sc = axis == Axis::y ? w - 1 - c : c;
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = img.at(sr, sc, ch);
    }
  return out;
}

Image crop(const Image& img, const CropRect& rect, double min_crop_area) {
  require_non_empty(img);
  validate_rect(rect, min_crop_area);
  const int h = img.height();
  const int w = img.width();
  const int x0 = std::clamp(static_cast<int>(std::lround(rect.x * w)), 0, w - 1);
  const int y0 = std::clamp(static_cast<int>(std::lround(rect.y * h)), 0, h - 1);
  const int x1 = std::clamp(static_cast<int>(std::lround((rect.x + rect.w) * w)), x0 + 1, w);
  const int y1 = std::clamp(static_cast<int>(std::lround((rect.y + rect.h) * h)), y0 + 1, h);
  Image sub(y1 - y0, x1 - x0);
  for (int r = y0; r < y1; ++r)
    for (int c = x0; c < x1; ++c)
      for (int ch = 0; ch < 3; ++ch) sub.at(r - y0, c - x0, ch) = img.at(r, c, ch);
  return resize(sub);
}

Image apply(const Image& img, const TransformSpec& spec, double min_crop_area) {
  validate(spec, min_crop_area);
  switch (spec.kind) {
    case TransformKind::scale_x: return scale(img, spec.sx, 1.0);
    case TransformKind::scale_y: return scale(img, 1.0, spec.sy);
    case TransformKind::scale_xy: return scale(img, spec.sx, spec.sy);
    case TransformKind::rotate90: return resize(rotate(img, 90));
    case TransformKind::rotate180: return resize(rotate(img, 180));
    case TransformKind::rotate270: return resize(rotate(img, 270));
    case TransformKind::reflect_x: return resize(reflect(img, Axis::x));
    case TransformKind::reflect_y: return resize(reflect(img, Axis::y));
    case TransformKind::crop: return crop(img, spec.rect, min_crop_area);
  }
  throw ValidationError("unhandled transform kind");
}

TransformSpec sample(const TransformGenerator& gen, Rng& rng) {
  TransformSpec spec;
  spec.kind = gen.kind;
  switch (gen.kind) {
    case TransformKind::scale_x:
      spec.sx = rng.uniform(gen.scale_min, gen.scale_max);
      break;
    case TransformKind::scale_y:
      spec.sy = rng.uniform(gen.scale_min, gen.scale_max);
      break;
    case TransformKind::scale_xy:
      spec.sx = rng.uniform(gen.scale_min, gen.scale_max);
      spec.sy = rng.uniform(gen.scale_min, gen.scale_max);
      break;
    case TransformKind::crop: {
      const double area = rng.uniform(gen.crop_area_min, gen.crop_area_max);
      const double log_ar = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
      const double ar = std::exp(log_ar);
      double w = std::min(std::sqrt(area * ar), 0.999);
      double h = std::min(area / w, 0.999);
      w = std::min(area / h, 0.999);
      spec.rect.w = w;
      spec.rect.h = h;
      spec.rect.x = rng.uniform(0.0, 1.0 - w);
      spec.rect.y = rng.uniform(0.0, 1.0 - h);
      break;
    }
    default:
      break;
  }
  return spec;
}

std::vector<TransformGenerator> default_op_mix() {
  std::vector<TransformGenerator> mix;
  for (auto k : {TransformKind::scale_x, TransformKind::scale_y, TransformKind::scale_xy,
                 TransformKind::rotate90, TransformKind::rotate180, TransformKind::rotate270,
                 TransformKind::reflect_x, TransformKind::reflect_y, TransformKind::crop}) {
    mix.push_back(TransformGenerator{.kind = k});
  }
  return mix;
}

AugmentPlan table1_plan(std::uint64_t seed) {
  AugmentPlan plan;
  plan.per_grade_targets = kTable1Transformations;
  plan.op_mix = default_op_mix();
  plan.seed = seed;
  return plan;
}

AugmentPlan scaled_plan(const Dataset& train, double factor, std::uint64_t seed) {
  if (!(factor >= 1.0)) throw ValidationError("augmentation factor must be >= 1");
  AugmentPlan plan;
  for (auto g : all_grades()) {
    plan.per_grade_targets[static_cast<std::size_t>(g.index())] =
        static_cast<std::size_t>(std::ceil(factor * static_cast<double>(train.count(g)) - 1e-9));
  }
  plan.op_mix = default_op_mix();
  plan.seed = seed;
  return plan;
}

AugmentResult augment_dataset(const Dataset& train, const AugmentPlan& plan) {
  if (plan.op_mix.empty()) throw ValidationError("augment plan has an empty op mix");
  double total_weight = 0.0;
  for (const auto& g : plan.op_mix) {
    if (!(g.weight >= 0.0)) throw ValidationError("op mix weights must be non-negative");
    total_weight += g.weight;
  }
  if (!(total_weight > 0.0)) throw ValidationError("op mix weights sum to zero");

  AugmentResult result;
  std::vector<ImageRecord> out;
  for (auto grade : all_grades()) {
    const auto gi = static_cast<std::size_t>(grade.index());
    const Dataset sources = train.filter(grade);
    const std::size_t target = plan.per_grade_targets[gi];
    result.original_counts[gi] = sources.size();
    if (sources.empty()) {
      if (target > 0) log::warn("augment: grade ", grade.value(), " has no source images; skipped");
      continue;
    }
    if (target < sources.size()) {
      throw ValidationError("augment target for grade " + std::to_string(grade.value()) + " (" +
                            std::to_string(target) + ") is below its original count (" +
                            std::to_string(sources.size()) + ")");
    }

    std::vector<std::string> stems;
    std::map<std::string, int> seen;
    for (std::size_t s = 0; s < sources.size(); ++s) {
      std::string stem = sources[s].source_path.stem().string();
      if (stem.empty()) stem = "img" + std::to_string(s);
      if (seen[stem]++ > 0) stem += "_s" + std::to_string(s);
      stems.push_back(std::move(stem));
    }

    for (std::size_t i = 0; i < target; ++i) {
      const std::size_t src = i % sources.size();
      const std::size_t op_index = i / sources.size();
      const ImageRecord& source = sources[src];
      ImageRecord rec;
      rec.patient_id = source.patient_id;
      rec.grade = source.grade;
      rec.provenance = Provenance::transform;
      rec.source_path = source.source_path;
      char seq[16];
      std::snprintf(seq, sizeof seq, "t%02zu_", op_index);
      if (op_index == 0) {
        rec.pixels = augment::resize(source.pixels);
        result.names.push_back(stems[src] + "_" + seq + "copy");
      } else {
        Rng rng(derive_seed(plan.seed, {static_cast<std::uint64_t>(grade.value()), src, op_index}));
        double pick = rng.uniform() * total_weight;
        const TransformGenerator* gen = &plan.op_mix.back();
        for (const auto& g : plan.op_mix) {
          if (pick < g.weight) {
            gen = &g;
            break;
          }
          pick -= g.weight;
        }
        const TransformSpec spec = sample(*gen, rng);
        rec.pixels = apply(source.pixels, spec, plan.min_crop_area);
        result.names.push_back(stems[src] + "_" + seq + std::string(to_string(spec.kind)));
      }
      out.push_back(std::move(rec));
    }
    result.output_counts[gi] = target;
  }
  result.dataset = Dataset(std::move(out));
  return result;
}

void write_augmented(const AugmentResult& result, const std::filesystem::path& out) {
  const auto root = out / "transform";
  std::vector<csv::Row> rows = {{"patient_id", "image_path", "ventilation_hours", "grade", "provenance"}};
  for (std::size_t i = 0; i < result.dataset.size(); ++i) {
    const auto& rec = result.dataset[i];
    const auto rel = std::filesystem::path("grade_" + std::to_string(rec.grade.value())) /
                     (result.names[i] + ".png");
    write_png(root / rel, rec.pixels);
    rows.push_back({rec.patient_id, rel.generic_string(), "", std::to_string(rec.grade.value()),
                    std::string(to_string(rec.provenance))});
  }
  csv::write_file(root / "manifest.csv", rows);
  csv::write_file(out / "counts.csv",
                  count_table({"Original", "Transformations"},
                              {result.original_counts, result.output_counts}));
}

std::vector<std::vector<std::string>> count_table(
    const std::vector<std::string>& columns,
    const std::vector<std::array<std::size_t, GradeLabel::kCount>>& counts) {
  if (columns.size() != counts.size()) throw ValidationError("count table column mismatch");
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"grade"};
  header.insert(header.end(), columns.begin(), columns.end());
  rows.push_back(header);
  std::vector<std::size_t> totals(columns.size(), 0);
  for (auto g : all_grades()) {
    std::vector<std::string> row = {"grade " + std::to_string(g.value())};
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto v = counts[c][static_cast<std::size_t>(g.index())];
      totals[c] += v;
      row.push_back(std::to_string(v));
    }
    rows.push_back(row);
  }
  std::vector<std::string> total = {"total"};
  for (auto t : totals) total.push_back(std::to_string(t));
  rows.push_back(total);
  return rows;
}

}  // namespace bronchograde::augment

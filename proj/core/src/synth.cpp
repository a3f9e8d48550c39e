#include "bronchograde/synth.hpp"

#include <opencv2/imgproc.hpp>

#include <cmath>
#include <numbers>

#include "bronchograde/csv.hpp"
#include "bronchograde/errors.hpp"
#include "bronchograde/random.hpp"

namespace bronchograde::synth {

namespace {

Image from_mat(const cv::Mat& rgb) {
  Image out(rgb.rows, rgb.cols);
  for (int r = 0; r < rgb.rows; ++r) {
    const auto* row = rgb.ptr<cv::Vec3b>(r);
    for (int c = 0; c < rgb.cols; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = row[c][ch];
  }
  return out;
}

cv::Scalar colour(const std::array<std::uint8_t, 3>& c) { return {double(c[0]), double(c[1]), double(c[2])}; }

std::vector<cv::Point> polygon(double cx, double cy, const std::vector<std::pair<double, double>>& local,
                               double rotation_deg) {
  const double a = rotation_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  std::vector<cv::Point> pts;
  for (auto [x, y] : local) {
    // Sub-pixel coordinates with 4 fractional bits.
    pts.emplace_back(static_cast<int>(std::lround((cx + x * ca - y * sa) * 16)),
                     static_cast<int>(std::lround((cy + x * sa + y * ca) * 16)));
  }
  return pts;
}

void fill(cv::Mat& m, const std::vector<cv::Point>& pts, const cv::Scalar& c) {
  cv::fillPoly(m, std::vector<std::vector<cv::Point>>{pts}, c, cv::LINE_AA, 4);
}

std::uint8_t clamp8(double v) { return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0)); }

}  // namespace

Image draw_shape(int size, Shape shape, const ShapeStyle& s) {
  if (size < 4) throw ValidationError("draw_shape: size must be >= 4");
  cv::Mat m(size, size, CV_8UC3, colour(s.background));
  const double cx = s.cx * size - 0.5, cy = s.cy * size - 0.5, r = s.radius * size;
  const auto fg = colour(s.foreground);
  const auto bg = colour(s.background);
  const auto centre = cv::Point(static_cast<int>(std::lround(cx * 16)), static_cast<int>(std::lround(cy * 16)));
  const auto scaled = [](double v) { return static_cast<int>(std::lround(v * 16)); };
  switch (shape) {
    case Shape::disk:
      cv::circle(m, centre, scaled(r), fg, cv::FILLED, cv::LINE_AA, 4);
      break;
    case Shape::ring:
      cv::circle(m, centre, scaled(r), fg, cv::FILLED, cv::LINE_AA, 4);
      cv::circle(m, centre, scaled(0.55 * r), bg, cv::FILLED, cv::LINE_AA, 4);
      break;
    case Shape::square: {
      const double h = 0.85 * r;
      fill(m, polygon(cx, cy, {{-h, -h}, {h, -h}, {h, h}, {-h, h}}, s.rotation_deg), fg);
      break;
    }
    case Shape::triangle: {
      std::vector<std::pair<double, double>> pts;
      for (int k = 0; k < 3; ++k) {
        const double a = -std::numbers::pi / 2 + k * 2 * std::numbers::pi / 3;
        pts.emplace_back(r * std::cos(a), r * std::sin(a));
      }
      fill(m, polygon(cx, cy, pts, s.rotation_deg), fg);
      break;
    }
    case Shape::plus: {
      const double w = 0.3 * r;
      fill(m, polygon(cx, cy, {{-r, -w}, {r, -w}, {r, w}, {-r, w}}, s.rotation_deg), fg);
      fill(m, polygon(cx, cy, {{-w, -r}, {w, -r}, {w, r}, {-w, r}}, s.rotation_deg), fg);
      break;
    }
    case Shape::bar: {
      const double w = 0.28 * r;
      fill(m, polygon(cx, cy, {{-r, -w}, {r, -w}, {r, w}, {-r, w}}, s.rotation_deg), fg);
      break;
    }
  }
  return from_mat(m);
}

Dataset shape_classes(const ShapeSetOptions& opts) {
  if (opts.per_class < 1) throw ValidationError("shape_classes: per_class must be >= 1");
  std::vector<ImageRecord> records;
  for (int k = 0; k < kShapeCount; ++k) {
    for (int i = 0; i < opts.per_class; ++i) {
      Rng rng(derive_seed(opts.seed, {0x5A4EULL, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i)}));
      ShapeStyle st;
      if (opts.randomise_pose) {
        // Light shape on a dark ground; colour carries no class information.
        const auto fg = clamp8(rng.uniform(170.0, 250.0)), bg = clamp8(rng.uniform(0.0, 70.0));
        st.foreground = {fg, fg, fg};
        st.background = {bg, bg, bg};
        st.radius = rng.uniform(0.22, 0.34);
        st.cx = rng.uniform(st.radius + 0.06, 0.94 - st.radius);
        st.cy = rng.uniform(st.radius + 0.06, 0.94 - st.radius);
        st.rotation_deg = rng.uniform(0.0, 360.0);
      } else {
        st.foreground = {230, 230, 230};
        st.background = {20, 20, 20};
      }
      ImageRecord rec;
      rec.patient_id = "s" + std::to_string(k + 1) + "_" + std::to_string(i);
      rec.grade = GradeLabel(k + 1);
      rec.pixels = draw_shape(opts.size, static_cast<Shape>(k), st);
      records.push_back(std::move(rec));
    }
  }
  return Dataset(std::move(records));
}

TwoDomains disks_and_squares(int per_domain, int size, std::uint64_t seed) {
  if (per_domain < 1) throw ValidationError("disks_and_squares: per_domain must be >= 1");
  std::vector<ImageRecord> a, b;
  for (int i = 0; i < per_domain; ++i) {
    for (int domain = 0; domain < 2; ++domain) {
      Rng rng(derive_seed(seed, {0xD0ULL, static_cast<std::uint64_t>(domain), static_cast<std::uint64_t>(i)}));
      ShapeStyle st;
      st.radius = rng.uniform(0.2, 0.32);
      st.cx = rng.uniform(st.radius + 0.05, 0.95 - st.radius);
      st.cy = rng.uniform(st.radius + 0.05, 0.95 - st.radius);
      st.rotation_deg = rng.uniform(0.0, 90.0);
      const auto jitter = [&](double v) { return static_cast<std::uint8_t>(std::clamp(v + rng.uniform(-20, 20), 0.0, 255.0)); };
      ImageRecord rec;
      if (domain == 0) {
        st.foreground = {jitter(220), jitter(60), jitter(50)};
        st.background = {jitter(40), jitter(30), jitter(35)};
        rec.grade = GradeLabel(1);
        rec.patient_id = "a" + std::to_string(i);
        rec.pixels = draw_shape(size, Shape::disk, st);
        a.push_back(std::move(rec));
      } else {
        st.foreground = {jitter(40), jitter(90), jitter(210)};
        st.background = {jitter(200), jitter(210), jitter(190)};
        rec.grade = GradeLabel(2);
        rec.patient_id = "b" + std::to_string(i);
        rec.pixels = draw_shape(size, Shape::square, st);
        b.push_back(std::move(rec));
      }
    }
  }
  return {Dataset(std::move(a)), Dataset(std::move(b))};
}

namespace {

// Ventilation bands in hours, [lo, hi] per grade; draws stay strictly inside.
constexpr std::array<std::pair<double, double>, 6> kBands = {
    {{1.0, 24.0}, {24.0, 48.0}, {48.0, 168.0}, {168.0, 336.0}, {336.0, 720.0}, {720.0, 1440.0}}};

Image airway_frame(int size, int grade, Rng& patient, std::uint64_t image_seed) {
  Rng rng(image_seed);
  const double g = grade - 1;  // 0..5
  // Mucosa reddens and darkens with grade; lumen narrows; soot flecks multiply.
  const double base_r = 180 + 8 * g + patient.uniform(-10, 10);
  const double base_g = 120 - 14 * g + patient.uniform(-10, 10);
  const double base_b = 115 - 12 * g + patient.uniform(-10, 10);
  cv::Mat m(size, size, CV_8UC3);
  const double cx = size * (0.5 + rng.uniform(-0.06, 0.06));
  const double cy = size * (0.5 + rng.uniform(-0.06, 0.06));
  const double half = size / 2.0;
  for (int r = 0; r < size; ++r) {
    auto* row = m.ptr<cv::Vec3b>(r);
    for (int c = 0; c < size; ++c) {
      const double d = std::hypot(r - cy, c - cx) / half;
      const double shade = std::clamp(1.05 - 0.45 * d * d, 0.3, 1.1);
      const double ripple = 1.0 + 0.05 * std::sin(d * (10 + g));
      row[c] = cv::Vec3b(clamp8(base_r * shade * ripple), clamp8(base_g * shade * ripple),
                         clamp8(base_b * shade * ripple));
    }
  }
  // Cartilage rings.
  for (int k = 1; k <= 3; ++k) {
    const int rad = static_cast<int>(size * (0.16 + 0.1 * k));
    cv::circle(m, {static_cast<int>(cx), static_cast<int>(cy)}, rad,
               cv::Scalar(std::min(255.0, base_r + 30), std::min(255.0, base_g + 35), std::min(255.0, base_b + 30)),
               std::max(1, size / 64), cv::LINE_AA);
  }
  // Lumen.
  const double lumen = size * (0.2 - 0.018 * g + rng.uniform(-0.015, 0.015));
  cv::ellipse(m, {static_cast<int>(cx), static_cast<int>(cy)},
              {static_cast<int>(lumen), static_cast<int>(lumen * rng.uniform(0.75, 1.0))}, rng.uniform(0, 180), 0,
              360, cv::Scalar(25, 12, 12), cv::FILLED, cv::LINE_AA);
  // Soot flecks.
  const int flecks = static_cast<int>(2 + 4 * g + rng.below(4));
  for (int i = 0; i < flecks; ++i) {
    const int fx = static_cast<int>(rng.uniform(0.1, 0.9) * size);
    const int fy = static_cast<int>(rng.uniform(0.1, 0.9) * size);
    const int fr = std::max(1, static_cast<int>(size * rng.uniform(0.006, 0.02)));
    const double k = rng.uniform(20, 60);
    cv::circle(m, {fx, fy}, fr, cv::Scalar(k, k, k), cv::FILLED, cv::LINE_AA);
  }
  // Sensor noise.
  for (int r = 0; r < size; ++r) {
    auto* row = m.ptr<cv::Vec3b>(r);
    for (int c = 0; c < size; ++c)
      for (int ch = 0; ch < 3; ++ch) row[c][ch] = clamp8(row[c][ch] + 5.0 * rng.normal());
  }
  return from_mat(m);
}

}  // namespace

Corpus bronchoscopy_corpus(const CorpusOptions& opts) {
  if (opts.images_per_patient < 1) throw ValidationError("bronchoscopy_corpus: images_per_patient must be >= 1");
  if (opts.size < 16) throw ValidationError("bronchoscopy_corpus: size must be >= 16");
  Corpus out;
  std::vector<ImageRecord> records;
  for (int g = 1; g <= GradeLabel::kCount; ++g) {
    const int patients = opts.patients_per_grade[static_cast<std::size_t>(g - 1)];
    if (patients < 0) throw ValidationError("bronchoscopy_corpus: negative patient count");
    for (int p = 0; p < patients; ++p) {
      Rng patient(derive_seed(opts.seed, {0xB7ULL, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(p)}));
      const auto [lo, hi] = kBands[static_cast<std::size_t>(g - 1)];
      const double hours = std::round((lo + (hi - lo) * patient.uniform(0.05, 0.95)) * 10.0) / 10.0;
      char id[32];
      std::snprintf(id, sizeof id, "P%d%02d", g, p);
      for (int k = 0; k < opts.images_per_patient; ++k) {
        ImageRecord rec;
        rec.patient_id = id;
        rec.grade = grade_from_ventilation(hours);
        rec.pixels = airway_frame(opts.size, g, patient,
                                  derive_seed(opts.seed, {0xB8ULL, static_cast<std::uint64_t>(g),
                                                          static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(k)}));
        rec.source_path = std::string(id) + "_" + std::to_string(k) + ".png";
        records.push_back(std::move(rec));
        out.ventilation_hours.push_back(hours);
      }
    }
  }
  out.dataset = Dataset(std::move(records));
  return out;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::vector<csv::Row> rows = {{"patient_id", "image_path", "ventilation_hours"}};
  for (std::size_t i = 0; i < corpus.dataset.size(); ++i) {
    const auto& rec = corpus.dataset[i];
    const auto rel = std::filesystem::path("images") / rec.source_path.filename();
    write_png(dir / rel, rec.pixels);
    char hours[32];
    std::snprintf(hours, sizeof hours, "%.1f", corpus.ventilation_hours[i]);
    rows.push_back({rec.patient_id, rel.generic_string(), hours});
  }
  csv::write_file(dir / "manifest.csv", rows);
}

}  // namespace bronchograde::synth

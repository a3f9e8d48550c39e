#include "bronchograde/plots.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace bronchograde::plots {

namespace {

const cv::Scalar kWhite(255, 255, 255);
const cv::Scalar kBlack(0, 0, 0);
const cv::Scalar kAxis(90, 90, 90);

// BGR palette, one per grade or series.
const std::vector<cv::Scalar> kPalette = {{40, 40, 40},   {60, 60, 220}, {60, 160, 60},
                                          {220, 120, 40}, {30, 160, 230}, {180, 60, 180},
                                          {120, 120, 0}};

Image from_bgr(const cv::Mat& bgr) {
  Image out(bgr.rows, bgr.cols);
  for (int r = 0; r < bgr.rows; ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < bgr.cols; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = row[c][2 - ch];
  }
  return out;
}

struct Frame {
  int left = 48, right = 16, top = 28, bottom = 28;
  int w = 0, h = 0;
  cv::Point map(double fx, double fy) const {  // fx, fy in [0, 1]
    return {left + static_cast<int>(std::lround(fx * (w - left - right))),
            h - bottom - static_cast<int>(std::lround(fy * (h - top - bottom)))};
  }
};

void draw_frame(cv::Mat& m, const Frame& f, const std::string& title) {
  cv::rectangle(m, f.map(0, 0), f.map(1, 1), kAxis, 1);
  cv::putText(m, title, {f.left, 18}, cv::FONT_HERSHEY_SIMPLEX, 0.45, kBlack, 1, cv::LINE_AA);
}

void polyline(cv::Mat& m, const Frame& f, const std::vector<double>& ys, double lo, double hi,
              const cv::Scalar& colour) {
  if (ys.size() < 2) return;
  std::vector<cv::Point> pts;
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    pts.push_back(f.map(static_cast<double>(i) / static_cast<double>(ys.size() - 1), (ys[i] - lo) / span));
  }
  cv::polylines(m, pts, false, colour, 1, cv::LINE_AA);
}

}  // namespace

Image histogram_panel(const interpret::ChannelHistograms& h, const std::string& title, int width, int height) {
  cv::Mat m(height, width, CV_8UC3, kWhite);
  Frame f;
  f.w = width;
  f.h = height;
  draw_frame(m, f, title);
  double hi = 0.0;
  for (const auto* d : {&h.overall, &h.red, &h.green, &h.blue}) hi = std::max(hi, *std::max_element(d->begin(), d->end()));
  const std::vector<std::pair<const interpret::Density*, cv::Scalar>> curves = {
      {&h.red, {40, 40, 220}}, {&h.green, {40, 170, 40}}, {&h.blue, {220, 80, 40}}, {&h.overall, kBlack}};
  for (const auto& [d, colour] : curves) polyline(m, f, std::vector<double>(d->begin(), d->end()), 0.0, hi, colour);
  cv::putText(m, "0", f.map(0, 0) + cv::Point(-4, 16), cv::FONT_HERSHEY_SIMPLEX, 0.35, kBlack);
  cv::putText(m, "255", f.map(1, 0) + cv::Point(-20, 16), cv::FONT_HERSHEY_SIMPLEX, 0.35, kBlack);
  return from_bgr(m);
}

Image spectrum_panel(const interpret::FrequencySpectrum& s, double low_radius_fraction) {
  if (s.height < 1 || s.width < 1) return Image(1, 1);
  const auto [lo_it, hi_it] = std::minmax_element(s.log_magnitude.begin(), s.log_magnitude.end());
  const double lo = *lo_it;
  const double span = *hi_it > lo ? *hi_it - lo : 1.0;
  cv::Mat grey(s.height, s.width, CV_8UC1);
  for (int r = 0; r < s.height; ++r)
    for (int c = 0; c < s.width; ++c) {
      const double v = (s.log_magnitude[static_cast<std::size_t>(r) * s.width + c] - lo) / span * 255.0;
      grey.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
    }
  cv::Mat bgr;
  cv::cvtColor(grey, bgr, cv::COLOR_GRAY2BGR);
  const int radius = static_cast<int>(std::lround(low_radius_fraction * std::min(s.height, s.width) / 2.0));
  cv::circle(bgr, {s.width / 2, s.height / 2}, radius, cv::Scalar(40, 40, 220), 1, cv::LINE_AA);
  return from_bgr(bgr);
}

Image pca_scatter(const interpret::FeatureEmbedding& e, const std::string& title, int size) {
  cv::Mat m(size, size, CV_8UC3, kWhite);
  Frame f;
  f.w = size;
  f.h = size;
  char buf[64];
  std::snprintf(buf, sizeof buf, "  silhouette %.3f", e.separability);
  draw_frame(m, f, title + buf);
  if (e.coordinates.rows() == 0 || e.coordinates.cols() < 1) return from_bgr(m);
  const auto x = e.coordinates.col(0);
  const Eigen::VectorXd y = e.coordinates.cols() > 1 ? Eigen::VectorXd(e.coordinates.col(1))
                                                     : Eigen::VectorXd::Zero(e.coordinates.rows());
  const auto norm = [](double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) : 0.5; };
  for (Eigen::Index i = 0; i < e.coordinates.rows(); ++i) {
    const int label = i < static_cast<Eigen::Index>(e.labels.size()) ? e.labels[static_cast<std::size_t>(i)] : 0;
    const auto colour = kPalette[static_cast<std::size_t>(std::clamp(label, 0, 6))];
    const auto p = f.map(0.03 + 0.94 * norm(x(i), x.minCoeff(), x.maxCoeff()),
                         0.03 + 0.94 * norm(y(i), y.minCoeff(), y.maxCoeff()));
    cv::circle(m, p, 3, colour, cv::FILLED, cv::LINE_AA);
  }
  for (int g = 1; g <= 6; ++g) {
    const cv::Point at(size - 70, 40 + 14 * g);
    cv::circle(m, at, 4, kPalette[static_cast<std::size_t>(g)], cv::FILLED);
    cv::putText(m, "grade " + std::to_string(g), at + cv::Point(8, 4), cv::FONT_HERSHEY_SIMPLEX, 0.35, kBlack);
  }
  return from_bgr(m);
}

Image loss_curves(const std::map<std::string, std::vector<double>>& series, const std::string& title, int width,
                  int height) {
  cv::Mat m(height, width, CV_8UC3, kWhite);
  Frame f;
  f.w = width;
  f.h = height;
  draw_frame(m, f, title);
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& [_, ys] : series)
    for (double v : ys) {
      if (!std::isfinite(v)) continue;
      lo = first ? v : std::min(lo, v);
      hi = first ? v : std::max(hi, v);
      first = false;
    }
  std::size_t i = 0;
  for (const auto& [name, ys] : series) {
    const auto colour = kPalette[(i + 1) % kPalette.size()];
    polyline(m, f, ys, lo, hi, colour);
    cv::putText(m, name, {width - 140, 40 + 14 * static_cast<int>(i)}, cv::FONT_HERSHEY_SIMPLEX, 0.35, colour);
    ++i;
  }
  return from_bgr(m);
}

}  // namespace bronchograde::plots

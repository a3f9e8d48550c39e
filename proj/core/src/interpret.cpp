#include "bronchograde/interpret.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <memory>
#include <mutex>

#include "bronchograde/errors.hpp"
#include "bronchograde/log.hpp"

namespace bronchograde::interpret {

namespace {

void normalise(std::array<std::uint64_t, 256>& counts, Density& out) {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  for (std::size_t i = 0; i < 256; ++i) {
    out[i] = total ? static_cast<double>(counts[i]) / static_cast<double>(total) : 0.0;
  }
}

// FFTW planning is not thread safe.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

ChannelHistograms channel_histograms(std::span<const Image> images) {
  if (images.empty()) throw PreconditionError("channel_histograms: empty image set");
  std::array<std::uint64_t, 256> all{}, r{}, g{}, b{};
  for (const auto& img : images) {
    const auto px = img.data();
    for (std::size_t i = 0; i + 2 < px.size(); i += 3) {
      ++r[px[i]];
      ++g[px[i + 1]];
      ++b[px[i + 2]];
      ++all[px[i]];
      ++all[px[i + 1]];
      ++all[px[i + 2]];
    }
  }
  ChannelHistograms h;
  normalise(all, h.overall);
  normalise(r, h.red);
  normalise(g, h.green);
  normalise(b, h.blue);
  return h;
}

ChannelHistograms channel_histograms(const Dataset& images) {
  std::vector<Image> pixels;
  pixels.reserve(images.size());
  for (const auto& rec : images) pixels.push_back(rec.pixels);
  return channel_histograms(pixels);
}

std::vector<double> grayscale(const Image& img) {
  std::vector<double> out(static_cast<std::size_t>(img.height()) * static_cast<std::size_t>(img.width()));
  const auto px = img.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (static_cast<double>(px[3 * i]) + px[3 * i + 1] + px[3 * i + 2]) / 3.0;
  }
  return out;
}

FrequencySpectrum frequency_spectrum(const Image& img, double low_radius_fraction) {
  if (img.height() < 2 || img.width() < 2) {
    throw ValidationError("frequency_spectrum: image must be at least 2x2");
  }
  if (!(low_radius_fraction > 0.0)) throw ValidationError("low_radius_fraction must be positive");
  const int h = img.height();
  const int w = img.width();
  const auto n = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const auto gray = grayscale(img);

  std::unique_ptr<fftw_complex, FftwFree> buf(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
  for (std::size_t i = 0; i < n; ++i) {
    buf.get()[i][0] = gray[i];
    buf.get()[i][1] = 0.0;
  }
  {
    std::lock_guard lock(fftw_mutex());
    fftw_plan plan = fftw_plan_dft_2d(h, w, buf.get(), buf.get(), FFTW_FORWARD, FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
  }

  FrequencySpectrum spec;
  spec.height = h;
  spec.width = w;
  spec.low_radius_fraction = low_radius_fraction;
  spec.log_magnitude.assign(n, 0.0);
  const double radius = low_radius_fraction * std::min(h, w) / 2.0;
  const int cy = h / 2;
  const int cx = w / 2;
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      const auto& f = buf.get()[static_cast<std::size_t>(u) * w + v];
      const double power = f[0] * f[0] + f[1] * f[1];
      const int su = (u + cy) % h;  // shifted row
      const int sv = (v + cx) % w;
      spec.log_magnitude[static_cast<std::size_t>(su) * w + sv] = std::log1p(std::sqrt(power));
      const double dy = su - cy;
      const double dx = sv - cx;
      if (dy * dy + dx * dx <= radius * radius) spec.low_band_energy += power;
      else spec.high_band_energy += power;
    }
  }
  return spec;
}

FrequencySpectrum mean_spectrum(std::span<const Image> images, double low_radius_fraction) {
  if (images.empty()) throw PreconditionError("mean_spectrum: empty image set");
  FrequencySpectrum acc;
  for (const auto& img : images) {
    auto s = frequency_spectrum(img, low_radius_fraction);
    if (acc.log_magnitude.empty()) {
      acc = std::move(s);
      continue;
    }
    if (s.height != acc.height || s.width != acc.width) {
      throw ValidationError("mean_spectrum: images differ in size");
    }
    for (std::size_t i = 0; i < acc.log_magnitude.size(); ++i) acc.log_magnitude[i] += s.log_magnitude[i];
    acc.low_band_energy += s.low_band_energy;
    acc.high_band_energy += s.high_band_energy;
  }
  const double n = static_cast<double>(images.size());
  for (auto& v : acc.log_magnitude) v /= n;
  acc.low_band_energy /= n;
  acc.high_band_energy /= n;
  return acc;
}

FeatureEmbedding pca_project(const Eigen::MatrixXd& features, int n_components) {
  const auto n = features.rows();
  const auto d = features.cols();
  if (n < 2) throw PreconditionError("pca_project: need at least two samples");
  if (n_components < 1 || d < n_components) {
    throw PreconditionError("pca_project: feature dimension below n_components");
  }
  FeatureEmbedding emb;
  emb.mean = features.colwise().mean();
  const Eigen::MatrixXd centered = features.rowwise() - emb.mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  const double total = cov.trace();
  const double scale = std::max(1.0, features.cwiseAbs().maxCoeff());
  if (!(total > 1e-24 * scale * scale * static_cast<double>(d))) {
    throw PreconditionError("pca_project: zero-variance data, nothing to project");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("pca_project: eigendecomposition failed");

  // Eigen returns ascending eigenvalues.
  emb.components.resize(n_components, d);
  for (int k = 0; k < n_components; ++k) {
    const auto col = d - 1 - k;
    Eigen::RowVectorXd comp = eig.eigenvectors().col(col).transpose();
    Eigen::Index arg = 0;
    comp.cwiseAbs().maxCoeff(&arg);
    if (comp(arg) < 0) comp = -comp;
    emb.components.row(k) = comp;
    emb.explained_variance_ratio.push_back(std::clamp(eig.eigenvalues()(col) / total, 0.0, 1.0));
  }
  emb.coordinates = centered * emb.components.transpose();
  return emb;
}

double separability_score(const Eigen::MatrixXd& coordinates, const std::vector<int>& labels) {
  const auto n = static_cast<std::size_t>(coordinates.rows());
  if (labels.size() != n) throw ValidationError("separability_score: label count mismatch");
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);
  if (members.size() < 2) throw PreconditionError("separability_score: need at least two classes");

  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, double> dist_sum;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      dist_sum[labels[j]] += (coordinates.row(static_cast<Eigen::Index>(i)) -
                              coordinates.row(static_cast<Eigen::Index>(j))).norm();
    }
    const auto& own = members[labels[i]];
    if (own.size() < 2) continue;  // singleton cluster: silhouette 0
    const double a = dist_sum[labels[i]] / static_cast<double>(own.size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, idx] : members) {
      if (label == labels[i]) continue;
      b = std::min(b, dist_sum[label] / static_cast<double>(idx.size()));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) sum += (b - a) / denom;
  }
  return sum / static_cast<double>(n);
}

Heatmap grad_cam_from_maps(const FeatureMaps& activations, const FeatureMaps& gradients,
                           int out_height, int out_width) {
  if (activations.channels != gradients.channels || activations.height != gradients.height ||
      activations.width != gradients.width) {
    throw ValidationError("grad_cam: activation and gradient shapes differ");
  }
  const int k = activations.channels;
  const int h = activations.height;
  const int w = activations.width;
  const auto plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  if (k < 1 || h < 1 || w < 1 || activations.data.size() != plane * k ||
      gradients.data.size() != plane * k) {
    throw PreconditionError("grad_cam: model provides no spatial feature maps");
  }
  if (out_height < 1 || out_width < 1) throw ValidationError("grad_cam: bad output size");

  Heatmap hm;
  hm.raw_height = h;
  hm.raw_width = w;
  hm.raw.assign(plane, 0.0);
  for (int c = 0; c < k; ++c) {
    double alpha = 0.0;
    for (std::size_t i = 0; i < plane; ++i) alpha += gradients.data[c * plane + i];
    alpha /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) hm.raw[i] += alpha * activations.data[c * plane + i];
  }
  for (auto& v : hm.raw) v = std::max(v, 0.0);

  // Bilinear upsample, half-pixel centres, edges clamped.
  std::vector<double> up(static_cast<std::size_t>(out_height) * out_width);
  const double sy = static_cast<double>(h) / out_height;
  const double sx = static_cast<double>(w) / out_width;
  for (int r = 0; r < out_height; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = y - y0;
    for (int c = 0; c < out_width; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = x - x0;
      const auto at = [&](int yy, int xx) { return hm.raw[static_cast<std::size_t>(yy) * w + xx]; };
      const double top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
      const double bottom = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
      up[static_cast<std::size_t>(r) * out_width + c] = top * (1 - fy) + bottom * fy;
    }
  }

  hm.height = out_height;
  hm.width = out_width;
  hm.values.assign(up.size(), 0);
  const auto [mn_it, mx_it] = std::minmax_element(up.begin(), up.end());
  const double mn = *mn_it;
  const double mx = *mx_it;
  if (mx > mn) {
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double v = (up[i] - mn) / (mx - mn) * 255.0;
      hm.values[i] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
    }
  } else if (mx > 0.0) {
    std::fill(hm.values.begin(), hm.values.end(), std::uint8_t{255});
  }
  double sum = 0.0;
  for (auto v : hm.values) sum += v;
  hm.mean_intensity = sum / static_cast<double>(hm.values.size());
  return hm;
}

IntensityTable mean_intensity_table(
    const std::map<std::pair<int, std::string>, std::vector<double>>& per_image_means,
    const std::vector<std::string>& methods) {
  IntensityTable table;
  table.methods = methods;
  for (auto g : all_grades()) {
    auto& row = table.cells[static_cast<std::size_t>(g.index())];
    for (const auto& m : methods) {
      auto it = per_image_means.find({g.value(), m});
      if (it == per_image_means.end() || it->second.empty()) {
        log::warn("mean_intensity_table: no heatmaps for grade ", g.value(), " / ", m);
        row.push_back(std::nullopt);
        continue;
      }
      double s = 0.0;
      for (double v : it->second) s += v;
      row.push_back(s / static_cast<double>(it->second.size()));
    }
  }
  return table;
}

std::vector<std::vector<std::string>> intensity_csv(const IntensityTable& table) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"grade"};
  header.insert(header.end(), table.methods.begin(), table.methods.end());
  rows.push_back(header);
  for (auto g : all_grades()) {
    std::vector<std::string> row = {"grade " + std::to_string(g.value())};
    for (const auto& cell : table.cells[static_cast<std::size_t>(g.index())]) {
      if (!cell) {
        row.emplace_back();
        continue;
      }
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", *cell);
      row.emplace_back(buf);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace bronchograde::interpret

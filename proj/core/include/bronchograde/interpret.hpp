#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bronchograde/data_model.hpp"
#include "bronchograde/feature_maps.hpp"
#include "bronchograde/image.hpp"

namespace bronchograde::classify {
class TrainedClassifier;
}

namespace bronchograde::interpret {

using Density = std::array<double, 256>;

/// Pixel-value densities pooled over every pixel of every image in the group.
struct ChannelHistograms {
  Density overall{};  ///< all three channels pooled
  Density red{};
  Density green{};
  Density blue{};
};

ChannelHistograms channel_histograms(std::span<const Image> images);
ChannelHistograms channel_histograms(const Dataset& images);

/// Equal-weight channel mean, row-major.
std::vector<double> grayscale(const Image& img);

struct FrequencySpectrum {
  int height = 0;
  int width = 0;
  /// log(1 + |F|) with the DC term moved to (height/2, width/2), row-major.
  std::vector<double> log_magnitude;
  double low_band_energy = 0.0;   ///< sum of |F|^2 within the radius
  double high_band_energy = 0.0;  ///< sum of |F|^2 outside it
  double low_radius_fraction = 0.25;

  double total_energy() const { return low_band_energy + high_band_energy; }
};

/// Grayscale -> 2-D DFT -> centered log-magnitude; band split at
/// radius = low_radius_fraction * min(H, W) / 2 around the centered DC bin (inclusive).
FrequencySpectrum frequency_spectrum(const Image& img, double low_radius_fraction = 0.25);

/// Mean spectrum of a group (log magnitudes averaged, band energies averaged).
FrequencySpectrum mean_spectrum(std::span<const Image> images, double low_radius_fraction = 0.25);

struct FeatureEmbedding {
  Eigen::MatrixXd coordinates;  ///< n x n_components
  Eigen::MatrixXd components;   ///< n_components x d, orthonormal rows
  Eigen::RowVectorXd mean;      ///< 1 x d
  std::vector<double> explained_variance_ratio;
  std::vector<int> labels;
  double separability = 0.0;
};

/// Mean-centres columns (no scaling) and projects onto the top principal directions.
/// Each component's largest-magnitude loading is made positive.
/// Throws PreconditionError when n < 2, d < n_components, or the data has zero variance.
FeatureEmbedding pca_project(const Eigen::MatrixXd& features, int n_components = 2);

/// Mean silhouette coefficient (Euclidean). Points whose intra- and nearest-other-cluster
/// distances are both zero score 0. Throws PreconditionError with fewer than two classes.
double separability_score(const Eigen::MatrixXd& coordinates, const std::vector<int>& labels);

using bronchograde::FeatureMaps;

struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;  ///< row-major, 0..255
  double mean_intensity = 0.0;
  /// Non-negative weighted map before upsampling and normalisation.
  std::vector<double> raw;
  int raw_height = 0;
  int raw_width = 0;
};

/// alpha_k = spatial mean of gradient map k; raw = ReLU(sum_k alpha_k A_k); bilinear upsample
/// to (out_height, out_width); min-max scale to [0, 255] rounding half up. A constant
/// positive map becomes all 255, an all-zero map stays all 0.
Heatmap grad_cam_from_maps(const FeatureMaps& activations, const FeatureMaps& gradients,
                           int out_height, int out_width);

/// Grad-CAM against the classifier's last spatial layer; heatmap aligned to `img`.
Heatmap grad_cam(const classify::TrainedClassifier& model, const Image& img, int target_class);

/// Heatmap blended over the image at the given opacity using a jet colour map.
Image overlay(const Image& img, const Heatmap& heatmap, double opacity = 0.4);

inline const std::vector<std::string>& table3_methods() {
  static const std::vector<std::string> m = {"Original", "Transformations", "CycleGAN", "CUT"};
  return m;
}

/// Rows are grades 1..6, columns methods; an empty cell means no heatmaps for that group.
struct IntensityTable {
  std::vector<std::string> methods;
  std::array<std::vector<std::optional<double>>, GradeLabel::kCount> cells;
};

/// Mean of per-image mean intensities per (grade, method). Groups without heatmaps leave a
/// blank cell and log a warning.
IntensityTable mean_intensity_table(
    const std::map<std::pair<int, std::string>, std::vector<double>>& per_image_means,
    const std::vector<std::string>& methods = table3_methods());

std::vector<std::vector<std::string>> intensity_csv(const IntensityTable& table);

}  // namespace bronchograde::interpret

#pragma once

#include <map>
#include <string>
#include <vector>

#include "bronchograde/image.hpp"
#include "bronchograde/interpret.hpp"

namespace bronchograde::plots {

/// Overall and per-channel density curves on a white canvas.
Image histogram_panel(const interpret::ChannelHistograms& h, const std::string& title, int width = 512,
                      int height = 320);

/// Centred log-magnitude rendered to 8-bit grey, with the low-band radius outlined.
Image spectrum_panel(const interpret::FrequencySpectrum& s, double low_radius_fraction = 0.25);

/// First two PCA coordinates coloured by grade.
Image pca_scatter(const interpret::FeatureEmbedding& e, const std::string& title, int size = 480);

/// One polyline per series over epochs.
Image loss_curves(const std::map<std::string, std::vector<double>>& series, const std::string& title,
                  int width = 512, int height = 320);

}  // namespace bronchograde::plots

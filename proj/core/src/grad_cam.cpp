#include <opencv2/imgproc.hpp>

#include "bronchograde/classify.hpp"
#include "bronchograde/errors.hpp"
#include "bronchograde/interpret.hpp"

namespace bronchograde::interpret {

Heatmap grad_cam(const classify::TrainedClassifier& model, const Image& img, int target_class) {
  if (target_class < GradeLabel::kMin || target_class > GradeLabel::kMax) {
    throw ValidationError("grad_cam: target class must be a grade in [1, 6], got " +
                          std::to_string(target_class));
  }
  if (img.empty()) throw ValidationError("grad_cam: empty image");
  const auto probe = model.activations_and_gradients(img, target_class);
  return grad_cam_from_maps(probe.activations, probe.gradients, img.height(), img.width());
}

Image overlay(const Image& img, const Heatmap& heatmap, double opacity) {
  if (heatmap.height != img.height() || heatmap.width != img.width()) {
    throw ValidationError("overlay: heatmap and image sizes differ");
  }
  if (!(opacity >= 0.0 && opacity <= 1.0)) throw ValidationError("overlay: opacity must be in [0, 1]");
  cv::Mat gray(heatmap.height, heatmap.width, CV_8UC1, const_cast<std::uint8_t*>(heatmap.values.data()));
  cv::Mat bgr;
  cv::applyColorMap(gray, bgr, cv::COLORMAP_JET);
  Image out(img.height(), img.width());
  for (int r = 0; r < img.height(); ++r) {
    const auto* row = bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < img.width(); ++c) {
      for (int ch = 0; ch < Image::kChannels; ++ch) {
        const double heat = row[c][2 - ch];  // BGR -> RGB
        const double v = (1.0 - opacity) * img.at(r, c, ch) + opacity * heat;
        out.at(r, c, ch) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

}  // namespace bronchograde::interpret

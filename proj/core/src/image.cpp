#include "bronchograde/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "bronchograde/errors.hpp"
#include "bronchograde/hash.hpp"

namespace bronchograde {

Image::Image(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) throw ValidationError("image dimensions must be non-negative");
  data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * kChannels, fill);
}

Image::Image(int height, int width, std::vector<std::uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (height < 0 || width < 0) throw ValidationError("image dimensions must be non-negative");
  if (data_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * kChannels) {
    throw ValidationError("pixel buffer does not match " + std::to_string(height) + "x" +
                          std::to_string(width) + "x3");
  }
}

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw LoadError("image not found: " + path.string());
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw LoadError("cannot decode image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (!rgb.isContinuous()) rgb = rgb.clone();
  std::vector<std::uint8_t> data(rgb.datastart, rgb.dataend);
  return Image(rgb.rows, rgb.cols, std::move(data));
}

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.empty()) throw ValidationError("refusing to write empty image: " + path.string());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat rgb(img.height(), img.width(), CV_8UC3, const_cast<std::uint8_t*>(img.data().data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  // Fixed compression level keeps the encoded bytes reproducible.
  if (!cv::imwrite(path.string(), bgr, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    throw LoadError("cannot write image: " + path.string());
  }
}

std::string content_hash(const Image& img) {
  Sha256 h;
  const std::string dims = std::to_string(img.height()) + "x" + std::to_string(img.width()) + "x3;";
  h.update(dims);
  h.update(std::span<const unsigned char>(img.data().data(), img.data().size()));
  return h.hex_digest();
}

}  // namespace bronchograde

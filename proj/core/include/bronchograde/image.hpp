#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace bronchograde {

/// Interleaved 8-bit RGB pixel grid, row-major, channel order R, G, B.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  /// Allocates a height x width image filled with `fill` in every channel.
  Image(int height, int width, std::uint8_t fill = 0);
  Image(int height, int width, std::vector<std::uint8_t> data);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return data_.empty(); }
  std::size_t size_bytes() const { return data_.size(); }

  std::uint8_t& at(int row, int col, int channel) {
    return data_[index(row, col, channel)];
  }
  std::uint8_t at(int row, int col, int channel) const {
    return data_[index(row, col, channel)];
  }

  std::span<std::uint8_t> data() { return data_; }
  std::span<const std::uint8_t> data() const { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int row, int col, int channel) const {
    return (static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(col)) * kChannels + static_cast<std::size_t>(channel);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Decodes PNG or JPEG into 8-bit RGB. Throws LoadError on missing or undecodable files.
Image read_image(const std::filesystem::path& path);

/// Writes a lossless 8-bit PNG, creating parent directories as needed.
void write_png(const std::filesystem::path& path, const Image& img);

/// SHA-256 over the image dimensions and pixel bytes (independent of file encoding).
std::string content_hash(const Image& img);

}  // namespace bronchograde

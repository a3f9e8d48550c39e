#include "bronchograde/tensor_image.hpp"

#include "bronchograde/augment.hpp"
#include "bronchograde/errors.hpp"

namespace bronchograde {

torch::Tensor to_tensor(const Image& img, int size) {
  const Image sized = (img.height() == size && img.width() == size) ? img : augment::resize(img, size, size);
  auto hwc = torch::from_blob(const_cast<std::uint8_t*>(sized.data().data()), {size, size, 3},
                              torch::kUInt8);
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

torch::Tensor to_batch(const std::vector<const Image*>& images, int size) {
  std::vector<torch::Tensor> items;
  items.reserve(images.size());
  for (const auto* img : images) items.push_back(to_tensor(*img, size));
  return torch::stack(items);
}

Image from_tensor(const torch::Tensor& chw) {
  if (chw.dim() != 3 || chw.size(0) != 3) throw ValidationError("from_tensor expects [3, H, W]");
  const auto h = static_cast<int>(chw.size(1));
  const auto w = static_cast<int>(chw.size(2));
  auto hwc = chw.detach()
                 .to(torch::kFloat64)
                 .add(1.0)
                 .mul(127.5)
                 .add(0.5)
                 .floor()
                 .clamp(0.0, 255.0)
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  std::vector<std::uint8_t> data(hwc.data_ptr<std::uint8_t>(), hwc.data_ptr<std::uint8_t>() + hwc.numel());
  return Image(h, w, std::move(data));
}

}  // namespace bronchograde

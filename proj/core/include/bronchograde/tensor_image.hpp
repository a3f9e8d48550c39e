#pragma once

#include <torch/torch.h>

#include <vector>

#include "bronchograde/image.hpp"

namespace bronchograde {

/// Image -> float tensor [3, size, size] in [-1, 1] (resized first when size differs).
torch::Tensor to_tensor(const Image& img, int size);

/// Stacks images into [N, 3, size, size].
torch::Tensor to_batch(const std::vector<const Image*>& images, int size);

/// [3, H, W] tensor in [-1, 1] -> 8-bit image, rounding half up and clamping.
Image from_tensor(const torch::Tensor& chw);

}  // namespace bronchograde

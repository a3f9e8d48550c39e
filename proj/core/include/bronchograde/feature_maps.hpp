#pragma once

#include <vector>

namespace bronchograde {

/// Channel-major activation maps: data[k * height * width + r * width + c].
struct FeatureMaps {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;
};

}  // namespace bronchograde

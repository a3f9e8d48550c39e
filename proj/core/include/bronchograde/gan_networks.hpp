#pragma once

#include <torch/torch.h>

#include <optional>
#include <vector>

namespace bronchograde::gan {

struct GeneratorOptions {
  int ngf = 16;       ///< filters after the stem
  int n_down = 2;     ///< stride-2 downsamplings (and matching upsamplings)
  int n_blocks = 2;   ///< residual blocks at the bottleneck
};

struct DiscriminatorOptions {
  int ndf = 16;
  int n_layers = 2;  ///< stride-2 conv layers before the two stride-1 layers
};

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Encoder / residual bottleneck / decoder image-to-image network with a tanh output.
/// Stage 0 is the input itself; stages 1..n are stem, downsamplings, residual blocks,
/// upsamplings, and the output head, so `encode` can tap any of them.
class ResnetGeneratorImpl : public torch::nn::Module {
 public:
  explicit ResnetGeneratorImpl(const GeneratorOptions& opts = {});

  torch::Tensor forward(const torch::Tensor& x);

  /// Activations after each requested stage (ascending, stage 0 = input).
  std::vector<torch::Tensor> encode(const torch::Tensor& x, const std::vector<int>& stages);

  /// Stages that belong to the encoder half (input, stem, downsamplings, residual blocks).
  std::vector<int> encoder_stages() const;
  int stage_channels(int stage) const;
  int num_stages() const { return static_cast<int>(stages_.size()); }

 private:
  GeneratorOptions opts_;
  std::vector<torch::nn::Sequential> stages_;
  std::vector<int> channels_;
  int n_encoder_ = 0;
};
TORCH_MODULE(ResnetGenerator);

/// PatchGAN: a grid of real/fake logits, one per receptive field.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(const DiscriminatorOptions& opts = {});
  /// Logits [B, 1, h, w]; apply sigmoid for probabilities.
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// Samples spatial positions from each tapped feature map and projects them through a
/// per-layer two-layer MLP; outputs are L2-normalised [B, P, out_channels].
class PatchSampleMLPImpl : public torch::nn::Module {
 public:
  PatchSampleMLPImpl(const std::vector<int>& in_channels, int out_channels = 64);

  struct Sampled {
    std::vector<torch::Tensor> features;   ///< per layer [B, P, C]
    std::vector<torch::Tensor> positions;  ///< per layer [P] flat spatial indices
  };

  /// With `positions` empty, draws min(num_patches, H*W) positions per layer without
  /// replacement; otherwise reuses them (so query and key patches are co-located).
  Sampled forward(const std::vector<torch::Tensor>& feats, int num_patches,
                  const std::vector<torch::Tensor>& positions = {});

 private:
  std::vector<torch::nn::Sequential> mlps_;
};
TORCH_MODULE(PatchSampleMLP);

/// Normal(0, 0.02) conv weights, zero biases.
void init_weights(torch::nn::Module& module);

}  // namespace bronchograde::gan

#pragma once

#include <torch/torch.h>

#include <vector>

#include "bronchograde/classify.hpp"

namespace bronchograde::classify {

/// Everything a forward pass exposes: the last spatial map, the pooled features feeding the
/// head, and the logits.
struct ForwardOutputs {
  torch::Tensor spatial;   ///< [B, K, h, w]; undefined when the backbone has none
  torch::Tensor features;  ///< [B, D]
  torch::Tensor logits;    ///< [B, 6]
  /// Extra state the head path needs besides the spatial map (ViT: the class token
  /// entering the last block).
  torch::Tensor context;
};

class ClassifierNet : public torch::nn::Module {
 public:
  virtual ForwardOutputs forward_all(const torch::Tensor& x) = 0;
  /// Layers after the spatial map: maps [B, K, h, w] (plus forward context) -> logits.
  virtual torch::Tensor logits_from_spatial(const torch::Tensor& spatial,
                                            const torch::Tensor& context) = 0;
  virtual int feature_dim() const = 0;
  virtual torch::nn::Linear& head() = 0;
  /// Modules trained under TrainableScope::last_block_and_head (head excluded).
  virtual std::vector<std::shared_ptr<torch::nn::Module>> last_block() = 0;
};

/// Inception-style CNN: conv stem, two inception blocks (1x1, 3x3, double-3x3, pool-proj
/// branches) with max-pooling between, global average pooling, linear head.
class InceptionNet : public ClassifierNet {
 public:
  InceptionNet(int width, int num_classes);
  ForwardOutputs forward_all(const torch::Tensor& x) override;
  torch::Tensor logits_from_spatial(const torch::Tensor& spatial,
                                    const torch::Tensor& context) override;
  int feature_dim() const override { return feature_dim_; }
  torch::nn::Linear& head() override { return head_; }
  std::vector<std::shared_ptr<torch::nn::Module>> last_block() override;

 private:
  torch::nn::Sequential stem_{nullptr};
  std::shared_ptr<torch::nn::Module> block_a_;
  std::shared_ptr<torch::nn::Module> block_b_;
  torch::nn::Linear head_{nullptr};
  int feature_dim_;
};

/// Patch-embedding transformer with a class token; features are the normalised class token.
/// Its spatial map is the patch-token grid entering the final block (the class token
/// attends to it there, so gradients reach every position).
class VisionTransformer : public ClassifierNet {
 public:
  VisionTransformer(int image_size, const VitOptions& opts, int num_classes);
  ForwardOutputs forward_all(const torch::Tensor& x) override;
  torch::Tensor logits_from_spatial(const torch::Tensor& spatial,
                                    const torch::Tensor& context) override;
  int feature_dim() const override { return opts_.dim; }
  torch::nn::Linear& head() override { return head_; }
  std::vector<std::shared_ptr<torch::nn::Module>> last_block() override;

 private:
  torch::Tensor features_from_spatial(const torch::Tensor& spatial, const torch::Tensor& context);

  VitOptions opts_;
  int grid_;
  torch::nn::Conv2d patch_embed_{nullptr};
  torch::Tensor cls_token_;
  torch::Tensor pos_embed_;
  std::vector<std::shared_ptr<torch::nn::Module>> blocks_;
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear head_{nullptr};
};

std::shared_ptr<ClassifierNet> make_network(const ClassifierConfig& cfg);

}  // namespace bronchograde::classify

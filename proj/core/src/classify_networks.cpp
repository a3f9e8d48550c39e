#include "bronchograde/classify_networks.hpp"

#include <cmath>

#include "bronchograde/errors.hpp"

namespace bronchograde::classify {

namespace nn = torch::nn;

namespace {

class ConvBnImpl : public nn::Module {
 public:
  ConvBnImpl(int in, int out, int k)
      : conv_(register_module("conv", nn::Conv2d(nn::Conv2dOptions(in, out, k).padding(k / 2).bias(false)))),
        bn_(register_module("bn", nn::BatchNorm2d(out))) {}

  torch::Tensor forward(const torch::Tensor& x) { return torch::relu(bn_->forward(conv_->forward(x))); }

 private:
  nn::Conv2d conv_;
  nn::BatchNorm2d bn_;
};
TORCH_MODULE(ConvBn);

ConvBn conv_bn(int in, int out, int k) { return ConvBn(in, out, k); }

class InceptionBlockImpl : public nn::Module {
 public:
  /// Branch widths: 1x1, 3x3 (after 1x1 reduce), double 3x3 (after reduce), pool projection.
  InceptionBlockImpl(int in, int b1, int b3_reduce, int b3, int b5_reduce, int b5, int pool_proj) {
    branch1_ = register_module("branch1", nn::Sequential(conv_bn(in, b1, 1)));
    branch3_ = register_module("branch3", nn::Sequential(conv_bn(in, b3_reduce, 1), conv_bn(b3_reduce, b3, 3)));
    branch5_ = register_module("branch5", nn::Sequential(conv_bn(in, b5_reduce, 1), conv_bn(b5_reduce, b5, 3),
                                                         conv_bn(b5, b5, 3)));
    pool_ = register_module("pool", nn::Sequential(nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(1).padding(1)),
                                                   conv_bn(in, pool_proj, 1)));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    return torch::cat({branch1_->forward(x), branch3_->forward(x), branch5_->forward(x), pool_->forward(x)}, 1);
  }

 private:
  nn::Sequential branch1_{nullptr}, branch3_{nullptr}, branch5_{nullptr}, pool_{nullptr};
};
TORCH_MODULE(InceptionBlock);

class TransformerBlockImpl : public nn::Module {
 public:
  TransformerBlockImpl(int dim, int heads, int mlp_dim) : heads_(heads) {
    if (dim % heads != 0) throw ValidationError("vit: dim must be divisible by heads");
    norm1_ = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})));
    qkv_ = register_module("qkv", nn::Linear(dim, 3 * dim));
    proj_ = register_module("proj", nn::Linear(dim, dim));
    norm2_ = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})));
    mlp_ = register_module("mlp", nn::Sequential(nn::Linear(dim, mlp_dim), nn::GELU(), nn::Linear(mlp_dim, dim)));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    const auto b = x.size(0);
    const auto t = x.size(1);
    const auto d = x.size(2);
    const auto hd = d / heads_;
    auto qkv = qkv_->forward(norm1_->forward(x)).reshape({b, t, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
    auto q = qkv[0], k = qkv[1], v = qkv[2];  // [B, H, T, hd]
    auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd)), -1);
    auto mixed = torch::matmul(attn, v).transpose(1, 2).reshape({b, t, d});
    auto h = x + proj_->forward(mixed);
    return h + mlp_->forward(norm2_->forward(h));
  }

 private:
  int heads_;
  nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  nn::Linear qkv_{nullptr}, proj_{nullptr};
  nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(TransformerBlock);

}  // namespace

InceptionNet::InceptionNet(int width, int num_classes) {
  if (width < 2 || width % 2 != 0) throw ValidationError("inception width must be an even number >= 2");
  const int w = width;
  stem_ = register_module("stem", nn::Sequential(conv_bn(3, w, 3), conv_bn(w, 2 * w, 3),
                                                 nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2))));
  block_a_ = register_module("block_a", InceptionBlock(2 * w, w, w / 2, w, w / 2, w, w).ptr());
  block_b_ = register_module("block_b", InceptionBlock(4 * w, 2 * w, w, 2 * w, w, 2 * w, 2 * w).ptr());
  feature_dim_ = 8 * w;
  head_ = register_module("head", nn::Linear(feature_dim_, num_classes));
}

ForwardOutputs InceptionNet::forward_all(const torch::Tensor& x) {
  auto h = stem_->forward(x);
  h = std::dynamic_pointer_cast<InceptionBlockImpl>(block_a_)->forward(h);
  h = torch::max_pool2d(h, 2, 2);
  ForwardOutputs out;
  out.spatial = std::dynamic_pointer_cast<InceptionBlockImpl>(block_b_)->forward(h);
  out.features = out.spatial.mean({2, 3});
  out.logits = head_->forward(out.features);
  return out;
}

torch::Tensor InceptionNet::logits_from_spatial(const torch::Tensor& spatial, const torch::Tensor&) {
  return head_->forward(spatial.mean({2, 3}));
}

std::vector<std::shared_ptr<nn::Module>> InceptionNet::last_block() { return {block_b_}; }

VisionTransformer::VisionTransformer(int image_size, const VitOptions& opts, int num_classes)
    : opts_(opts) {
  if (opts.patch_size < 1 || image_size % opts.patch_size != 0) {
    throw ValidationError("vit: input size must be a multiple of the patch size");
  }
  if (opts.depth < 1) throw ValidationError("vit: depth must be >= 1");
  grid_ = image_size / opts.patch_size;
  patch_embed_ = register_module(
      "patch_embed", nn::Conv2d(nn::Conv2dOptions(3, opts.dim, opts.patch_size).stride(opts.patch_size)));
  cls_token_ = register_parameter("cls_token", torch::randn({1, 1, opts.dim}) * 0.02);
  pos_embed_ = register_parameter("pos_embed", torch::randn({1, grid_ * grid_ + 1, opts.dim}) * 0.02);
  for (int i = 0; i < opts.depth; ++i) {
    blocks_.push_back(
        register_module("block" + std::to_string(i), TransformerBlock(opts.dim, opts.heads, opts.mlp_dim).ptr()));
  }
  norm_ = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({opts.dim})));
  head_ = register_module("head", nn::Linear(opts.dim, num_classes));
}

ForwardOutputs VisionTransformer::forward_all(const torch::Tensor& x) {
  const auto b = x.size(0);
  auto tokens = patch_embed_->forward(x).flatten(2).transpose(1, 2);  // [B, N, D]
  auto h = torch::cat({cls_token_.expand({b, 1, opts_.dim}), tokens}, 1) + pos_embed_;
  for (std::size_t i = 0; i + 1 < blocks_.size(); ++i) {
    h = std::dynamic_pointer_cast<TransformerBlockImpl>(blocks_[i])->forward(h);
  }
  ForwardOutputs out;
  out.context = h.slice(1, 0, 1);
  out.spatial = h.slice(1, 1).transpose(1, 2).reshape({b, opts_.dim, grid_, grid_});
  out.features = features_from_spatial(out.spatial, out.context);
  out.logits = head_->forward(out.features);
  return out;
}

torch::Tensor VisionTransformer::features_from_spatial(const torch::Tensor& spatial,
                                                       const torch::Tensor& context) {
  if (!context.defined()) throw PreconditionError("vit: class-token context required");
  auto seq = torch::cat({context, spatial.flatten(2).transpose(1, 2)}, 1);
  seq = std::dynamic_pointer_cast<TransformerBlockImpl>(blocks_.back())->forward(seq);
  return norm_->forward(seq.select(1, 0));
}

torch::Tensor VisionTransformer::logits_from_spatial(const torch::Tensor& spatial, const torch::Tensor& context) {
  return head_->forward(features_from_spatial(spatial, context));
}

std::vector<std::shared_ptr<nn::Module>> VisionTransformer::last_block() {
  return {blocks_.back(), norm_.ptr()};
}

std::shared_ptr<ClassifierNet> make_network(const ClassifierConfig& cfg) {
  cfg.validate();
  if (cfg.backbone == Backbone::inception_cnn) {
    return std::make_shared<InceptionNet>(cfg.width, GradeLabel::kCount);
  }
  return std::make_shared<VisionTransformer>(cfg.input_size, cfg.vit, GradeLabel::kCount);
}

}  // namespace bronchograde::classify

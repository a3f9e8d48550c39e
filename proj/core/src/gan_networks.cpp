#include "bronchograde/gan_networks.hpp"

#include "bronchograde/errors.hpp"

namespace bronchograde::gan {

namespace nn = torch::nn;

namespace {

nn::InstanceNorm2d instance_norm(int c) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(c).affine(false).track_running_stats(false));
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  body_ = register_module(
      "body",
      nn::Sequential(nn::ReflectionPad2d(1), nn::Conv2d(nn::Conv2dOptions(channels, channels, 3)),
                     instance_norm(channels), nn::ReLU(), nn::ReflectionPad2d(1),
                     nn::Conv2d(nn::Conv2dOptions(channels, channels, 3)), instance_norm(channels)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) { return x + body_->forward(x); }

ResnetGeneratorImpl::ResnetGeneratorImpl(const GeneratorOptions& opts) : opts_(opts) {
  if (opts.ngf < 1 || opts.n_down < 0 || opts.n_blocks < 0) {
    throw ValidationError("generator options must be positive");
  }
  // Stage 0 (the input) has no module.
  channels_.push_back(3);
  int c = opts.ngf;
  stages_.push_back(nn::Sequential(nn::ReflectionPad2d(3), nn::Conv2d(nn::Conv2dOptions(3, c, 7)),
                                   instance_norm(c), nn::ReLU()));
  channels_.push_back(c);
  for (int i = 0; i < opts.n_down; ++i) {
    stages_.push_back(nn::Sequential(nn::Conv2d(nn::Conv2dOptions(c, 2 * c, 3).stride(2).padding(1)),
                                     instance_norm(2 * c), nn::ReLU()));
    c *= 2;
    channels_.push_back(c);
  }
  for (int i = 0; i < opts.n_blocks; ++i) {
    stages_.push_back(nn::Sequential(ResidualBlock(c)));
    channels_.push_back(c);
  }
  n_encoder_ = static_cast<int>(channels_.size());
  for (int i = 0; i < opts.n_down; ++i) {
    stages_.push_back(nn::Sequential(
        nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c, c / 2, 3).stride(2).padding(1).output_padding(1)),
        instance_norm(c / 2), nn::ReLU()));
    c /= 2;
    channels_.push_back(c);
  }
  stages_.push_back(nn::Sequential(nn::ReflectionPad2d(3), nn::Conv2d(nn::Conv2dOptions(c, 3, 7)),
                                   nn::Tanh()));
  channels_.push_back(3);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    stages_[i] = register_module("stage" + std::to_string(i + 1), stages_[i]);
  }
}

torch::Tensor ResnetGeneratorImpl::forward(const torch::Tensor& x) {
  auto h = x;
  for (auto& s : stages_) h = s->forward(h);
  return h;
}

std::vector<torch::Tensor> ResnetGeneratorImpl::encode(const torch::Tensor& x,
                                                       const std::vector<int>& stages) {
  std::vector<torch::Tensor> out;
  if (stages.empty()) return out;
  const int last = *std::max_element(stages.begin(), stages.end());
  if (last >= static_cast<int>(channels_.size())) throw ValidationError("encode: stage out of range");
  auto h = x;
  auto wanted = [&](int s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); };
  if (wanted(0)) out.push_back(h);
  for (int s = 1; s <= last; ++s) {
    h = stages_[static_cast<std::size_t>(s - 1)]->forward(h);
    if (wanted(s)) out.push_back(h);
  }
  return out;
}

std::vector<int> ResnetGeneratorImpl::encoder_stages() const {
  std::vector<int> s(static_cast<std::size_t>(n_encoder_));
  for (int i = 0; i < n_encoder_; ++i) s[static_cast<std::size_t>(i)] = i;
  return s;
}

int ResnetGeneratorImpl::stage_channels(int stage) const {
  return channels_.at(static_cast<std::size_t>(stage));
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorOptions& opts) {
  if (opts.ndf < 1 || opts.n_layers < 1) throw ValidationError("discriminator options must be positive");
  nn::Sequential body;
  body->push_back(nn::Conv2d(nn::Conv2dOptions(3, opts.ndf, 4).stride(2).padding(1)));
  body->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  int c = opts.ndf;
  for (int i = 1; i < opts.n_layers; ++i) {
    const int next = std::min(c * 2, opts.ndf * 8);
    body->push_back(nn::Conv2d(nn::Conv2dOptions(c, next, 4).stride(2).padding(1)));
    body->push_back(instance_norm(next));
    body->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    c = next;
  }
  const int next = std::min(c * 2, opts.ndf * 8);
  body->push_back(nn::Conv2d(nn::Conv2dOptions(c, next, 4).stride(1).padding(1)));
  body->push_back(instance_norm(next));
  body->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  body->push_back(nn::Conv2d(nn::Conv2dOptions(next, 1, 4).stride(1).padding(1)));
  body_ = register_module("body", body);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

PatchSampleMLPImpl::PatchSampleMLPImpl(const std::vector<int>& in_channels, int out_channels) {
  for (std::size_t i = 0; i < in_channels.size(); ++i) {
    auto mlp = nn::Sequential(nn::Linear(in_channels[i], out_channels), nn::ReLU(),
                              nn::Linear(out_channels, out_channels));
    mlps_.push_back(register_module("mlp" + std::to_string(i), mlp));
  }
}

PatchSampleMLPImpl::Sampled PatchSampleMLPImpl::forward(const std::vector<torch::Tensor>& feats,
                                                        int num_patches,
                                                        const std::vector<torch::Tensor>& positions) {
  if (feats.size() != mlps_.size()) throw ValidationError("PatchSampleMLP: layer count mismatch");
  if (!positions.empty() && positions.size() != feats.size()) {
    throw ValidationError("PatchSampleMLP: position count mismatch");
  }
  Sampled out;
  for (std::size_t l = 0; l < feats.size(); ++l) {
    const auto& f = feats[l];  // [B, C, H, W]
    const auto b = f.size(0);
    const auto c = f.size(1);
    auto flat = f.permute({0, 2, 3, 1}).reshape({b, -1, c});  // [B, HW, C]
    torch::Tensor pos;
    if (positions.empty()) {
      const auto hw = flat.size(1);
      pos = torch::randperm(hw, torch::kLong).slice(0, 0, std::min<int64_t>(num_patches, hw));
    } else {
      pos = positions[l];
    }
    auto picked = flat.index_select(1, pos);  // [B, P, C]
    auto projected = mlps_[l]->forward(picked);
    out.features.push_back(torch::nn::functional::normalize(
        projected, torch::nn::functional::NormalizeFuncOptions().dim(-1).eps(1e-7)));
    out.positions.push_back(pos);
  }
  return out;
}

void init_weights(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& m : module.modules(/*include_self=*/true)) {
    if (auto* conv = m->as<nn::Conv2d>()) {
      conv->weight.normal_(0.0, 0.02);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* convt = m->as<nn::ConvTranspose2d>()) {
      convt->weight.normal_(0.0, 0.02);
      if (convt->bias.defined()) convt->bias.zero_();
    } else if (auto* lin = m->as<nn::Linear>()) {
      lin->weight.normal_(0.0, 0.02);
      if (lin->bias.defined()) lin->bias.zero_();
    }
  }
}

}  // namespace bronchograde::gan

#pragma once

#include <torch/torch.h>

namespace bronchograde::gan {

/// Discriminator probabilities are clamped to [eps, 1 - eps] before any log.
inline constexpr double kScoreEpsilon = 1e-7;

torch::Tensor clamp_scores(const torch::Tensor& scores);

/// mean(log D(y)) + mean(log(1 - D(G(x)))) over the given probability tensors.
/// The discriminator maximises this value. Throws ValidationError on empty input.
torch::Tensor adversarial_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);

/// Non-saturating generator objective: -mean(log D(G(x))).
torch::Tensor generator_adversarial_loss(const torch::Tensor& fake_scores);

/// mean|F(G(x)) - x| + mean|G(F(y)) - y|, each term averaged per element.
torch::Tensor cycle_loss(const torch::Tensor& x, const torch::Tensor& x_reconstructed,
                         const torch::Tensor& y, const torch::Tensor& y_reconstructed);

/// Patch features for the contrastive loss. Shapes (B = batch, P = anchors, M = negatives):
/// anchor [B, P, C], positive [B, P, C], negatives [B, P, M, C]. A missing leading batch
/// dimension is treated as B = 1.
struct PatchFeatureSet {
  torch::Tensor anchor;
  torch::Tensor positive;
  torch::Tensor negatives;
};

/// -log(exp(s+/tau) / (exp(s+/tau) + sum exp(s-/tau))) with cosine similarity, summed over
/// anchors and averaged over the batch. Throws ValidationError on zero-norm vectors,
/// missing negatives, or tau <= 0.
torch::Tensor patch_nce_loss(const PatchFeatureSet& features, double tau);

/// Same loss where the negatives of anchor i are the keys at sampled positions
/// i+1, ..., i+m (mod P) of the same image; m = 0 means all other P - 1 positions.
/// query/key: [B, P, C]; both are L2-normalised here (keys are not detached).
torch::Tensor patch_nce_loss_in_image(const torch::Tensor& query, const torch::Tensor& key,
                                      double tau, int negatives = 0);

}  // namespace bronchograde::gan

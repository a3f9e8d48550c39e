#include "bronchograde/gan_losses.hpp"

#include "bronchograde/errors.hpp"

namespace bronchograde::gan {

namespace {

constexpr double kMinNorm = 1e-12;

torch::Tensor normalise_checked(const torch::Tensor& v, const char* what) {
  auto norm = v.norm(2, -1, /*keepdim=*/true);
  if (norm.numel() > 0 && norm.min().item<double>() < kMinNorm) {
    throw ValidationError(std::string("patch_nce_loss: zero-norm ") + what + " vector");
  }
  return v / norm;
}

}  // namespace

torch::Tensor clamp_scores(const torch::Tensor& scores) {
  return scores.clamp(kScoreEpsilon, 1.0 - kScoreEpsilon);
}

torch::Tensor adversarial_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  if (real_scores.numel() == 0 || fake_scores.numel() == 0) {
    throw ValidationError("adversarial_loss: empty score collection");
  }
  return torch::log(clamp_scores(real_scores)).mean() +
         torch::log(1.0 - clamp_scores(fake_scores)).mean();
}

torch::Tensor generator_adversarial_loss(const torch::Tensor& fake_scores) {
  if (fake_scores.numel() == 0) throw ValidationError("generator_adversarial_loss: empty scores");
  return -torch::log(clamp_scores(fake_scores)).mean();
}

torch::Tensor cycle_loss(const torch::Tensor& x, const torch::Tensor& x_reconstructed,
                         const torch::Tensor& y, const torch::Tensor& y_reconstructed) {
  if (!x.sizes().equals(x_reconstructed.sizes()) || !y.sizes().equals(y_reconstructed.sizes())) {
    throw ValidationError("cycle_loss: reconstruction shape does not match its input");
  }
  if (x.numel() == 0 || y.numel() == 0) throw ValidationError("cycle_loss: empty batch");
  return (x_reconstructed - x).abs().mean() + (y_reconstructed - y).abs().mean();
}

torch::Tensor patch_nce_loss(const PatchFeatureSet& features, double tau) {
  if (!(tau > 0.0)) throw ValidationError("patch_nce_loss: temperature must be positive");
  auto anchor = features.anchor;
  auto positive = features.positive;
  auto negatives = features.negatives;
  if (anchor.dim() == 2) {
    anchor = anchor.unsqueeze(0);
    positive = positive.unsqueeze(0);
    negatives = negatives.unsqueeze(0);
  }
  if (anchor.dim() != 3 || positive.sizes() != anchor.sizes() || negatives.dim() != 4 ||
      negatives.size(0) != anchor.size(0) || negatives.size(1) != anchor.size(1) ||
      negatives.size(3) != anchor.size(2)) {
    throw ValidationError("patch_nce_loss: inconsistent feature shapes");
  }
  if (negatives.size(2) < 1) throw ValidationError("patch_nce_loss: at least one negative is required");
  if (anchor.size(1) < 1) throw ValidationError("patch_nce_loss: no anchors");

  const auto a = normalise_checked(anchor, "anchor");
  const auto p = normalise_checked(positive, "positive");
  const auto n = normalise_checked(negatives, "negative");
  const auto pos = (a * p).sum(-1, true) / tau;                           // [B, P, 1]
  const auto neg = (n * a.unsqueeze(2)).sum(-1) / tau;                    // [B, P, M]
  const auto logits = torch::cat({pos, neg}, -1);                         // [B, P, 1 + M]
  const auto per_anchor = -torch::log_softmax(logits, -1).select(-1, 0);  // [B, P]
  return per_anchor.sum(1).mean();
}

torch::Tensor patch_nce_loss_in_image(const torch::Tensor& query, const torch::Tensor& key,
                                      double tau, int negatives) {
  if (!(tau > 0.0)) throw ValidationError("patch_nce_loss: temperature must be positive");
  if (query.dim() != 3 || !query.sizes().equals(key.sizes())) {
    throw ValidationError("patch_nce_loss_in_image: query/key must both be [B, P, C]");
  }
  const auto patches = query.size(1);
  const int m = negatives == 0 ? static_cast<int>(patches - 1) : negatives;
  if (m < 1 || m > patches - 1) {
    throw ValidationError("patch_nce_loss: need 1 <= negatives <= patches - 1 (patches = " +
                          std::to_string(patches) + ")");
  }
  const auto q = torch::nn::functional::normalize(
      query, torch::nn::functional::NormalizeFuncOptions().dim(-1).eps(kMinNorm));
  const auto k = torch::nn::functional::normalize(
      key, torch::nn::functional::NormalizeFuncOptions().dim(-1).eps(kMinNorm));
  const auto sim = torch::bmm(q, k.transpose(1, 2)) / tau;  // [B, P, P]; diagonal = positives
  const auto pos = sim.diagonal(0, 1, 2);                    // [B, P]

  // Negative j of anchor i is position (i + d) mod P for d in 1..m.
  auto idx = torch::arange(patches).unsqueeze(1) + torch::arange(1, m + 1).unsqueeze(0);
  idx = idx.remainder(patches).to(torch::kLong);                               // [P, m]
  const auto neg = sim.gather(2, idx.unsqueeze(0).expand({sim.size(0), patches, m}));  // [B, P, m]
  const auto logits = torch::cat({pos.unsqueeze(-1), neg}, -1);
  const auto per_anchor = -torch::log_softmax(logits, -1).select(-1, 0);
  return per_anchor.sum(1).mean();
}

}  // namespace bronchograde::gan

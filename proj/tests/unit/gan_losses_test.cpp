#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>
#include <random>

#include "bronchograde/errors.hpp"
#include "bronchograde/gan_losses.hpp"

using namespace bronchograde;
using namespace bronchograde::gan;

namespace {

torch::Tensor full(std::vector<std::int64_t> shape, double v) {
  return torch::full(shape, v, torch::kFloat64);
}

torch::Tensor rand_t(std::vector<std::int64_t> shape, std::uint64_t seed) {
  torch::manual_seed(seed);
  return torch::randn(shape, torch::kFloat64);
}

double item(const torch::Tensor& t) { return t.item<double>(); }

// Plain-loop reference for the contrastive loss.
double reference_nce(const torch::Tensor& anchor, const torch::Tensor& positive, const torch::Tensor& negatives,
                     double tau) {
  auto a = anchor.accessor<double, 3>();
  auto p = positive.accessor<double, 3>();
  auto n = negatives.accessor<double, 4>();
  const auto B = anchor.size(0), P = anchor.size(1), C = anchor.size(2), M = negatives.size(2);
  auto cosine = [&](auto u, auto v) {
    double dot = 0, nu = 0, nv = 0;
    for (int64_t c = 0; c < C; ++c) dot += u(c) * v(c), nu += u(c) * u(c), nv += v(c) * v(c);
    return dot / std::sqrt(nu * nv);
  };
  double total = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < P; ++i) {
      const double sp = cosine([&](int64_t c) { return a[b][i][c]; }, [&](int64_t c) { return p[b][i][c]; });
      double denom = std::exp(sp / tau);
      for (int64_t m = 0; m < M; ++m)
        denom += std::exp(cosine([&](int64_t c) { return a[b][i][c]; }, [&](int64_t c) { return n[b][i][m][c]; }) / tau);
      total += -(sp / tau - std::log(denom));
    }
  return total / static_cast<double>(B);
}

// Central differences of f at x against autograd, relative 1e-3.
void check_gradient(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x) {
  x = x.clone().set_requires_grad(true);
  const auto analytic = torch::autograd::grad({f(x)}, {x})[0].contiguous();
  const double h = 1e-6;
  auto flat = x.detach().clone().contiguous();
  auto data = flat.data_ptr<double>();
  auto g = analytic.data_ptr<double>();
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double keep = data[i];
    data[i] = keep + h;
    const double up = item(f(flat));
    data[i] = keep - h;
    const double down = item(f(flat));
    data[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(numeric), std::abs(g[i]), 1e-3});
    ASSERT_LE(std::abs(numeric - g[i]) / scale, 1e-3) << "element " << i << " numeric " << numeric << " analytic " << g[i];
  }
}

}  // namespace

TEST(AdversarialLoss, PerfectDiscriminatorIsZero) {
  EXPECT_NEAR(item(adversarial_loss(full({8}, 1.0), full({8}, 0.0))), 0.0, 1e-6);
}

TEST(AdversarialLoss, HandEvaluatedValues) {
  EXPECT_NEAR(item(adversarial_loss(full({4, 1, 3, 3}, 0.5), full({4, 1, 3, 3}, 0.5))), 2 * std::log(0.5), 1e-4);
  EXPECT_NEAR(item(adversarial_loss(full({1}, 0.9), full({1}, 0.1))), 2 * std::log(0.9), 1e-4);
  EXPECT_NEAR(item(adversarial_loss(full({1}, 0.5), full({1}, 0.5))), -1.3863, 1e-4);
}

TEST(AdversarialLoss, ClampKeepsLogsFinite) {
  const auto v = item(adversarial_loss(full({2}, 0.0), full({2}, 1.0)));
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 2 * std::log(1e-7), 1e-3);
  const auto c = clamp_scores(torch::tensor({0.0, 0.5, 1.0}, torch::kFloat64));
  EXPECT_GT(c.min().item<double>(), 0.0);
  EXPECT_LT(c.max().item<double>(), 1.0);
}

TEST(AdversarialLoss, PermutationInvariant) {
  torch::manual_seed(3);
  const auto real = torch::rand({30}, torch::kFloat64);
  const auto fake = torch::rand({17}, torch::kFloat64);
  const double base = item(adversarial_loss(real, fake));
  for (int i = 0; i < 5; ++i) {
    const auto pr = real.index_select(0, torch::randperm(30));
    const auto pf = fake.index_select(0, torch::randperm(17));
    EXPECT_NEAR(item(adversarial_loss(pr, pf)), base, 1e-12);
  }
}

TEST(AdversarialLoss, RejectsEmpty) {
  EXPECT_THROW(adversarial_loss(torch::empty({0}, torch::kFloat64), full({1}, 0.5)), ValidationError);
  EXPECT_THROW(adversarial_loss(full({1}, 0.5), torch::empty({0}, torch::kFloat64)), ValidationError);
}

TEST(GeneratorLoss, NonSaturatingForm) {
  EXPECT_NEAR(item(generator_adversarial_loss(full({5}, 0.5))), std::log(2.0), 1e-9);
  EXPECT_NEAR(item(generator_adversarial_loss(full({5}, 1.0))), 0.0, 1e-6);
}

TEST(CycleLoss, ExactReconstructionIsZero) {
  const auto x = rand_t({2, 3, 8, 8}, 1), y = rand_t({2, 3, 8, 8}, 2);
  EXPECT_EQ(item(cycle_loss(x, x, y, y)), 0.0);
  const auto px = full({1, 3, 1, 1}, 0.5);
  EXPECT_EQ(item(cycle_loss(px, px, px, px)), 0.0);
}

TEST(CycleLoss, ZerosAgainstOnesIsTwo) {
  const auto z = full({2, 3, 4, 4}, 0.0), o = full({2, 3, 4, 4}, 1.0);
  EXPECT_NEAR(item(cycle_loss(z, o, z, o)), 2.0, 1e-12);
}

TEST(CycleLoss, NonNegativeAndSymmetric) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto x = rand_t({2, 3, 5, 5}, s), rx = rand_t({2, 3, 5, 5}, s + 100);
    const auto y = rand_t({1, 3, 5, 5}, s + 200), ry = rand_t({1, 3, 5, 5}, s + 300);
    const double a = item(cycle_loss(x, rx, y, ry));
    EXPECT_GT(a, 0.0);
    EXPECT_NEAR(a, item(cycle_loss(y, ry, x, rx)), 1e-12);
    const double ref = (x - rx).abs().mean().item<double>() + (y - ry).abs().mean().item<double>();
    EXPECT_NEAR(a, ref, 1e-12);
  }
}

TEST(CycleLoss, RejectsShapeMismatch) {
  EXPECT_THROW(cycle_loss(full({1, 3, 4, 4}, 0), full({1, 3, 4, 5}, 0), full({1}, 0), full({1}, 0)), ValidationError);
}

TEST(CycleLoss, GradientMatchesFiniteDifferences) {
  const auto rx = rand_t({1, 3, 3, 3}, 7), y = rand_t({1, 3, 3, 3}, 8), ry = rand_t({1, 3, 3, 3}, 9);
  check_gradient([&](const torch::Tensor& x) { return cycle_loss(x, rx, y, ry); }, rand_t({1, 3, 3, 3}, 10));
  const auto x = rand_t({1, 3, 3, 3}, 11);
  check_gradient([&](const torch::Tensor& r) { return cycle_loss(x, r, y, ry); }, rand_t({1, 3, 3, 3}, 12));
}

TEST(PatchNce, HandEvaluatedValues) {
  // sim(a, +) = 1, two orthogonal negatives, tau = 1.
  PatchFeatureSet f{torch::tensor({{1.0, 0.0, 0.0}}, torch::kFloat64),
                    torch::tensor({{2.0, 0.0, 0.0}}, torch::kFloat64),
                    torch::tensor({{{0.0, 1.0, 0.0}, {0.0, 0.0, 3.0}}}, torch::kFloat64)};
  EXPECT_NEAR(item(patch_nce_loss(f, 1.0)), -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0)), 1e-4);
  EXPECT_NEAR(item(patch_nce_loss(f, 1.0)), 0.5514, 1e-4);

  PatchFeatureSet tie{torch::tensor({{1.0, 1.0}}, torch::kFloat64), torch::tensor({{1.0, 0.0}}, torch::kFloat64),
                      torch::tensor({{{0.0, 1.0}}}, torch::kFloat64)};
  EXPECT_NEAR(item(patch_nce_loss(tie, 1.0)), std::log(2.0), 1e-4);
}

TEST(PatchNce, VanishesAsTemperatureFalls) {
  PatchFeatureSet f{torch::tensor({{1.0, 0.2}}, torch::kFloat64), torch::tensor({{1.0, 0.1}}, torch::kFloat64),
                    torch::tensor({{{0.3, 1.0}, {-1.0, 0.0}}}, torch::kFloat64)};
  double prev = item(patch_nce_loss(f, 1.0));
  for (double tau : {0.3, 0.1, 0.03, 0.01}) {
    const double v = item(patch_nce_loss(f, tau));
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(PatchNce, MatchesLoopReference) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    PatchFeatureSet f{rand_t({3, 4, 6}, s), rand_t({3, 4, 6}, s + 10), rand_t({3, 4, 5, 6}, s + 20)};
    for (double tau : {0.07, 0.5, 2.0})
      EXPECT_NEAR(item(patch_nce_loss(f, tau)), reference_nce(f.anchor, f.positive, f.negatives, tau), 1e-9);
  }
}

TEST(PatchNce, NonNegativeAndMonotoneInPositiveSimilarity) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto anchor = rand_t({1, 1, 4}, s);
    const auto other = rand_t({1, 1, 4}, s + 50);
    const auto negatives = rand_t({1, 1, 3, 4}, s + 100);
    double prev = std::numeric_limits<double>::infinity();
    // Moving the positive from `other` toward the anchor raises sim(a, +).
    for (double t = 0.0; t <= 1.0; t += 0.1) {
      const auto positive = (1 - t) * other / other.norm() + t * anchor / anchor.norm();
      const double v = item(patch_nce_loss({anchor, positive, negatives}, 0.5));
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, prev + 1e-12);
      prev = v;
    }
  }
}

TEST(PatchNce, Errors) {
  const auto a = torch::tensor({{1.0, 0.0}}, torch::kFloat64);
  EXPECT_THROW(patch_nce_loss({a, a, torch::zeros({1, 0, 2}, torch::kFloat64)}, 1.0), ValidationError);
  EXPECT_THROW(patch_nce_loss({a, a, torch::ones({1, 1, 2}, torch::kFloat64)}, 0.0), ValidationError);
  EXPECT_THROW(patch_nce_loss({torch::zeros({1, 2}, torch::kFloat64), a, torch::ones({1, 1, 2}, torch::kFloat64)}, 1.0),
               ValidationError);
  EXPECT_THROW(patch_nce_loss({a, a, torch::ones({1, 1, 3}, torch::kFloat64)}, 1.0), ValidationError);
}

TEST(PatchNce, GradientMatchesFiniteDifferences) {
  const auto positive = rand_t({2, 3, 4}, 30), negatives = rand_t({2, 3, 2, 4}, 31), anchor = rand_t({2, 3, 4}, 32);
  check_gradient([&](const torch::Tensor& a) { return patch_nce_loss({a, positive, negatives}, 0.5); }, anchor);
  check_gradient([&](const torch::Tensor& n) { return patch_nce_loss({anchor, positive, n}, 0.5); }, negatives);
}

TEST(PatchNceInImage, EqualsExplicitNegatives) {
  const auto q = rand_t({2, 5, 3}, 40), k = rand_t({2, 5, 3}, 41);
  for (int m : {0, 1, 3}) {
    const int M = m == 0 ? 4 : m;
    auto neg = torch::empty({2, 5, M, 3}, torch::kFloat64);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < M; ++j) neg.select(1, i).select(1, j).copy_(k.select(1, (i + 1 + j) % 5));
    EXPECT_NEAR(item(patch_nce_loss_in_image(q, k, 0.2, m)), item(patch_nce_loss({q, k, neg}, 0.2)), 1e-9) << m;
  }
  EXPECT_THROW(patch_nce_loss_in_image(rand_t({1, 1, 3}, 1), rand_t({1, 1, 3}, 2), 0.1, 0), ValidationError);
}

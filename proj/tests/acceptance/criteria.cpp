#include "acceptance/criteria.hpp"

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bronchograde/augment.hpp"
#include "bronchograde/classify.hpp"
#include "bronchograde/csv.hpp"
#include "bronchograde/gan.hpp"
#include "bronchograde/gan_losses.hpp"
#include "bronchograde/hash.hpp"
#include "bronchograde/interpret.hpp"
#include "bronchograde/log.hpp"
#include "bronchograde/metrics.hpp"
#include "bronchograde/pipeline.hpp"
#include "bronchograde/synth.hpp"
#include "oracles/dft_oracle.hpp"
#include "oracles/metrics_oracle.hpp"

namespace bg_acceptance {

using namespace bronchograde;
namespace fs = std::filesystem;

namespace {

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Collects failed checks; the criterion passes when none failed.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failed_.size() < 6) failed_.push_back(what);
    failures_ += !ok;
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
  Outcome outcome() const {
    std::string d = notes_;
    if (failures_) {
      d += (d.empty() ? "" : "; ") + std::to_string(failures_) + " check(s) failed:";
      for (const auto& f : failed_) d += " [" + f + "]";
    }
    return {failures_ == 0, d};
  }

 private:
  int failures_ = 0;
  std::vector<std::string> failed_;
  std::string notes_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream o;
  o.precision(precision);
  o << std::fixed << v;
  return o.str();
}

Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(h) * w * 3);
  for (auto& p : px) p = static_cast<std::uint8_t>(gen() & 0xFF);
  return Image(h, w, std::move(px));
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double relative_gap(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); }

/// Worst relative gap between autograd and central differences over every input element.
double worst_gradient_gap(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x) {
  x = x.clone().set_requires_grad(true);
  const auto analytic = torch::autograd::grad({f(x)}, {x})[0].contiguous();
  auto probe = x.detach().clone().contiguous();
  auto* data = probe.data_ptr<double>();
  const auto* g = analytic.data_ptr<double>();
  double worst = 0;
  const double h = 1e-6;
  for (int64_t i = 0; i < probe.numel(); ++i) {
    const double keep = data[i];
    data[i] = keep + h;
    const double up = f(probe).item<double>();
    data[i] = keep - h;
    const double down = f(probe).item<double>();
    data[i] = keep;
    worst = std::max(worst, relative_gap((up - down) / (2 * h), g[i]));
  }
  return worst;
}

std::array<double, 3> channel_means(const Dataset& ds) {
  std::array<double, 3> m{};
  double n = 0;
  for (const auto& r : ds)
    for (int y = 0; y < r.pixels.height(); ++y)
      for (int x = 0; x < r.pixels.width(); ++x, ++n)
        for (int ch = 0; ch < 3; ++ch) m[ch] += r.pixels.at(y, x, ch);
  for (auto& v : m) v /= n;
  return m;
}

double accuracy(const classify::TrainedClassifier& model, const Dataset& test) {
  int hits = 0;
  for (const auto& r : test) hits += model.predict(r.pixels).grade == r.grade;
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string without_timestamp(const std::string& html) {
  return std::regex_replace(html, std::regex("<p id=\"generated\">[^<]*</p>"), "");
}

/// Number of src/href targets in the report that do not resolve to a file.
int broken_links(const fs::path& index) {
  const auto html = read_file(index);
  const std::regex attr("(?:src|href)=\"([^\"#]+)\"");
  int broken = 0;
  for (std::sregex_iterator it(html.begin(), html.end(), attr), end; it != end; ++it) {
    const std::string target = (*it)[1];
    if (target.find("://") != std::string::npos) continue;
    broken += !fs::exists(index.parent_path() / target);
  }
  return broken;
}

int count_links(const fs::path& index) {
  const auto html = read_file(index);
  const std::regex img("<img src=\"");
  return static_cast<int>(std::distance(std::sregex_iterator(html.begin(), html.end(), img), std::sregex_iterator()));
}

pipeline::PipelineConfig e2e_config(const fs::path& workspace, const fs::path& input) {
  return pipeline::resolve_config(pipeline::Profile::desk, std::nullopt,
                                  {{"paths.workspace", workspace.string()}, {"paths.input", input.string()}});
}

fs::path ensure_corpus(Context& ctx) {
  const auto dir = ctx.workdir / "corpus";
  if (!fs::exists(dir / "manifest.csv")) {
    synth::CorpusOptions o;
    o.patients_per_grade = {6, 6, 6, 6, 6, 6};
    o.images_per_patient = 2;
    o.size = 256;
    o.seed = 2024;
    synth::write_corpus(synth::bronchoscopy_corpus(o), dir);
  }
  return dir / "manifest.csv";
}

}  // namespace

Outcome metric_oracle(Context&) {
  Timer t;
  Checks c;
  const std::vector<std::vector<int>> grid = {{5, 1, 0}, {1, 3, 1}, {0, 1, 4}};
  std::vector<int> ft, fp;
  bg_oracle::labels_from_grid(grid, ft, fp);
  const auto oracle = bg_oracle::brute_force_metrics(ft, fp, 3);
  c.expect(std::abs(oracle.accuracy - 0.75) < 1e-12 && std::abs(oracle.precision - 0.7444) < 1e-4 &&
               std::abs(oracle.specificity - 0.8758) < 1e-4,
           "oracle disagrees with the hand-computed reference case");
  const auto fixed = metrics::compute_metrics(metrics::confusion_matrix(ft, fp, 3));
  c.expect(std::abs(fixed.accuracy - 0.75) < 1e-12, "accuracy " + fmt(fixed.accuracy));
  for (double v : {fixed.precision, fixed.sensitivity, fixed.f1})
    c.expect(std::abs(v - 0.7444) < 1e-4, "macro value " + fmt(v, 6) + " != 0.7444");
  c.expect(std::abs(fixed.specificity - 0.8758) < 1e-4, "specificity " + fmt(fixed.specificity, 6));

  std::mt19937_64 gen(1);
  double worst = 0;
  log::Capture quiet;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 1 + static_cast<int>(gen() % 6);
    const int n = 1 + static_cast<int>(gen() % 200);
    std::vector<int> truth(n), pred(n);
    for (int i = 0; i < n; ++i) {
      truth[i] = 1 + static_cast<int>(gen() % k);
      pred[i] = gen() % 2 ? truth[i] : 1 + static_cast<int>(gen() % k);
    }
    const auto r = metrics::compute_metrics(metrics::confusion_matrix(truth, pred, k));
    const auto o = bg_oracle::brute_force_metrics(truth, pred, k);
    for (auto [a, b] : {std::pair{r.precision, o.precision}, std::pair{r.sensitivity, o.sensitivity},
                        std::pair{r.specificity, o.specificity}, std::pair{r.f1, o.f1},
                        std::pair{r.accuracy, o.accuracy}})
      worst = std::max(worst, std::abs(a - b));
  }
  c.expect(worst <= 1e-12, "max oracle gap " + sci(worst));
  c.expect(t.seconds() < 10, "runtime " + fmt(t.seconds(), 1) + " s");
  c.note("1000 trials, max gap " + sci(worst) + ", fixed case acc " + fmt(fixed.accuracy) + " P/R/F1 " +
         fmt(fixed.precision) + " spec " + fmt(fixed.specificity));
  return c.outcome();
}

Outcome transform_group(Context&) {
  namespace aug = augment;
  Timer t;
  Checks c;
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto img = random_image(256, 256, 100 + static_cast<std::uint64_t>(i));
    Image cur = img;
    for (int k = 0; k < 4; ++k) cur = aug::rotate(cur, 90);
    c.expect(cur == img, "rotate90^4 != identity");
    c.expect(aug::rotate(aug::rotate(img, 90), 90) == aug::rotate(img, 180), "rotate90^2 != rotate180");
    c.expect(aug::reflect(aug::reflect(img, aug::Axis::x), aug::Axis::x) == img, "reflect_x not an involution");
    c.expect(aug::reflect(aug::reflect(img, aug::Axis::y), aug::Axis::y) == img, "reflect_y not an involution");
    c.expect(aug::reflect(aug::reflect(img, aug::Axis::y), aug::Axis::x) == aug::rotate(img, 180),
             "reflect_x . reflect_y != rotate180");
    const double sx = rng.uniform(1.1, 1.5), sy = rng.uniform(1.1, 1.5);
    const double w = rng.uniform(0.5, 1.0), h = rng.uniform(0.5, 1.0);
    const aug::CropRect rect{rng.uniform(0, 1 - w), rng.uniform(0, 1 - h), w, h};
    for (const auto& out : {aug::scale(img, sx, sy), aug::scale(img, sx, 1.0), aug::crop(img, rect),
                            aug::resize(random_image(97 + i, 301 - i, static_cast<std::uint64_t>(i)))})
      c.expect(out.height() == 256 && out.width() == 256 && out.size_bytes() == 256u * 256u * 3u,
               "shape not preserved");
    // uint8 storage bounds the range; the constant-image check confirms no drift from clamping.
    c.expect(aug::scale(Image(256, 256, 255), sx, sy) == Image(256, 256, 255), "scale drifts a saturated image");
  }
  c.expect(t.seconds() < 30, "runtime " + fmt(t.seconds(), 1) + " s");
  c.note("100 random 256x256 images");
  return c.outcome();
}

Outcome loss_anchors(Context&) {
  using namespace gan;
  Timer t;
  Checks c;
  auto d = [](std::vector<std::int64_t> shape, double v) { return torch::full(shape, v, torch::kFloat64); };
  const double adv = adversarial_loss(d({16}, 0.5), d({16}, 0.5)).item<double>();
  c.expect(std::abs(adv - (-1.3863)) <= 1e-4, "adversarial " + fmt(adv, 6));
  const auto x = torch::rand({2, 3, 8, 8}, torch::kFloat64), y = torch::rand({2, 3, 8, 8}, torch::kFloat64);
  const double cyc0 = cycle_loss(x, x, y, y).item<double>();
  c.expect(cyc0 == 0.0, "cycle identity " + sci(cyc0));
  const double cyc2 = cycle_loss(d({2, 3, 8, 8}, 0), d({2, 3, 8, 8}, 1), d({2, 3, 8, 8}, 0), d({2, 3, 8, 8}, 1)).item<double>();
  c.expect(std::abs(cyc2 - 2.0) <= 1e-9, "cycle zeros/ones " + sci(cyc2));
  const double nce = patch_nce_loss({torch::tensor({{1.0, 0.0, 0.0}}, torch::kFloat64),
                                     torch::tensor({{1.0, 0.0, 0.0}}, torch::kFloat64),
                                     torch::tensor({{{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}}, torch::kFloat64)},
                                    1.0)
                         .item<double>();
  c.expect(std::abs(nce - 0.5514) <= 1e-4, "nce " + fmt(nce, 6));
  const double tie = patch_nce_loss({torch::tensor({{1.0, 1.0}}, torch::kFloat64), torch::tensor({{1.0, 0.0}}, torch::kFloat64),
                                     torch::tensor({{{0.0, 1.0}}}, torch::kFloat64)},
                                    1.0)
                         .item<double>();
  c.expect(std::abs(tie - std::log(2.0)) <= 1e-4, "nce tie " + fmt(tie, 6));

  double worst = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    torch::manual_seed(s);
    const auto rx = torch::randn({1, 3, 4, 4}, torch::kFloat64), yy = torch::randn({1, 3, 4, 4}, torch::kFloat64),
               ry = torch::randn({1, 3, 4, 4}, torch::kFloat64);
    worst = std::max(worst, worst_gradient_gap([&](const torch::Tensor& v) { return cycle_loss(v, rx, yy, ry); },
                                               torch::randn({1, 3, 4, 4}, torch::kFloat64)));
    const auto pos = torch::randn({2, 4, 8}, torch::kFloat64), neg = torch::randn({2, 4, 3, 8}, torch::kFloat64);
    const auto anchor = torch::randn({2, 4, 8}, torch::kFloat64);
    worst = std::max(worst, worst_gradient_gap([&](const torch::Tensor& a) { return patch_nce_loss({a, pos, neg}, 0.07); },
                                               anchor));
    worst = std::max(worst, worst_gradient_gap([&](const torch::Tensor& p) { return patch_nce_loss({anchor, p, neg}, 0.5); },
                                               pos));
    worst = std::max(worst, worst_gradient_gap([&](const torch::Tensor& n) { return patch_nce_loss({anchor, pos, n}, 0.5); },
                                               neg));
  }
  c.expect(worst <= 1e-3, "finite-difference gap " + sci(worst));
  c.expect(t.seconds() < 30, "runtime " + fmt(t.seconds(), 1) + " s");
  c.note("adv " + fmt(adv) + ", cycle " + fmt(cyc0) + "/" + fmt(cyc2) + ", nce " + fmt(nce) + "/" + fmt(tie) +
         ", worst FD gap " + sci(worst));
  return c.outcome();
}

Outcome gan_toy(Context&) {
  Checks c;
  const auto domains = synth::disks_and_squares(64, 32, 31);
  const DomainPartition part{GradeLabel(2), domains.a, domains.b};
  const auto mean_a = channel_means(domains.a), mean_b = channel_means(domains.b);
  for (auto variant : {gan::Variant::cyclegan, gan::Variant::cut}) {
    const std::string name(gan::to_string(variant));
    Timer t;
    auto cfg = gan::desk_config(variant);
    cfg.epochs = 5;
    cfg.seed = 77;
    const auto res = gan::train(part, cfg);
    const double secs = t.seconds();
    bool finite = true;
    for (const auto& e : res.history)
      for (const auto& [k, v] : e.values) finite &= std::isfinite(v);
    const double first = res.history.front().values.at("generator");
    const double last = res.history.back().values.at("generator");
    c.expect(res.history.size() == 5, name + " history length");
    c.expect(finite, name + " non-finite loss");
    c.expect(last <= 0.8 * first, name + " generator loss " + fmt(first) + " -> " + fmt(last));
    c.expect(secs < 300, name + " runtime " + fmt(secs, 1) + " s");

    const auto generated = gan::generate(res.model, domains.a, GradeLabel(2), domains.a.size());
    bool valid = generated.size() == domains.a.size();
    for (const auto& r : generated) valid &= r.pixels.height() == 256 && r.pixels.width() == 256 && !r.pixels.empty();
    c.expect(valid, name + " generated images invalid");
    const auto mean_g = channel_means(generated);
    std::string shifts;
    for (int ch = 0; ch < 3; ++ch) {
      const double want = mean_b[ch] - mean_a[ch], got = mean_g[ch] - mean_a[ch];
      c.expect(want * got > 0, name + " channel " + std::to_string(ch) + " shift " + fmt(got, 1) + " vs target " +
                                   fmt(want, 1));
      shifts += (ch ? "/" : "") + fmt(got, 1);
    }
    c.note(name + ": G " + fmt(first, 3) + "->" + fmt(last, 3) + " (x" + fmt(last / first, 2) + "), shift " + shifts +
           " vs " + fmt(mean_b[0] - mean_a[0], 1) + "/" + fmt(mean_b[1] - mean_a[1], 1) + "/" +
           fmt(mean_b[2] - mean_a[2], 1) + ", " + fmt(secs, 0) + " s");
  }
  return c.outcome();
}

Outcome classifier_toy(Context&) {
  Checks c;
  synth::ShapeSetOptions opts;
  opts.per_class = 100;
  opts.size = 32;
  opts.seed = 600;
  const auto all = synth::shape_classes(opts);
  const auto split = split_dataset(all, SplitOptions{0.7, 3, false});
  auto cfg = classify::desk_classifier_config(classify::Backbone::inception_cnn);
  cfg.seed = 5;

  Timer t;
  auto model = classify::build_classifier(cfg);
  classify::finetune(model, split.train, Dataset());
  const double full_acc = accuracy(model, split.test);
  const double secs = t.seconds();
  c.expect(full_acc >= 0.95, "full-data accuracy " + fmt(full_acc));
  c.expect(secs < 300, "runtime " + fmt(secs, 1) + " s");

  // 10% of each class, then the same subsample grown fivefold by graphic transforms.
  std::vector<std::size_t> picks;
  for (auto g : all_grades()) {
    std::size_t taken = 0;
    const std::size_t want = (split.train.count(g) + 5) / 10;
    for (std::size_t i = 0; i < split.train.size() && taken < want; ++i)
      if (split.train[i].grade == g) picks.push_back(i), ++taken;
  }
  const auto sub = split.train.subset(picks);
  auto small_model = classify::build_classifier(cfg);
  classify::finetune(small_model, sub, Dataset());
  const double sub_acc = accuracy(small_model, split.test);

  const auto augmented = augment::augment_dataset(sub, augment::scaled_plan(sub, 5.0, 11));
  auto aug_model = classify::build_classifier(cfg);
  classify::finetune(aug_model, augmented.dataset, Dataset());
  const double aug_acc = accuracy(aug_model, split.test);
  c.expect(aug_acc - sub_acc >= 0.10, "augmentation gain " + fmt(100 * (aug_acc - sub_acc), 1) + " points");
  c.note("full " + fmt(full_acc) + " in " + fmt(secs, 0) + " s; subsample (" + std::to_string(sub.size()) + ") " +
         fmt(sub_acc) + " -> augmented (" + std::to_string(augmented.dataset.size()) + ") " + fmt(aug_acc));
  return c.outcome();
}

Outcome interpretation_math(Context&) {
  using namespace interpret;
  Timer t;
  Checks c;
  const auto flat = frequency_spectrum(Image(32, 32, 77));
  const auto dc = bg_oracle::centered_index(0, 0, 32, 32);
  bool only_dc = flat.high_band_energy == 0.0;
  for (std::size_t i = 0; i < flat.log_magnitude.size(); ++i)
    if (i != dc) only_dc &= std::abs(flat.log_magnitude[i]) < 1e-9;
  c.expect(only_dc, "constant image energy outside DC");

  for (int k : {1, 2, 5, 9}) {
    Image img(32, 32);
    for (int r = 0; r < 32; ++r)
      for (int col = 0; col < 32; ++col)
        for (int ch = 0; ch < 3; ++ch)
          img.at(r, col, ch) = static_cast<std::uint8_t>(std::lround(128 + 90 * std::sin(2 * std::acos(-1.0) * k * col / 32)));
    const auto s = frequency_spectrum(img);
    const auto oracle = bg_oracle::dft2(grayscale(img), 32, 32);
    double gap = 0;
    for (int u = 0; u < 32; ++u)
      for (int v = 0; v < 32; ++v)
        gap = std::max(gap, std::abs(s.log_magnitude[bg_oracle::centered_index(u, v, 32, 32)] -
                                     std::log1p(std::abs(oracle[static_cast<std::size_t>(u) * 32 + v]))));
    c.expect(gap < 1e-8, "spectrum vs direct DFT gap " + sci(gap));
    std::size_t best = 0;
    double best_v = -1;
    for (std::size_t i = 0; i < s.log_magnitude.size(); ++i)
      if (i != dc && s.log_magnitude[i] > best_v) best_v = s.log_magnitude[i], best = i;
    c.expect(best == bg_oracle::centered_index(0, k, 32, 32) || best == bg_oracle::centered_index(0, -k, 32, 32),
             "sinusoid peak misplaced for k=" + std::to_string(k));
    c.expect(std::abs(s.log_magnitude[bg_oracle::centered_index(0, k, 32, 32)] -
                      s.log_magnitude[bg_oracle::centered_index(0, -k, 32, 32)]) < 1e-9,
             "peaks at +-k differ");
  }

  double parseval = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = random_image(64, 64, seed);
    const auto g = grayscale(img);
    const auto s = frequency_spectrum(img);
    parseval = std::max(parseval, std::abs(s.total_energy() / (64.0 * 64.0 * std::inner_product(g.begin(), g.end(), g.begin(), 0.0)) - 1));
  }
  c.expect(parseval <= 1e-6, "Parseval gap " + sci(parseval));

  std::mt19937_64 gen(8);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd basis(2, 12), coeff(500, 2);
  for (int i = 0; i < basis.size(); ++i) basis.data()[i] = nd(gen);
  for (int i = 0; i < coeff.size(); ++i) coeff.data()[i] = nd(gen);
  const auto pca = pca_project(coeff * basis, 2);
  const double explained = pca.explained_variance_ratio[0] + pca.explained_variance_ratio[1];
  const double ortho = (pca.components * pca.components.transpose() - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff();
  c.expect(explained >= 0.999, "planted subspace explained " + fmt(explained, 6));
  c.expect(ortho <= 1e-8, "component orthonormality gap " + sci(ortho));

  const auto hm = grad_cam_from_maps(FeatureMaps{1, 2, 2, {1, 2, 3, 4}}, FeatureMaps{1, 2, 2, {1, 1, 1, 1}}, 2, 2);
  c.expect(hm.values == std::vector<std::uint8_t>{0, 85, 170, 255}, "Grad-CAM hand case map");
  c.expect(hm.mean_intensity == 127.5, "Grad-CAM hand case mean " + fmt(hm.mean_intensity));

  Eigen::MatrixXd pts(80, 2);
  std::vector<int> labels;
  for (int i = 0; i < 80; ++i) {
    pts(i, 0) = nd(gen) + (i % 2) * 100.0;
    pts(i, 1) = nd(gen);
    labels.push_back(1 + i % 2);
  }
  const double sil = separability_score(pts, labels);
  c.expect(sil > 0.9, "silhouette " + fmt(sil));
  c.expect(t.seconds() < 60, "runtime " + fmt(t.seconds(), 1) + " s");
  c.note("Parseval gap " + sci(parseval) + ", PCA explained " + fmt(explained, 6) + ", silhouette " + fmt(sil));
  return c.outcome();
}

Outcome pipeline_determinism(Context& ctx) {
  Checks c;
  const auto input = ensure_corpus(ctx);
  const auto ws_a = ctx.workdir / "run_a", ws_b = ctx.workdir / "run_b";
  fs::remove_all(ws_a);
  fs::remove_all(ws_b);

  Timer t;
  const auto cfg_a = e2e_config(ws_a, input);
  const int rc_a = pipeline::run_all(cfg_a);
  const double secs = t.seconds();
  c.expect(rc_a == 0, "first run exit " + std::to_string(rc_a));
  c.expect(secs < 900, "end-to-end runtime " + fmt(secs, 0) + " s");
  if (rc_a == 0) ctx.e2e_workspace = ws_a;

  const auto cfg_b = e2e_config(ws_b, input);
  const int rc_b = pipeline::run_all(cfg_b);
  c.expect(rc_b == 0, "second run exit " + std::to_string(rc_b));
  if (rc_a != 0 || rc_b != 0) return c.outcome();

  c.expect(sha256_file(ws_a / "data/split/membership.csv") == sha256_file(ws_b / "data/split/membership.csv"),
           "split membership differs");
  c.expect(sha256_tree(ws_a / "augmented") == sha256_tree(ws_b / "augmented"), "augmented images differ");
  const bool same_metrics = read_file(ws_a / "eval/metrics.csv") == read_file(ws_b / "eval/metrics.csv");

  const auto index = ws_a / "report/index.html";
  const int broken = broken_links(index);
  const int images = count_links(index);
  c.expect(broken == 0, std::to_string(broken) + " broken report links");
  const auto html = read_file(index);
  for (const char* id : {"counts", "metrics", "intensity", "histograms", "spectra", "pca", "heatmaps", "provenance"})
    c.expect(html.find(std::string("id=\"") + id + "\"") != std::string::npos, std::string("report lacks ") + id);
  for (const char* family : {"assets/histograms/", "assets/spectra/", "assets/pca/", "assets/heatmaps/"})
    c.expect(html.find(family) != std::string::npos, std::string("no figures under ") + family);

  // Regenerating the report from the unchanged workspace changes only the timestamp.
  const auto before = read_file(index);
  const int rc_report = pipeline::run_stage(pipeline::Stage::report, cfg_a);
  c.expect(rc_report == 0 && without_timestamp(before) == without_timestamp(read_file(index)),
           "report regeneration differs beyond the timestamp");

  nlohmann::json iso;
  std::ifstream(ws_a / "eval/isolation.json") >> iso;
  c.expect(iso.value("disjoint", false), "test/train hash overlap");
  std::size_t models = iso.contains("models") ? iso["models"].size() : 0;
  for (const auto& [name, m] : iso["models"].items())
    c.expect(m.value("overlap", 1) == 0 && m.value("train_images", 0) > 0, name + " isolation entry");
  c.expect(models == 8, std::to_string(models) + " models checked for isolation");

  c.note("run " + fmt(secs, 0) + " s, " + std::to_string(images) + " figures, 0 broken links required (" +
         std::to_string(broken) + "), metrics " + (same_metrics ? "identical" : "differ") + " across reruns");
  return c.outcome();
}

Outcome report_format(Context& ctx) {
  Checks c;
  if (!ctx.e2e_workspace) {
    const auto input = ensure_corpus(ctx);
    const auto ws = ctx.workdir / "run_a";
    if (pipeline::run_all(e2e_config(ws, input)) != 0) return {false, "end-to-end run failed"};
    ctx.e2e_workspace = ws;
  }
  const auto ws = *ctx.e2e_workspace;
  const auto metrics_rows = csv::read_file(ws / "eval/metrics.csv");
  const csv::Row header = {"model", "method", "Precision", "Sensitivity", "Specificity", "Accuracy", "F1"};
  c.expect(!metrics_rows.empty() && metrics_rows[0] == header, "metrics header");
  c.expect(metrics_rows.size() == 1 + 2 * 4, "metrics rows " + std::to_string(metrics_rows.size() - 1));
  for (std::size_t i = 1; i < metrics_rows.size(); ++i) {
    c.expect(metrics_rows[i].size() == header.size(), "metrics row width");
    for (std::size_t j = 2; j < metrics_rows[i].size(); ++j) {
      const double v = std::stod(metrics_rows[i][j]);
      c.expect(v >= 0 && v <= 1, "metric out of range");
    }
  }
  const auto intensity = csv::read_file(ws / "interpret/intensity.csv");
  c.expect(intensity.size() == 7, "intensity rows " + std::to_string(intensity.size()));
  c.expect(!intensity.empty() && intensity[0] == csv::Row({"grade", "Original", "Transformations", "CycleGAN", "CUT"}),
           "intensity header");
  int filled = 0;
  for (std::size_t r = 1; r < intensity.size(); ++r) {
    c.expect(intensity[r].size() == 5, "intensity row width");
    c.expect(intensity[r][0] == "grade " + std::to_string(r), "intensity row label");
    for (std::size_t j = 1; j < intensity[r].size(); ++j) filled += !intensity[r][j].empty();
  }
  const auto html = read_file(ws / "report/index.html");
  c.expect(html.find("<table class=\"metrics\">") != std::string::npos, "report metrics table");
  c.expect(html.find("<table class=\"intensity\">") != std::string::npos, "report intensity table");
  c.note(std::to_string(metrics_rows.size() - 1) + " metric rows x 5 columns; intensity 6x4 with " +
         std::to_string(filled) + "/24 cells filled");
  return c.outcome();
}

}  // namespace bg_acceptance

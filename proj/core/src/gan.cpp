#include "bronchograde/gan.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "bronchograde/augment.hpp"
#include "bronchograde/config_io.hpp"
#include "bronchograde/csv.hpp"
#include "bronchograde/errors.hpp"
#include "bronchograde/gan_losses.hpp"
#include "bronchograde/gan_networks.hpp"
#include "bronchograde/log.hpp"
#include "bronchograde/tensor_image.hpp"

namespace bronchograde::gan {

using nlohmann::json;

struct GanModel::Impl {
  GanConfig cfg;
  std::optional<GradeLabel> grade;
  int epochs = 0;
  ResnetGenerator g{nullptr};
  ResnetGenerator f{nullptr};
  PatchDiscriminator d_y{nullptr};
  PatchDiscriminator d_x{nullptr};
  PatchSampleMLP h{nullptr};
  std::vector<int> nce_layers;
};

namespace {

GeneratorOptions generator_options(const NetworkSize& n) {
  return GeneratorOptions{.ngf = n.ngf, .n_down = n.n_down, .n_blocks = n.n_blocks};
}

DiscriminatorOptions discriminator_options(const NetworkSize& n) {
  return DiscriminatorOptions{.ndf = n.ndf, .n_layers = n.disc_layers};
}

/// Input, stem, end of downsampling, first residual block, last encoder stage.
std::vector<int> choose_nce_layers(const ResnetGeneratorImpl& g, const NetworkSize& n) {
  const auto enc = g.encoder_stages();
  std::vector<int> layers = {0, 1, 1 + n.n_down, std::min(2 + n.n_down, enc.back()), enc.back()};
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  return layers;
}

void check_finite(double v, const char* name, int epoch, int step) {
  if (!std::isfinite(v)) {
    throw TrainingDiverged(std::string("loss '") + name + "' became non-finite at epoch " +
                           std::to_string(epoch + 1) + ", step " + std::to_string(step + 1));
  }
}

void set_requires_grad(torch::nn::Module& m, bool flag) {
  for (auto& p : m.parameters()) p.set_requires_grad(flag);
}

std::vector<torch::Tensor> params_of(std::initializer_list<torch::nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (auto* m : modules) {
    auto p = m->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

torch::Tensor domain_tensor(const Dataset& ds, int size) {
  std::vector<const Image*> imgs;
  imgs.reserve(ds.size());
  for (const auto& r : ds) imgs.push_back(&r.pixels);
  return to_batch(imgs, size);
}

struct EpochAccumulator {
  std::map<std::string, double> sums;
  int steps = 0;
  void add(const std::string& name, double v) { sums[name] += v; }
  EpochLosses finish(int epoch) const {
    EpochLosses e;
    e.epoch = epoch + 1;
    for (const auto& [k, v] : sums) e.values[k] = v / std::max(steps, 1);
    return e;
  }
};

/// Shuffled, cycling batch indices over one domain.
class Sampler {
 public:
  explicit Sampler(int64_t n) : n_(n) {}
  void reshuffle() { perm_ = torch::randperm(n_, torch::kLong); }
  torch::Tensor batch(int step, int batch_size) const {
    auto idx = torch::arange(static_cast<int64_t>(step) * batch_size,
                             static_cast<int64_t>(step + 1) * batch_size, torch::kLong)
                   .remainder(n_);
    return perm_.index_select(0, idx);
  }

 private:
  int64_t n_;
  torch::Tensor perm_;
};

void check_partition(const DomainPartition& part) {
  if (part.trainA.empty()) throw PreconditionError("GAN training: source domain (trainA) is empty");
  if (part.trainB.empty()) throw PreconditionError("GAN training: target domain (trainB) is empty");
}

int steps_for(const DomainPartition& part, const GanConfig& cfg) {
  const auto n = std::max(part.trainA.size(), part.trainB.size());
  int steps = static_cast<int>((n + static_cast<std::size_t>(cfg.batch_size) - 1) /
                               static_cast<std::size_t>(cfg.batch_size));
  if (cfg.max_steps_per_epoch > 0) steps = std::min(steps, cfg.max_steps_per_epoch);
  return steps;
}

torch::optim::Adam make_adam(std::vector<torch::Tensor> params, const GanConfig& cfg) {
  return torch::optim::Adam(std::move(params), torch::optim::AdamOptions(cfg.learning_rate)
                                                   .betas({cfg.beta1, cfg.beta2}));
}

}  // namespace

std::string_view to_string(Variant v) { return v == Variant::cut ? "cut" : "cyclegan"; }

Variant variant_from_string(std::string_view s) {
  if (s == "cut") return Variant::cut;
  if (s == "cyclegan") return Variant::cyclegan;
  throw ValidationError("unknown GAN variant: " + std::string(s));
}

Provenance provenance_of(Variant v) { return v == Variant::cut ? Provenance::cut : Provenance::cyclegan; }

void GanConfig::validate() const {
  if (epochs < 1) throw ValidationError("gan: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("gan: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("gan: learning_rate must be positive");
  if (!(lambda_cyc >= 0.0)) throw ValidationError("gan: lambda_cyc must be non-negative");
  if (!(lambda_nce >= 0.0)) throw ValidationError("gan: lambda_nce must be non-negative");
  if (!(tau > 0.0)) throw ValidationError("gan: tau must be positive");
  if (image_size < 8) throw ValidationError("gan: image_size must be >= 8");
  if (image_size % (1 << network.n_down) != 0) {
    throw ValidationError("gan: image_size must be divisible by 2^n_down");
  }
  if (variant == Variant::cut) {
    if (patches_per_image < 1) throw ValidationError("gan: patches_per_image must be >= 1");
    const int max_neg = patches_per_image - 1;
    if (max_neg < 1 || negatives_per_anchor < 0 || negatives_per_anchor > max_neg) {
      throw ValidationError("gan: contrastive loss needs at least one negative per anchor "
                            "(patches_per_image = " + std::to_string(patches_per_image) +
                            ", negatives_per_anchor = " + std::to_string(negatives_per_anchor) + ")");
    }
  }
}

GanConfig desk_config(Variant v) {
  GanConfig c;
  c.variant = v;
  return c;
}

GanConfig paper_config(Variant v) {
  GanConfig c;
  c.variant = v;
  c.epochs = 200;
  c.image_size = 256;
  c.patches_per_image = 256;
  c.projection_dim = 256;
  c.network = NetworkSize{.ngf = 64, .n_down = 2, .n_blocks = 9, .ndf = 64, .disc_layers = 3};
  return c;
}

GanModel::GanModel() : impl_(std::make_unique<Impl>()) {}
GanModel::~GanModel() = default;
GanModel::GanModel(GanModel&&) noexcept = default;
GanModel& GanModel::operator=(GanModel&&) noexcept = default;

GanModel::Impl& GanModel::impl() { return *impl_; }
const GanModel::Impl& GanModel::impl() const { return *impl_; }

GanModel GanModel::create(const GanConfig& cfg, std::optional<GradeLabel> target_grade) {
  cfg.validate();
  GanModel m;
  auto& s = *m.impl_;
  s.cfg = cfg;
  s.grade = target_grade;
  s.g = ResnetGenerator(generator_options(cfg.network));
  s.d_y = PatchDiscriminator(discriminator_options(cfg.network));
  init_weights(*s.g);
  init_weights(*s.d_y);
  if (cfg.variant == Variant::cyclegan) {
    s.f = ResnetGenerator(generator_options(cfg.network));
    s.d_x = PatchDiscriminator(discriminator_options(cfg.network));
    init_weights(*s.f);
    init_weights(*s.d_x);
  } else {
    s.nce_layers = choose_nce_layers(*s.g, cfg.network);
    std::vector<int> channels;
    for (int l : s.nce_layers) channels.push_back(s.g->stage_channels(l));
    s.h = PatchSampleMLP(channels, cfg.projection_dim);
    init_weights(*s.h);
  }
  return m;
}

bool GanModel::loaded() const { return impl_ && !impl_->g.is_empty(); }
const GanConfig& GanModel::config() const { return impl_->cfg; }
std::optional<GradeLabel> GanModel::target_grade() const { return impl_->grade; }
int GanModel::epochs_trained() const { return impl_->epochs; }

namespace {
Image run_generator(ResnetGenerator g, const Image& img, int work_size, int output_size) {
  torch::NoGradGuard no_grad;
  g->eval();
  auto out = g->forward(to_tensor(img, work_size).unsqueeze(0)).squeeze(0);
  Image result = from_tensor(out);
  if (result.height() != output_size || result.width() != output_size) {
    result = augment::resize(result, output_size, output_size);
  }
  return result;
}
}  // namespace

Image GanModel::translate(const Image& img, int output_size) const {
  if (!loaded()) throw PreconditionError("translate: generator not loaded");
  return run_generator(impl_->g, img, impl_->cfg.image_size, output_size);
}

Image GanModel::translate_reverse(const Image& img, int output_size) const {
  if (!loaded() || impl_->f.is_empty()) {
    throw PreconditionError("translate_reverse: no reverse generator (CycleGAN only)");
  }
  return run_generator(impl_->f, img, impl_->cfg.image_size, output_size);
}

void GanModel::save(const std::filesystem::path& dir) const {
  if (!loaded()) throw PreconditionError("save: model not initialised");
  std::filesystem::create_directories(dir);
  const auto& s = *impl_;
  json files = json::object();
  auto save_one = [&](const std::string& name, std::shared_ptr<torch::nn::Module> m) {
    const auto file = name + ".pt";
    torch::serialize::OutputArchive ar;
    m->save(ar);
    ar.save_to((dir / file).string());
    files[name] = file;
  };
  save_one("G", s.g.ptr());
  save_one("D_Y", s.d_y.ptr());
  if (s.cfg.variant == Variant::cyclegan) {
    save_one("F", s.f.ptr());
    save_one("D_X", s.d_x.ptr());
  } else {
    save_one("H", s.h.ptr());
  }
  json manifest = {{"variant", std::string(to_string(s.cfg.variant))},
                   {"grade", s.grade ? json(s.grade->value()) : json(nullptr)},
                   {"config", to_json(s.cfg)},
                   {"seed", s.cfg.seed},
                   {"epoch", s.epochs},
                   {"networks", files}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

GanModel GanModel::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw LoadError("no GAN checkpoint manifest in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw LoadError("bad GAN checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  const auto variant = variant_from_string(manifest.at("variant").get<std::string>());
  GanConfig cfg = gan_config_from_json(manifest.at("config"), desk_config(variant));
  std::optional<GradeLabel> grade;
  if (!manifest.at("grade").is_null()) grade = GradeLabel(manifest.at("grade").get<int>());
  GanModel m = create(cfg, grade);
  auto& s = *m.impl_;
  s.epochs = manifest.value("epoch", 0);
  auto load_one = [&](const std::string& name, std::shared_ptr<torch::nn::Module> mod) {
    const auto file = dir / manifest.at("networks").at(name).get<std::string>();
    if (!std::filesystem::exists(file)) throw LoadError("missing network file " + file.string());
    torch::serialize::InputArchive ar;
    ar.load_from(file.string());
    mod->load(ar);
  };
  load_one("G", s.g.ptr());
  load_one("D_Y", s.d_y.ptr());
  if (variant == Variant::cyclegan) {
    load_one("F", s.f.ptr());
    load_one("D_X", s.d_x.ptr());
  } else {
    load_one("H", s.h.ptr());
  }
  return m;
}

GanTrainResult train_cyclegan(const DomainPartition& part, const GanConfig& cfg) {
  if (cfg.variant != Variant::cyclegan) throw PreconditionError("train_cyclegan: config variant is not cyclegan");
  cfg.validate();
  check_partition(part);
  torch::manual_seed(cfg.seed);

  GanTrainResult result{GanModel::create(cfg, part.target_grade), {}};
  auto& s = result.model.impl();
  const auto real_a_all = domain_tensor(part.trainA, cfg.image_size);
  const auto real_b_all = domain_tensor(part.trainB, cfg.image_size);
  Sampler sample_a(real_a_all.size(0));
  Sampler sample_b(real_b_all.size(0));

  auto opt_g = make_adam(params_of({s.g.get(), s.f.get()}), cfg);
  auto opt_d = make_adam(params_of({s.d_x.get(), s.d_y.get()}), cfg);
  const int steps = steps_for(part, cfg);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    sample_a.reshuffle();
    sample_b.reshuffle();
    s.g->train();
    s.f->train();
    EpochAccumulator acc;
    for (int step = 0; step < steps; ++step) {
      const auto real_a = real_a_all.index_select(0, sample_a.batch(step, cfg.batch_size));
      const auto real_b = real_b_all.index_select(0, sample_b.batch(step, cfg.batch_size));

      // Generators.
      set_requires_grad(*s.d_x, false);
      set_requires_grad(*s.d_y, false);
      opt_g.zero_grad();
      const auto fake_b = s.g->forward(real_a);
      const auto rec_a = s.f->forward(fake_b);
      const auto fake_a = s.f->forward(real_b);
      const auto rec_b = s.g->forward(fake_a);
      const auto adv_g = generator_adversarial_loss(torch::sigmoid(s.d_y->forward(fake_b))) +
                         generator_adversarial_loss(torch::sigmoid(s.d_x->forward(fake_a)));
      const auto cyc = cycle_loss(real_a, rec_a, real_b, rec_b);
      const auto loss_g = adv_g + cfg.lambda_cyc * cyc;
      loss_g.backward();
      opt_g.step();

      // Discriminators ascend the adversarial estimator.
      set_requires_grad(*s.d_x, true);
      set_requires_grad(*s.d_y, true);
      opt_d.zero_grad();
      const auto adv_y = adversarial_loss(torch::sigmoid(s.d_y->forward(real_b)),
                                          torch::sigmoid(s.d_y->forward(fake_b.detach())));
      const auto adv_x = adversarial_loss(torch::sigmoid(s.d_x->forward(real_a)),
                                          torch::sigmoid(s.d_x->forward(fake_a.detach())));
      const auto loss_d = -0.5 * (adv_y + adv_x);
      loss_d.backward();
      opt_d.step();

      const double vg = loss_g.item<double>();
      const double vd = loss_d.item<double>();
      const double vc = cyc.item<double>();
      const double va = adv_y.item<double>();
      const double vax = adv_x.item<double>();
      check_finite(vg, "generator", epoch, step);
      check_finite(vd, "discriminator", epoch, step);
      acc.add("generator", vg);
      acc.add("discriminator", vd);
      acc.add("cycle", vc);
      acc.add("adversarial", va);
      acc.add("adversarial_x", vax);
      ++acc.steps;
    }
    result.history.push_back(acc.finish(epoch));
    s.epochs = epoch + 1;
    log::debug("cyclegan epoch ", epoch + 1, " generator=", result.history.back().values["generator"]);
  }
  return result;
}

GanTrainResult train_cut(const DomainPartition& part, const GanConfig& cfg) {
  if (cfg.variant != Variant::cut) throw PreconditionError("train_cut: config variant is not cut");
  cfg.validate();
  check_partition(part);
  torch::manual_seed(cfg.seed);

  GanTrainResult result{GanModel::create(cfg, part.target_grade), {}};
  auto& s = result.model.impl();
  const auto real_a_all = domain_tensor(part.trainA, cfg.image_size);
  const auto real_b_all = domain_tensor(part.trainB, cfg.image_size);
  Sampler sample_a(real_a_all.size(0));
  Sampler sample_b(real_b_all.size(0));

  auto opt_g = make_adam(params_of({s.g.get(), s.h.get()}), cfg);
  auto opt_d = make_adam(params_of({s.d_y.get()}), cfg);
  const int steps = steps_for(part, cfg);

  // Mean per-anchor contrastive loss over the tapped layers.
  auto nce = [&](const torch::Tensor& source, const torch::Tensor& translated) {
    const auto feat_k = s.g->encode(source, s.nce_layers);
    const auto feat_q = s.g->encode(translated, s.nce_layers);
    auto keys = s.h->forward(feat_k, cfg.patches_per_image);
    auto queries = s.h->forward(feat_q, cfg.patches_per_image, keys.positions);
    torch::Tensor total = torch::zeros({});
    for (std::size_t l = 0; l < s.nce_layers.size(); ++l) {
      const auto patches = queries.features[l].size(1);
      if (patches < 2) continue;
      const int m = cfg.negatives_per_anchor == 0
                        ? 0
                        : static_cast<int>(std::min<int64_t>(cfg.negatives_per_anchor, patches - 1));
      total = total + patch_nce_loss_in_image(queries.features[l], keys.features[l].detach(), cfg.tau, m) /
                          static_cast<double>(patches);
    }
    return total / static_cast<double>(s.nce_layers.size());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    sample_a.reshuffle();
    sample_b.reshuffle();
    s.g->train();
    EpochAccumulator acc;
    for (int step = 0; step < steps; ++step) {
      const auto real_a = real_a_all.index_select(0, sample_a.batch(step, cfg.batch_size));
      const auto real_b = real_b_all.index_select(0, sample_b.batch(step, cfg.batch_size));
      const auto batch = real_a.size(0);

      const auto input = cfg.nce_identity ? torch::cat({real_a, real_b}) : real_a;
      const auto output = s.g->forward(input);
      const auto fake_b = output.slice(0, 0, batch);

      // Generator and projection head.
      set_requires_grad(*s.d_y, false);
      opt_g.zero_grad();
      const auto adv_g = generator_adversarial_loss(torch::sigmoid(s.d_y->forward(fake_b)));
      auto loss_nce = nce(real_a, fake_b);
      if (cfg.nce_identity) {
        const auto idt_b = output.slice(0, batch, 2 * batch);
        loss_nce = 0.5 * (loss_nce + nce(real_b, idt_b));
      }
      const auto loss_g = adv_g + cfg.lambda_nce * loss_nce;
      loss_g.backward();
      opt_g.step();

      set_requires_grad(*s.d_y, true);
      opt_d.zero_grad();
      const auto adv = adversarial_loss(torch::sigmoid(s.d_y->forward(real_b)),
                                        torch::sigmoid(s.d_y->forward(fake_b.detach())));
      const auto loss_d = -0.5 * adv;
      loss_d.backward();
      opt_d.step();

      const double vg = loss_g.item<double>();
      const double vd = loss_d.item<double>();
      check_finite(vg, "generator", epoch, step);
      check_finite(vd, "discriminator", epoch, step);
      acc.add("generator", vg);
      acc.add("discriminator", vd);
      acc.add("nce", loss_nce.item<double>());
      acc.add("adversarial", adv.item<double>());
      ++acc.steps;
    }
    result.history.push_back(acc.finish(epoch));
    s.epochs = epoch + 1;
    log::debug("cut epoch ", epoch + 1, " generator=", result.history.back().values["generator"]);
  }
  return result;
}

GanTrainResult train(const DomainPartition& part, const GanConfig& cfg) {
  return cfg.variant == Variant::cut ? train_cut(part, cfg) : train_cyclegan(part, cfg);
}

Dataset generate(const GanModel& model, const Dataset& sources, GradeLabel target_grade, std::size_t n) {
  if (!model.loaded()) throw PreconditionError("generate: generator not loaded");
  if (n < 1) throw ValidationError("generate: n must be >= 1");
  if (sources.empty()) throw PreconditionError("generate: no source images");
  std::vector<ImageRecord> out;
  out.reserve(n);
  const auto prov = provenance_of(model.config().variant);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& src = sources[i % sources.size()];
    ImageRecord rec;
    rec.patient_id = src.patient_id;
    rec.grade = target_grade;
    rec.provenance = prov;
    rec.source_path = src.source_path;
    rec.pixels = model.translate(src.pixels, augment::kStandardSize);
    out.push_back(std::move(rec));
  }
  return Dataset(std::move(out));
}

void write_generated(const Dataset& generated, Variant variant, GradeLabel grade,
                     const std::filesystem::path& out) {
  const auto dir = out / std::string(to_string(variant)) / ("grade_" + std::to_string(grade.value()));
  std::filesystem::create_directories(dir);
  std::vector<csv::Row> rows = {{"patient_id", "image_path", "ventilation_hours", "grade", "provenance"}};
  for (std::size_t i = 0; i < generated.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "gen_%05zu.png", i);
    write_png(dir / name, generated[i].pixels);
    rows.push_back({generated[i].patient_id, name, "", std::to_string(generated[i].grade.value()),
                    std::string(bronchograde::to_string(generated[i].provenance))});
  }
  csv::write_file(dir / "manifest.csv", rows);
}

void write_history(const LossHistory& history, const std::filesystem::path& path) {
  std::vector<csv::Row> rows = {{"epoch", "loss_name", "value"}};
  for (const auto& e : history) {
    for (const auto& [name, value] : e.values) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.9g", value);
      rows.push_back({std::to_string(e.epoch), name, buf});
    }
  }
  csv::write_file(path, rows);
}

std::array<std::size_t, GradeLabel::kCount> table1_generation_targets(Variant v) {
  if (v == Variant::cyclegan) return {702, 2322, 810, 1557, 690, 960};
  return {1098, 837, 1070, 918, 1098, 1053};
}

}  // namespace bronchograde::gan

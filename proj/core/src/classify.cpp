#include "bronchograde/classify.hpp"

#include <torch/torch.h>

#include <cmath>
#include <fstream>
#include <set>

#include "bronchograde/classify_networks.hpp"
#include "bronchograde/config_io.hpp"
#include "bronchograde/csv.hpp"
#include "bronchograde/errors.hpp"
#include "bronchograde/log.hpp"
#include "bronchograde/random.hpp"
#include "bronchograde/tensor_image.hpp"

namespace bronchograde::classify {

using nlohmann::json;

struct TrainedClassifier::Impl {
  ClassifierConfig cfg;
  std::shared_ptr<ClassifierNet> net;
  bool trained = false;
  int best_epoch = 0;
  /// Modules outside the trainable scope; kept in eval mode while training.
  std::vector<std::shared_ptr<torch::nn::Module>> frozen;
};

namespace {

bool contains_module(const std::vector<std::shared_ptr<torch::nn::Module>>& set,
                     const std::shared_ptr<torch::nn::Module>& m) {
  for (const auto& s : set)
    if (s.get() == m.get()) return true;
  return false;
}

bool contains_ptr(const std::vector<torch::Tensor>& set, const torch::Tensor& t) {
  for (const auto& s : set)
    if (s.unsafeGetTensorImpl() == t.unsafeGetTensorImpl()) return true;
  return false;
}

std::vector<torch::Tensor> module_params(const std::vector<std::shared_ptr<torch::nn::Module>>& mods) {
  std::vector<torch::Tensor> out;
  for (const auto& m : mods) {
    auto p = m->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void apply_scope(TrainedClassifier::Impl& s) {
  auto& net = *s.net;
  std::vector<torch::Tensor> trainable;
  s.frozen.clear();
  switch (s.cfg.trainable_scope) {
    case TrainableScope::full:
      trainable = net.parameters();
      break;
    case TrainableScope::head_only:
      trainable = net.head()->parameters();
      break;
    case TrainableScope::last_block_and_head: {
      trainable = module_params(net.last_block());
      auto head = net.head()->parameters();
      trainable.insert(trainable.end(), head.begin(), head.end());
      break;
    }
  }
  for (auto& p : net.parameters()) p.set_requires_grad(contains_ptr(trainable, p));
  if (s.cfg.trainable_scope == TrainableScope::full) return;
  // Leaf modules with no trainable parameter are frozen (normalisation statistics included).
  for (const auto& m : net.modules(/*include_self=*/false)) {
    if (!m->children().empty()) continue;
    bool any_trainable = false;
    for (const auto& p : m->parameters()) any_trainable |= p.requires_grad();
    if (!any_trainable) s.frozen.push_back(m);
  }
}

void set_train_mode(TrainedClassifier::Impl& s, bool training) {
  s.net->train(training);
  if (training)
    for (auto& m : s.frozen) m->eval();
}

torch::Tensor batch_of(const Dataset& ds, const std::vector<int64_t>& idx, int size) {
  std::vector<const Image*> imgs;
  imgs.reserve(idx.size());
  for (auto i : idx) imgs.push_back(&ds[static_cast<std::size_t>(i)].pixels);
  return to_batch(imgs, size);
}

/// Re-estimates batch-norm running statistics of the trainable modules as an exact average over
/// `ds`; the momentum-based estimate lags far behind the weights early in training.
void recalibrate_batch_norm(TrainedClassifier::Impl& s, const Dataset& ds) {
  std::vector<torch::nn::BatchNorm2dImpl*> bns;
  for (const auto& m : s.net->modules(/*include_self=*/false)) {
    auto* bn = dynamic_cast<torch::nn::BatchNorm2dImpl*>(m.get());
    if (bn && !contains_module(s.frozen, m)) bns.push_back(bn);
  }
  if (bns.empty() || ds.empty()) return;
  torch::NoGradGuard no_grad;
  set_train_mode(s, true);
  for (auto* bn : bns) {
    bn->reset_running_stats();
    bn->options.momentum(std::nullopt);
  }
  const auto bs = static_cast<std::size_t>(std::max(2, s.cfg.batch_size));
  for (std::size_t start = 0; start < ds.size(); start += bs) {
    std::vector<int64_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + bs); ++i) idx.push_back(static_cast<int64_t>(i));
    if (idx.size() < 2 && ds.size() > 1) continue;
    s.net->forward_all(batch_of(ds, idx, s.cfg.input_size));
  }
  for (auto* bn : bns) bn->options.momentum(0.1);
  set_train_mode(s, false);
}

double accuracy_on(TrainedClassifier::Impl& s, const Dataset& ds) {
  if (ds.empty()) return 0.0;
  torch::NoGradGuard no_grad;
  set_train_mode(s, false);
  std::size_t correct = 0;
  const int bs = std::max(1, s.cfg.batch_size);
  for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(bs)) {
    std::vector<int64_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + static_cast<std::size_t>(bs)); ++i) {
      idx.push_back(static_cast<int64_t>(i));
    }
    const auto logits = s.net->forward_all(batch_of(ds, idx, s.cfg.input_size)).logits.to(torch::kFloat64);
    const auto probs = torch::softmax(logits, 1);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      std::array<double, GradeLabel::kCount> p{};
      for (int c = 0; c < GradeLabel::kCount; ++c) p[static_cast<std::size_t>(c)] = probs[static_cast<int64_t>(j)][c].item<double>();
      if (decide(p) == ds[static_cast<std::size_t>(idx[j])].grade) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::vector<torch::Tensor> snapshot_state(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  for (const auto& b : m.buffers()) out.push_back(b.detach().clone());
  return out;
}

void restore_state(torch::nn::Module& m, const std::vector<torch::Tensor>& state) {
  torch::NoGradGuard no_grad;
  std::size_t i = 0;
  for (auto& p : m.parameters()) p.copy_(state[i++]);
  for (auto& b : m.buffers()) b.copy_(state[i++]);
}

FeatureMaps to_maps(const torch::Tensor& t) {
  // t: [1, K, h, w]
  const auto c = t.detach().to(torch::kFloat64).contiguous();
  FeatureMaps m;
  m.channels = static_cast<int>(c.size(1));
  m.height = static_cast<int>(c.size(2));
  m.width = static_cast<int>(c.size(3));
  m.data.assign(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
  return m;
}

std::array<double, GradeLabel::kCount> row_of(const torch::Tensor& logits) {
  const auto l = logits.detach().to(torch::kFloat64).contiguous();
  std::array<double, GradeLabel::kCount> out{};
  for (int c = 0; c < GradeLabel::kCount; ++c) out[static_cast<std::size_t>(c)] = l[0][c].item<double>();
  return out;
}

void load_pretrained(TrainedClassifier::Impl& s) {
  if (!s.cfg.pretrained) return;
  if (s.cfg.weights_path.empty() || !std::filesystem::exists(s.cfg.weights_path)) {
    log::warn("classifier: pretrained weights requested but no weight source is configured"
              " or found (", s.cfg.weights_path.empty() ? "<unset>" : s.cfg.weights_path,
              "); using random initialisation");
    return;
  }
  auto donor = make_network(s.cfg);
  // A saved classifier directory or a bare archive file.
  std::filesystem::path source = s.cfg.weights_path;
  if (std::filesystem::is_directory(source)) source /= "model.pt";
  torch::serialize::InputArchive ar;
  ar.load_from(source.string());
  donor->load(ar);
  torch::NoGradGuard no_grad;
  auto src = donor->named_parameters();
  auto head_params = s.net->head()->parameters();
  for (auto& p : s.net->named_parameters()) {
    if (contains_ptr(head_params, p.value())) continue;
    if (auto* v = src.find(p.key())) p.value().copy_(*v);
  }
  auto src_buffers = donor->named_buffers();
  for (auto& b : s.net->named_buffers()) {
    if (auto* v = src_buffers.find(b.key())) b.value().copy_(*v);
  }
  log::info("classifier: loaded pretrained backbone weights from ", s.cfg.weights_path);
}

void require_trained(const TrainedClassifier::Impl& s, const char* op) {
  if (!s.net) throw PreconditionError(std::string(op) + ": model not built");
  if (!s.trained) throw PreconditionError(std::string(op) + ": model is untrained");
}

void require_input(const Image& img) {
  if (img.empty() || img.height() < 1 || img.width() < 1) {
    throw ValidationError("classifier input must be a non-empty RGB image");
  }
}

}  // namespace

std::string_view to_string(Backbone b) { return b == Backbone::vit ? "vit" : "inception_cnn"; }

Backbone backbone_from_string(std::string_view s) {
  if (s == "inception_cnn") return Backbone::inception_cnn;
  if (s == "vit") return Backbone::vit;
  throw ValidationError("unknown backbone: " + std::string(s));
}

std::string_view to_string(TrainableScope s) {
  switch (s) {
    case TrainableScope::head_only: return "head_only";
    case TrainableScope::last_block_and_head: return "last_block_and_head";
    case TrainableScope::full: return "full";
  }
  return "full";
}

TrainableScope scope_from_string(std::string_view s) {
  if (s == "head_only") return TrainableScope::head_only;
  if (s == "last_block_and_head") return TrainableScope::last_block_and_head;
  if (s == "full") return TrainableScope::full;
  throw ValidationError("unknown trainable scope: " + std::string(s));
}

void ClassifierConfig::validate() const {
  if (epochs < 1) throw ValidationError("classifier: epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("classifier: learning_rate must be positive");
  if (batch_size < 1) throw ValidationError("classifier: batch_size must be >= 1");
  if (input_size < 8) throw ValidationError("classifier: input_size must be >= 8");
  if (backbone == Backbone::inception_cnn && input_size % 4 != 0) {
    throw ValidationError("classifier: inception input_size must be a multiple of 4");
  }
}

ClassifierConfig desk_classifier_config(Backbone b) {
  ClassifierConfig c;
  c.backbone = b;
  c.learning_rate = 3e-3;
  return c;
}

ClassifierConfig paper_classifier_config(Backbone b) {
  ClassifierConfig c;
  c.backbone = b;
  c.pretrained = true;
  c.trainable_scope = TrainableScope::last_block_and_head;
  c.input_size = 224;
  c.width = 64;
  c.vit = VitOptions{.patch_size = 16, .dim = 384, .depth = 6, .heads = 6, .mlp_dim = 1536};
  return c;
}

GradeLabel decide(const std::array<double, GradeLabel::kCount>& probabilities) {
  int best = 0;
  for (int i = 1; i < GradeLabel::kCount; ++i) {
    if (probabilities[static_cast<std::size_t>(i)] > probabilities[static_cast<std::size_t>(best)]) best = i;
  }
  return GradeLabel::from_index(best);
}

TrainedClassifier::TrainedClassifier() : impl_(std::make_unique<Impl>()) {}
TrainedClassifier::~TrainedClassifier() = default;
TrainedClassifier::TrainedClassifier(TrainedClassifier&&) noexcept = default;
TrainedClassifier& TrainedClassifier::operator=(TrainedClassifier&&) noexcept = default;
TrainedClassifier::Impl& TrainedClassifier::impl() { return *impl_; }
const TrainedClassifier::Impl& TrainedClassifier::impl() const { return *impl_; }

const ClassifierConfig& TrainedClassifier::config() const { return impl_->cfg; }
bool TrainedClassifier::trained() const { return impl_->trained; }

std::vector<GradeLabel> TrainedClassifier::label_order() const {
  std::vector<GradeLabel> order;
  for (auto g : all_grades()) order.push_back(g);
  return order;
}

std::int64_t TrainedClassifier::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : impl_->net->parameters()) n += p.numel();
  return n;
}

std::int64_t TrainedClassifier::trainable_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : impl_->net->parameters())
    if (p.requires_grad()) n += p.numel();
  return n;
}

std::int64_t TrainedClassifier::head_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : impl_->net->head()->parameters()) n += p.numel();
  return n;
}

int TrainedClassifier::feature_dim() const { return impl_->net->feature_dim(); }

std::array<double, GradeLabel::kCount> TrainedClassifier::logits(const Image& img) const {
  require_input(img);
  torch::NoGradGuard no_grad;
  impl_->net->eval();
  return row_of(impl_->net->forward_all(to_tensor(img, impl_->cfg.input_size).unsqueeze(0)).logits);
}

Prediction TrainedClassifier::predict(const Image& img) const {
  require_trained(*impl_, "predict");
  require_input(img);
  torch::NoGradGuard no_grad;
  impl_->net->eval();
  const auto logits = impl_->net->forward_all(to_tensor(img, impl_->cfg.input_size).unsqueeze(0)).logits;
  const auto probs = torch::softmax(logits.to(torch::kFloat64), 1);
  Prediction p;
  for (int c = 0; c < GradeLabel::kCount; ++c) p.probabilities[static_cast<std::size_t>(c)] = probs[0][c].item<double>();
  p.grade = decide(p.probabilities);
  return p;
}

std::vector<double> TrainedClassifier::extract_features(const Image& img) const {
  require_trained(*impl_, "extract_features");
  require_input(img);
  torch::NoGradGuard no_grad;
  impl_->net->eval();
  const auto f = impl_->net->forward_all(to_tensor(img, impl_->cfg.input_size).unsqueeze(0))
                     .features.to(torch::kFloat64)
                     .contiguous();
  return std::vector<double>(f.data_ptr<double>(), f.data_ptr<double>() + f.numel());
}

GradientProbe TrainedClassifier::activations_and_gradients(const Image& img, int target_grade) const {
  if (target_grade < GradeLabel::kMin || target_grade > GradeLabel::kMax) {
    throw ValidationError("target class must be a grade in [1, 6], got " + std::to_string(target_grade));
  }
  if (!impl_->net) throw PreconditionError("activations_and_gradients: model not built");
  if (impl_->cfg.backbone == Backbone::vit && !impl_->cfg.vit_grad_cam) {
    throw PreconditionError("activations_and_gradients: ViT token-grid maps are disabled (vit_grad_cam)");
  }
  require_input(img);
  impl_->net->eval();
  const auto out = impl_->net->forward_all(to_tensor(img, impl_->cfg.input_size).unsqueeze(0));
  auto spatial = out.spatial.detach().requires_grad_(true);
  const auto context = out.context.defined() ? out.context.detach() : out.context;
  const auto logits = impl_->net->logits_from_spatial(spatial, context);
  const auto grad = torch::autograd::grad({logits[0][target_grade - 1]}, {spatial})[0];
  return GradientProbe{to_maps(spatial), to_maps(grad)};
}

std::array<double, GradeLabel::kCount> TrainedClassifier::logits_from_activations(const FeatureMaps& maps) const {
  if (!impl_->net) throw PreconditionError("logits_from_activations: model not built");
  torch::NoGradGuard no_grad;
  impl_->net->eval();
  auto t = torch::from_blob(const_cast<double*>(maps.data.data()), {1, maps.channels, maps.height, maps.width},
                            torch::kFloat64)
               .to(torch::kFloat32);
  torch::Tensor context;
  if (impl_->cfg.backbone == Backbone::vit) {
    throw PreconditionError("logits_from_activations: ViT needs the class-token context of a forward pass");
  }
  return row_of(impl_->net->logits_from_spatial(t, context));
}

std::vector<std::vector<float>> TrainedClassifier::parameter_snapshot() const {
  std::vector<std::vector<float>> out;
  for (const auto& p : impl_->net->parameters()) {
    const auto c = p.detach().to(torch::kFloat32).contiguous();
    out.emplace_back(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  }
  return out;
}

std::vector<std::string> TrainedClassifier::trainable_parameter_names() const {
  std::vector<std::string> out;
  for (const auto& p : impl_->net->named_parameters())
    if (p.value().requires_grad()) out.push_back(p.key());
  return out;
}

std::vector<std::string> TrainedClassifier::parameter_names() const {
  std::vector<std::string> out;
  for (const auto& p : impl_->net->named_parameters()) out.push_back(p.key());
  return out;
}

void TrainedClassifier::save(const std::filesystem::path& dir) const {
  if (!impl_->net) throw PreconditionError("save: model not built");
  std::filesystem::create_directories(dir);
  torch::serialize::OutputArchive ar;
  impl_->net->save(ar);
  ar.save_to((dir / "model.pt").string());
  json labels = json::array();
  for (auto g : label_order()) labels.push_back(g.value());
  json meta = {{"config", to_json(impl_->cfg)},
               {"label_order", labels},
               {"seed", impl_->cfg.seed},
               {"trained", impl_->trained},
               {"best_epoch", impl_->best_epoch}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
}

TrainedClassifier TrainedClassifier::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw LoadError("no classifier checkpoint in " + dir.string());
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw LoadError("bad classifier metadata in " + dir.string() + ": " + e.what());
  }
  const auto labels = meta.at("label_order").get<std::vector<int>>();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != static_cast<int>(i) + 1) throw LoadError("unsupported label order in " + dir.string());
  }
  auto cfg = classifier_config_from_json(meta.at("config"), ClassifierConfig{});
  cfg.pretrained = false;  // weights come from the checkpoint itself
  TrainedClassifier m = build_classifier(cfg);
  m.impl_->cfg = classifier_config_from_json(meta.at("config"), ClassifierConfig{});
  torch::serialize::InputArchive ar;
  ar.load_from((dir / "model.pt").string());
  m.impl_->net->load(ar);
  apply_scope(*m.impl_);
  m.impl_->trained = meta.value("trained", true);
  m.impl_->best_epoch = meta.value("best_epoch", 0);
  return m;
}

TrainedClassifier build_classifier(const ClassifierConfig& cfg) {
  cfg.validate();
  torch::manual_seed(cfg.seed);
  TrainedClassifier m;
  auto& s = m.impl();
  s.cfg = cfg;
  s.net = make_network(cfg);
  load_pretrained(s);
  if (!cfg.pretrained && cfg.trainable_scope != TrainableScope::full) {
    log::warn("classifier: trainable scope '", to_string(cfg.trainable_scope),
              "' on a randomly initialised backbone");
  }
  // Fresh head regardless of any loaded weights.
  {
    torch::NoGradGuard no_grad;
    s.net->head()->reset_parameters();
  }
  apply_scope(s);
  return m;
}

TrainingHistory finetune(TrainedClassifier& model, const Dataset& train, const Dataset& val) {
  auto& s = model.impl();
  if (!s.net) throw PreconditionError("finetune: model not built");
  if (train.empty()) throw PreconditionError("finetune: empty training set");
  const auto& cfg = s.cfg;
  for (auto g : all_grades()) {
    if (train.count(g) == 0) log::warn("finetune: grade ", g.value(), " absent from the training set");
  }
  torch::manual_seed(derive_seed(cfg.seed, {0xC1A55ULL}));

  std::vector<torch::Tensor> trainable;
  for (const auto& p : s.net->parameters())
    if (p.requires_grad()) trainable.push_back(p);
  if (trainable.empty()) throw PreconditionError("finetune: no trainable parameters");
  torch::optim::Adam opt(trainable, torch::optim::AdamOptions(cfg.learning_rate));

  torch::Tensor class_weights;
  if (cfg.class_weighting) {
    class_weights = torch::zeros({GradeLabel::kCount});
    for (auto g : all_grades()) {
      const auto n = train.count(g);
      class_weights[g.index()] = n ? static_cast<double>(train.size()) / (GradeLabel::kCount * static_cast<double>(n)) : 0.0;
    }
  }

  std::vector<int64_t> labels;
  for (const auto& r : train) labels.push_back(r.grade.index());
  const auto label_tensor = torch::tensor(labels, torch::kLong);

  TrainingHistory history;
  std::vector<torch::Tensor> best_state;
  double best_acc = -1.0;
  const auto n = static_cast<int64_t>(train.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    set_train_mode(s, true);
    const auto perm = torch::randperm(n, torch::kLong);
    double loss_sum = 0.0;
    int64_t seen = 0;
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const auto end = std::min<int64_t>(n, start + cfg.batch_size);
      const auto idx_t = perm.slice(0, start, end);
      std::vector<int64_t> idx(idx_t.data_ptr<int64_t>(), idx_t.data_ptr<int64_t>() + idx_t.numel());
      if (idx.size() == 1 && n > 1 && cfg.backbone == Backbone::inception_cnn &&
          cfg.trainable_scope == TrainableScope::full) {
        // A single-sample batch cannot update batch-norm statistics; fold it into the next epoch.
        continue;
      }
      const auto x = batch_of(train, idx, cfg.input_size);
      const auto y = label_tensor.index_select(0, idx_t);
      opt.zero_grad();
      const auto logits = s.net->forward_all(x).logits;
      auto opts = torch::nn::functional::CrossEntropyFuncOptions();
      if (class_weights.defined()) opts = opts.weight(class_weights);
      const auto loss = torch::nn::functional::cross_entropy(logits, y, opts);
      const double v = loss.item<double>();
      if (!std::isfinite(v)) {
        throw TrainingDiverged("finetune: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      loss.backward();
      opt.step();
      loss_sum += v * static_cast<double>(idx.size());
      seen += static_cast<int64_t>(idx.size());
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    recalibrate_batch_norm(s, train);
    rec.val_accuracy = accuracy_on(s, val.empty() ? train : val);
    history.epochs.push_back(rec);
    if (rec.val_accuracy > best_acc) {
      best_acc = rec.val_accuracy;
      history.best_epoch = rec.epoch;
      best_state = snapshot_state(*s.net);
    }
  }
  restore_state(*s.net, best_state);
  set_train_mode(s, false);
  history.best_val_accuracy = best_acc;
  s.trained = true;
  s.best_epoch = history.best_epoch;
  return history;
}

void write_history(const TrainingHistory& history, const std::filesystem::path& path) {
  std::vector<csv::Row> rows = {{"epoch", "train_loss", "val_accuracy"}};
  for (const auto& e : history.epochs) {
    char loss[32], acc[32];
    std::snprintf(loss, sizeof loss, "%.9g", e.train_loss);
    std::snprintf(acc, sizeof acc, "%.6f", e.val_accuracy);
    rows.push_back({std::to_string(e.epoch), loss, acc});
  }
  csv::write_file(path, rows);
}

}  // namespace bronchograde::classify

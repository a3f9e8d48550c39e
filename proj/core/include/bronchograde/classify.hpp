#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "bronchograde/data_model.hpp"
#include "bronchograde/feature_maps.hpp"
#include "bronchograde/image.hpp"

namespace bronchograde::classify {

enum class Backbone { inception_cnn, vit };
enum class TrainableScope { head_only, last_block_and_head, full };

std::string_view to_string(Backbone b);
Backbone backbone_from_string(std::string_view s);
std::string_view to_string(TrainableScope s);
TrainableScope scope_from_string(std::string_view s);

struct VitOptions {
  int patch_size = 4;
  int dim = 64;
  int depth = 2;
  int heads = 4;
  int mlp_dim = 128;
};

struct ClassifierConfig {
  Backbone backbone = Backbone::inception_cnn;
  bool pretrained = false;
  /// Checkpoint of the same architecture; its backbone weights are copied, the head is not.
  std::string weights_path;
  TrainableScope trainable_scope = TrainableScope::full;
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  /// Working resolution; 256x256 inputs are resized to it internally.
  int input_size = 32;
  /// Base channel width of the inception-style backbone.
  int width = 16;
  VitOptions vit;
  /// Inverse-frequency class weights in the cross-entropy.
  bool class_weighting = false;
  /// Expose the final transformer block's token grid as a spatial map for Grad-CAM.
  bool vit_grad_cam = false;

  void validate() const;
};

ClassifierConfig desk_classifier_config(Backbone b);
ClassifierConfig paper_classifier_config(Backbone b);

struct Prediction {
  GradeLabel grade{1};
  std::array<double, GradeLabel::kCount> probabilities{};
};

/// Index of the largest probability; ties go to the lower grade.
GradeLabel decide(const std::array<double, GradeLabel::kCount>& probabilities);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
};

struct GradientProbe {
  FeatureMaps activations;
  FeatureMaps gradients;
};

/// Six-way grade classifier. Output index i always maps to grade i + 1.
class TrainedClassifier {
 public:
  TrainedClassifier();
  ~TrainedClassifier();
  TrainedClassifier(TrainedClassifier&&) noexcept;
  TrainedClassifier& operator=(TrainedClassifier&&) noexcept;

  const ClassifierConfig& config() const;
  bool trained() const;
  std::vector<GradeLabel> label_order() const;

  std::int64_t parameter_count() const;
  std::int64_t trainable_parameter_count() const;
  std::int64_t head_parameter_count() const;
  /// Width of the vector feeding the classification head.
  int feature_dim() const;

  /// Raw head outputs; usable before training (shape checks).
  std::array<double, GradeLabel::kCount> logits(const Image& img) const;

  /// Softmax probabilities and the decided grade. Requires a trained model.
  Prediction predict(const Image& img) const;

  /// Penultimate activations (the pooled vector feeding the head). Requires a trained model.
  std::vector<double> extract_features(const Image& img) const;

  /// Last convolutional (or token-grid) maps and d logit[target] / d maps.
  /// target_grade is 1..6.
  GradientProbe activations_and_gradients(const Image& img, int target_grade) const;

  /// Runs only the layers after the spatial map (for finite-difference probes).
  std::array<double, GradeLabel::kCount> logits_from_activations(const FeatureMaps& maps) const;

  /// Snapshot of every parameter value in registration order.
  std::vector<std::vector<float>> parameter_snapshot() const;
  /// Names of parameters inside the trainable scope.
  std::vector<std::string> trainable_parameter_names() const;
  std::vector<std::string> parameter_names() const;

  /// model.pt plus meta.json (config, label order, seed, best epoch).
  void save(const std::filesystem::path& dir) const;
  static TrainedClassifier load(const std::filesystem::path& dir);

  struct Impl;
  Impl& impl();
  const Impl& impl() const;

 private:
  std::unique_ptr<Impl> impl_;
};

/// Fresh six-way head on the chosen backbone; everything outside trainable_scope frozen.
/// Requested pretrained weights that cannot be found produce a warning and random init.
TrainedClassifier build_classifier(const ClassifierConfig& cfg);

/// Cross-entropy fine-tuning over cfg.epochs; keeps the best validation-accuracy weights.
/// Throws PreconditionError on an empty training set, TrainingDiverged on a non-finite loss.
TrainingHistory finetune(TrainedClassifier& model, const Dataset& train, const Dataset& val);

/// CSV with header `epoch,train_loss,val_accuracy`.
void write_history(const TrainingHistory& history, const std::filesystem::path& path);

}  // namespace bronchograde::classify

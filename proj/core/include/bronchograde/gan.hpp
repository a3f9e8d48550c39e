#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bronchograde/data_model.hpp"
#include "bronchograde/image.hpp"

namespace bronchograde::gan {

enum class Variant { cyclegan, cut };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);
Provenance provenance_of(Variant v);

struct NetworkSize {
  int ngf = 16;
  int n_down = 2;
  int n_blocks = 2;
  int ndf = 16;
  int disc_layers = 2;
};

struct GanConfig {
  Variant variant = Variant::cut;
  int epochs = 5;
  int batch_size = 1;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  /// Weight of the cycle-consistency term (CycleGAN).
  double lambda_cyc = 10.0;
  /// Weight of the contrastive term (CUT).
  double lambda_nce = 1.0;
  double tau = 0.07;
  /// Negatives per anchor; 0 = every other sampled patch of the same image.
  int negatives_per_anchor = 0;
  int patches_per_image = 64;
  int projection_dim = 64;
  /// Also apply the contrastive term to G(y) vs y.
  bool nce_identity = true;
  /// Working resolution of the networks; images are resized to it.
  int image_size = 32;
  /// Caps the iterations per epoch; 0 iterates over the larger domain once.
  int max_steps_per_epoch = 0;
  NetworkSize network;
  std::uint64_t seed = 0;

  /// Throws ValidationError on tau <= 0, lambda_cyc < 0, epochs < 1, and similar.
  void validate() const;
};

/// Small networks at 32x32 for tests and quick runs.
GanConfig desk_config(Variant v);
/// Reference-sized networks at 256x256.
GanConfig paper_config(Variant v);

/// Mean losses of one epoch, keyed by loss name ("generator", "discriminator",
/// "adversarial", and "cycle" or "nce").
struct EpochLosses {
  int epoch = 0;
  std::map<std::string, double> values;
};
using LossHistory = std::vector<EpochLosses>;

/// A trained translator. CycleGAN holds G, F, D_X, D_Y; CUT holds G, D and the patch
/// projection head.
class GanModel {
 public:
  GanModel();
  ~GanModel();
  GanModel(GanModel&&) noexcept;
  GanModel& operator=(GanModel&&) noexcept;

  /// Freshly initialised networks for `cfg`.
  static GanModel create(const GanConfig& cfg, std::optional<GradeLabel> target_grade = std::nullopt);

  bool loaded() const;
  const GanConfig& config() const;
  std::optional<GradeLabel> target_grade() const;
  int epochs_trained() const;

  /// G(x), exported at output_size x output_size.
  Image translate(const Image& img, int output_size = 256) const;
  /// F(y); CycleGAN only.
  Image translate_reverse(const Image& img, int output_size = 256) const;

  /// One file per network plus manifest.json (variant, grade, config, seed, epoch).
  void save(const std::filesystem::path& dir) const;
  static GanModel load(const std::filesystem::path& dir);

  struct Impl;
  Impl& impl();
  const Impl& impl() const;

 private:
  std::unique_ptr<Impl> impl_;
  friend struct GanTrainer;
};

struct GanTrainResult {
  GanModel model;
  LossHistory history;
};

/// Alternating D/G updates; G objective = non-saturating adversarial terms in both
/// directions + lambda_cyc * cycle_loss. Throws PreconditionError on an empty domain or a
/// variant mismatch, TrainingDiverged on a non-finite loss.
GanTrainResult train_cyclegan(const DomainPartition& part, const GanConfig& cfg);

/// G objective = non-saturating adversarial term + lambda_nce * mean PatchNCE over the
/// tapped encoder layers (anchors from G(x), positives co-located in x, negatives from
/// other positions of x), optionally averaged with the identity term on y.
GanTrainResult train_cut(const DomainPartition& part, const GanConfig& cfg);

/// Dispatches on cfg.variant.
GanTrainResult train(const DomainPartition& part, const GanConfig& cfg);

/// Applies G to n sources (cycling when n exceeds the source count). Outputs are 256x256,
/// labelled target_grade with the variant's provenance, and keep the source's patient id.
Dataset generate(const GanModel& model, const Dataset& sources, GradeLabel target_grade,
                 std::size_t n);

/// Writes `<out>/{cut|cyclegan}/grade_{g}/gen_<idx>.png` plus a manifest.csv alongside.
void write_generated(const Dataset& generated, Variant variant, GradeLabel grade,
                     const std::filesystem::path& out);

/// CSV with header `epoch,loss_name,value`.
void write_history(const LossHistory& history, const std::filesystem::path& path);

/// Table-1 per-grade generation targets for the reference corpus.
std::array<std::size_t, GradeLabel::kCount> table1_generation_targets(Variant v);

}  // namespace bronchograde::gan

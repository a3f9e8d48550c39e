#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace bronchograde::pipeline {

inline constexpr std::string_view kToolVersion = "0.3.0";

enum class Stage { ingest, split, augment, train_gan, generate, train_classifier, evaluate, interpret, report };

/// Stage names as used on the command line ("train-gan", ...).
std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);
const std::vector<Stage>& all_stages();

enum class Profile { desk, paper };
std::string_view to_string(Profile p);
Profile profile_from_string(std::string_view s);

/// A stage input that is absent from the workspace. Maps to exit code 2.
class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::filesystem::path& artifact)
      : std::runtime_error("missing artifact: " + artifact.string()), artifact_(artifact) {}
  const std::filesystem::path& artifact() const { return artifact_; }

 private:
  std::filesystem::path artifact_;
};

/// Test images found in a training corpus. Maps to exit code 1.
class IsolationViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Augmentation methods a classifier can be trained on, in report order.
inline const std::vector<std::string>& method_keys() {
  static const std::vector<std::string> m = {"original", "transformations", "cyclegan", "cut"};
  return m;
}
std::string method_display_name(std::string_view key);

/// Resolved configuration: the full JSON tree plus the workspace location. Every sub-config
/// has been validated by its owning module.
struct PipelineConfig {
  nlohmann::json tree;

  Profile profile() const;
  std::uint64_t seed() const;
  std::filesystem::path workspace() const;
  /// Manifest CSV or a grade_N directory tree; empty when not configured.
  std::filesystem::path input() const;
};

/// Profile defaults; every key that may be set from a file or the command line is present.
nlohmann::json default_config(Profile p);

/// profile defaults <- config file <- dotted overrides ("gan.cut.epochs", "3").
/// Unknown keys and invalid values throw ValidationError.
PipelineConfig resolve_config(std::optional<Profile> profile, const std::optional<std::filesystem::path>& file,
                              const std::vector<std::pair<std::string, std::string>>& overrides);

/// Applies one dotted override to `tree`. The value is parsed as JSON when possible,
/// otherwise taken as a string.
void apply_override(nlohmann::json& tree, const std::string& dotted_key, const std::string& value);

/// Restricts which per-grade / per-variant / per-backbone units a stage runs.
struct StageFilter {
  std::optional<int> grade;
  std::optional<std::string> variant;
  std::optional<std::string> backbone;
  /// Rerun units whose manifest says they are up to date.
  bool force = false;
};

struct StageReport {
  Stage stage;
  std::vector<std::string> units_run;
  std::vector<std::string> units_cached;
};

/// Runs one stage. Throws MissingArtifact, ValidationError, or runtime errors.
StageReport execute_stage(Stage stage, const PipelineConfig& cfg, const StageFilter& filter = {});

/// execute_stage mapped to exit codes: 0 success, 1 runtime failure, 2 config error or
/// missing artifact. Errors are logged.
int run_stage(Stage stage, const PipelineConfig& cfg, const StageFilter& filter = {});

/// Every stage in order; stops at the first non-zero status and returns it.
int run_all(const PipelineConfig& cfg, const StageFilter& filter = {});

/// Writes report/index.html and its assets from existing evaluate and interpret outputs.
/// Throws MissingArtifact naming the first absent input.
std::filesystem::path make_report(const PipelineConfig& cfg);

/// Exit code for an exception thrown by the pipeline or its modules.
int exit_code_for(const std::exception& e);

}  // namespace bronchograde::pipeline

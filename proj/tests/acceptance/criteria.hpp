#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace bg_acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  std::filesystem::path workdir;
  /// Workspace of the first end-to-end run, shared by the report-format check.
  std::optional<std::filesystem::path> e2e_workspace;
};

Outcome metric_oracle(Context& ctx);
Outcome transform_group(Context& ctx);
Outcome loss_anchors(Context& ctx);
Outcome gan_toy(Context& ctx);
Outcome classifier_toy(Context& ctx);
Outcome interpretation_math(Context& ctx);
Outcome pipeline_determinism(Context& ctx);
Outcome report_format(Context& ctx);

}  // namespace bg_acceptance

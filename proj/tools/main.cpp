// bronchograde: staged command-line driver for the grading pipeline.
#include <CLI11.hpp>

#include <iostream>

#include "bronchograde/errors.hpp"
#include "bronchograde/log.hpp"
#include "bronchograde/pipeline.hpp"
#include "bronchograde/synth.hpp"

namespace bg = bronchograde;
namespace pl = bronchograde::pipeline;

namespace {

// "--a.b.c value" and "--a.b.c=value" pairs left over by the parser.
std::vector<std::pair<std::string, std::string>> dotted_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.find('.') == std::string::npos) {
      throw bg::ValidationError("unexpected argument '" + tok + "'");
    }
    const auto eq = tok.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(tok.substr(2, eq - 2), tok.substr(eq + 1));
    } else if (i + 1 < extras.size()) {
      out.emplace_back(tok.substr(2), extras[++i]);
    } else {
      throw bg::ValidationError("override '" + tok + "' has no value");
    }
  }
  return out;
}

int run_synth(const std::string& out, int patients, int images, int size, std::uint64_t seed) {
  bg::synth::CorpusOptions opts;
  opts.patients_per_grade.fill(patients);
  opts.images_per_patient = images;
  opts.size = size;
  opts.seed = seed;
  const auto corpus = bg::synth::bronchoscopy_corpus(opts);
  bg::synth::write_corpus(corpus, out);
  std::cout << "wrote " << corpus.dataset.size() << " images and " << out << "/manifest.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inhalation-injury grading pipeline: augmentation, GAN synthesis, classification, interpretation."};
  app.allow_extras();

  std::string command;
  std::optional<std::string> config_file, profile, workspace, input, variant, backbone;
  std::optional<std::uint64_t> seed;
  std::optional<int> grade;
  bool force = false, verbose = false;
  std::string synth_out = "synthetic";
  int synth_patients = 5, synth_images = 2, synth_size = 256;

  std::string commands = "all, synth, show-config";
  for (auto s : pl::all_stages()) commands += ", " + std::string(pl::to_string(s));
  app.add_option("command", command, "One of: " + commands)->required();
  app.add_option("--config", config_file, "JSON configuration file");
  app.add_option("--profile", profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", seed, "Root seed (every stage seed derives from it)");
  app.add_option("--workspace", workspace, "Workspace directory");
  app.add_option("--input", input, "Input manifest CSV or grade_N directory (ingest)");
  app.add_option("--grade", grade, "Restrict per-grade stages to one grade")->check(CLI::Range(1, 6));
  app.add_option("--variant", variant, "Restrict to one GAN variant")->check(CLI::IsMember({"cut", "cyclegan"}));
  app.add_option("--backbone", backbone, "Restrict to one classifier backbone")
      ->check(CLI::IsMember({"inception_cnn", "vit"}));
  app.add_flag("--force", force, "Rerun units even when their manifests are up to date");
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_option("--out", synth_out, "synth: output directory");
  app.add_option("--patients-per-grade", synth_patients, "synth: patients per grade")->check(CLI::PositiveNumber);
  app.add_option("--images-per-patient", synth_images, "synth: images per patient")->check(CLI::PositiveNumber);
  app.add_option("--size", synth_size, "synth: image side in pixels")->check(CLI::Range(16, 4096));
  app.footer("Any configuration key can be overridden as --dotted.key value, e.g. --gan.cut.epochs 2.\n"
             "Exit codes: 0 success, 1 runtime failure, 2 usage/config error or missing artifact.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (verbose) bg::log::set_level(bg::log::Level::debug);

  try {
    if (command == "synth") return run_synth(synth_out, synth_patients, synth_images, synth_size, seed.value_or(0));

    auto overrides = dotted_overrides(app.remaining());
    if (seed) overrides.emplace_back("seed", std::to_string(*seed));
    if (workspace) overrides.emplace_back("paths.workspace", nlohmann::json(*workspace).dump());
    if (input) overrides.emplace_back("paths.input", nlohmann::json(*input).dump());
    std::optional<pl::Profile> prof;
    if (profile) prof = pl::profile_from_string(*profile);
    std::optional<std::filesystem::path> file;
    if (config_file) file = *config_file;
    const auto cfg = pl::resolve_config(prof, file, overrides);

    if (command == "show-config") {
      std::cout << cfg.tree.dump(2) << '\n';
      return 0;
    }
    pl::StageFilter filter{grade, variant, backbone, force};
    if (command == "all") return pl::run_all(cfg, filter);
    return pl::run_stage(pl::stage_from_string(command), cfg, filter);
  } catch (const std::exception& e) {
    bg::log::error(e.what());
    return pl::exit_code_for(e);
  }
}

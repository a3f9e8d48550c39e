#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "bronchograde/csv.hpp"
#include "bronchograde/errors.hpp"
#include "bronchograde/hash.hpp"
#include "bronchograde/log.hpp"
#include "bronchograde/pipeline.hpp"
#include "bronchograde/synth.hpp"
#include "unit/test_support.hpp"

using namespace bronchograde;
using namespace bronchograde::pipeline;
using nlohmann::json;

namespace {

struct CliResult {
  int status = -1;
  std::string output;
};

CliResult run_cli(const std::string& args, bool with_stderr = true) {
  const std::string cmd = std::string(BRONCHOGRADE_CLI) + " " + args + (with_stderr ? " 2>&1" : " 2>/dev/null");
  CliResult res;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return res;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) res.output.append(buf, n);
  const int raw = ::pclose(pipe);
  res.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return res;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

}  // namespace

TEST(Stages, NamesRoundTrip) {
  EXPECT_EQ(all_stages().size(), 9u);
  for (auto s : all_stages()) EXPECT_EQ(stage_from_string(to_string(s)), s);
  EXPECT_EQ(to_string(Stage::train_gan), "train-gan");
  EXPECT_THROW(stage_from_string("deploy"), ValidationError);
  EXPECT_EQ(method_display_name("cyclegan"), "CycleGAN");
  EXPECT_EQ(method_display_name("transformations"), "Transformations");
}

TEST(Config, ProfilesResolveAndValidate) {
  const auto desk = resolve_config(Profile::desk, std::nullopt, {});
  EXPECT_EQ(desk.profile(), Profile::desk);
  EXPECT_EQ(desk.tree["split"]["ratio"].get<double>(), 0.7);
  EXPECT_TRUE(desk.tree["split"]["by_patient"].get<bool>());
  EXPECT_DOUBLE_EQ(desk.tree["gan"]["cut"]["tau"].get<double>(), 0.07);
  EXPECT_DOUBLE_EQ(desk.tree["gan"]["cyclegan"]["lambda_cyc"].get<double>(), 10.0);
  const auto paper = resolve_config(Profile::paper, std::nullopt, {});
  EXPECT_EQ(paper.tree["augment"]["targets"], json({117, 385, 144, 297, 117, 162}));
  EXPECT_EQ(paper.tree["gan"]["generate"]["targets"]["cut"][0].get<int>(), 1098);
}

TEST(Config, OverridesUseDottedKeys) {
  const auto cfg = resolve_config(Profile::desk, std::nullopt,
                                  {{"gan.cut.epochs", "4"},
                                   {"split.by_patient", "false"},
                                   {"gan.variants", "cut"},
                                   {"classifier.backbones", "inception_cnn,vit"},
                                   {"paths.workspace", "/tmp/ws"},
                                   {"seed", "11"}});
  EXPECT_EQ(cfg.tree["gan"]["cut"]["epochs"].get<int>(), 4);
  EXPECT_FALSE(cfg.tree["split"]["by_patient"].get<bool>());
  EXPECT_EQ(cfg.tree["gan"]["variants"], json({"cut"}));
  EXPECT_EQ(cfg.tree["classifier"]["backbones"], json({"inception_cnn", "vit"}));
  EXPECT_EQ(cfg.workspace(), "/tmp/ws");
  EXPECT_EQ(cfg.seed(), 11u);
}

TEST(Config, FileThenOverridesThenValidation) {
  bg_test::TempDir dir;
  write_text(dir.path() / "c.json", R"({"seed": 3, "split": {"ratio": 0.6}, "gan": {"cut": {"epochs": 2}}})");
  const auto cfg = resolve_config(std::nullopt, dir.path() / "c.json", {{"split.ratio", "0.8"}});
  EXPECT_EQ(cfg.seed(), 3u);
  EXPECT_DOUBLE_EQ(cfg.tree["split"]["ratio"].get<double>(), 0.8);
  EXPECT_EQ(cfg.tree["gan"]["cut"]["epochs"].get<int>(), 2);
  EXPECT_EQ(cfg.tree["gan"]["cut"]["batch_size"], default_config(Profile::desk)["gan"]["cut"]["batch_size"]);
}

TEST(Config, RejectsUnknownKeysBadTypesAndInvalidValues) {
  bg_test::TempDir dir;
  EXPECT_THROW(resolve_config(Profile::desk, std::nullopt, {{"gan.cut.warp", "1"}}), ValidationError);
  EXPECT_THROW(resolve_config(Profile::desk, std::nullopt, {{"split", "1"}}), ValidationError);
  EXPECT_THROW(resolve_config(Profile::desk, std::nullopt, {{"split.ratio", "half"}}), ValidationError);
  EXPECT_THROW(resolve_config(Profile::desk, std::nullopt, {{"split.ratio", "1.5"}}), ValidationError);
  EXPECT_THROW(resolve_config(Profile::desk, std::nullopt, {{"gan.cut.tau", "0"}}), ValidationError);
  EXPECT_THROW(resolve_config(Profile::desk, std::nullopt, {{"classifier.vit.epochs", "0"}}), ValidationError);
  EXPECT_THROW(resolve_config(Profile::desk, std::nullopt, {{"gan.variants", "stargan"}}), ValidationError);
  write_text(dir.path() / "bad.json", R"({"gan": {"cut": {"seed": 4}}})");
  EXPECT_THROW(resolve_config(std::nullopt, dir.path() / "bad.json", {}), ValidationError);
  write_text(dir.path() / "broken.json", "{not json");
  EXPECT_THROW(resolve_config(std::nullopt, dir.path() / "broken.json", {}), ValidationError);
  EXPECT_THROW(resolve_config(std::nullopt, dir.path() / "absent.json", {}), MissingArtifact);
}

TEST(ExitCodes, MapExceptionKinds) {
  EXPECT_EQ(exit_code_for(MissingArtifact("x")), 2);
  EXPECT_EQ(exit_code_for(ValidationError("x")), 2);
  EXPECT_EQ(exit_code_for(IsolationViolation("x")), 1);
  EXPECT_EQ(exit_code_for(TrainingDiverged("x")), 1);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), 1);
}

TEST(Stages, MissingInputsExitTwo) {
  bg_test::TempDir dir;
  const auto cfg = resolve_config(Profile::desk, std::nullopt, {{"paths.workspace", dir.path().string()}});
  log::Capture quiet;
  for (auto s : {Stage::split, Stage::augment, Stage::train_gan, Stage::generate, Stage::train_classifier,
                 Stage::evaluate, Stage::interpret, Stage::report})
    EXPECT_EQ(run_stage(s, cfg), 2) << to_string(s);
  EXPECT_EQ(run_stage(Stage::ingest, cfg), 2);  // no input configured
  try {
    make_report(cfg);
    FAIL();
  } catch (const MissingArtifact& e) {
    EXPECT_EQ(e.artifact().filename(), "train.csv");
  }
}

TEST(Stages, IngestSplitAugmentAreCachedAndReproducible) {
  bg_test::TempDir dir;
  synth::CorpusOptions opts;
  opts.patients_per_grade = {2, 2, 2, 2, 2, 2};
  opts.images_per_patient = 2;
  opts.size = 64;
  synth::write_corpus(synth::bronchoscopy_corpus(opts), dir.path() / "corpus");
  auto make = [&](const std::string& ws) {
    return resolve_config(Profile::desk, std::nullopt,
                          {{"paths.workspace", (dir.path() / ws).string()},
                           {"paths.input", (dir.path() / "corpus" / "manifest.csv").string()},
                           {"augment.factor", "2"}});
  };
  log::Capture quiet;
  const auto a = make("a");
  for (auto s : {Stage::ingest, Stage::split, Stage::augment}) ASSERT_EQ(run_stage(s, a), 0) << to_string(s);
  const auto ws = a.workspace();
  EXPECT_TRUE(std::filesystem::exists(ws / "data/split/membership.csv"));
  EXPECT_TRUE(std::filesystem::exists(ws / "manifests/split.json"));
  const auto counts = csv::read_file(ws / "augmented/counts.csv");
  ASSERT_EQ(counts.size(), 8u);

  // Patients never straddle the split.
  std::map<std::string, std::set<std::string>> sides;
  const auto membership = csv::read_file(ws / "data/split/membership.csv");
  for (std::size_t i = 1; i < membership.size(); ++i) sides[membership[i][1]].insert(membership[i][3]);
  for (const auto& [patient, s] : sides) EXPECT_EQ(s.size(), 1u) << patient;

  // Second invocation finds every unit up to date.
  const auto again = execute_stage(Stage::augment, a);
  EXPECT_TRUE(again.units_run.empty());
  EXPECT_EQ(again.units_cached.size(), 1u);
  const auto forced = execute_stage(Stage::augment, a, StageFilter{std::nullopt, std::nullopt, std::nullopt, true});
  EXPECT_EQ(forced.units_run.size(), 1u);

  // A fresh workspace with the same seed reproduces split and augmentation byte for byte.
  const auto b = make("b");
  for (auto s : {Stage::ingest, Stage::split, Stage::augment}) ASSERT_EQ(run_stage(s, b), 0);
  EXPECT_EQ(sha256_file(ws / "data/split/membership.csv"), sha256_file(b.workspace() / "data/split/membership.csv"));
  EXPECT_EQ(sha256_tree(ws / "augmented"), sha256_tree(b.workspace() / "augmented"));

  // Changing the augmentation config invalidates only that unit.
  const auto c = resolve_config(Profile::desk, std::nullopt,
                                {{"paths.workspace", ws.string()},
                                 {"paths.input", (dir.path() / "corpus" / "manifest.csv").string()},
                                 {"augment.factor", "3"}});
  EXPECT_TRUE(execute_stage(Stage::split, c).units_run.empty());
  EXPECT_EQ(execute_stage(Stage::augment, c).units_run.size(), 1u);
}

TEST(Cli, ReportWithoutStagesExitsTwoNamingTheArtifact) {
  bg_test::TempDir dir;
  const auto r = run_cli("report --workspace " + dir.path().string());
  EXPECT_EQ(r.status, 2) << r.output;
  EXPECT_NE(r.output.find("data/split/train.csv"), std::string::npos) << r.output;
}

TEST(Cli, UsageAndConfigErrorsExitTwo) {
  bg_test::TempDir dir;
  EXPECT_EQ(run_cli("fly").status, 2);
  EXPECT_EQ(run_cli("split --grade 9").status, 2);
  EXPECT_EQ(run_cli("split --profile huge").status, 2);
  EXPECT_EQ(run_cli("show-config --gan.cut.nonsense 3").status, 2);
  EXPECT_EQ(run_cli("show-config --config " + (dir.path() / "none.json").string()).status, 2);
}

TEST(Cli, ShowConfigPrintsTheResolvedTree) {
  const auto r = run_cli("show-config --profile desk --seed 5 --gan.cut.epochs=2 --split.ratio 0.6", false);
  ASSERT_EQ(r.status, 0) << r.output;
  const auto tree = json::parse(r.output);
  EXPECT_EQ(tree["seed"].get<int>(), 5);
  EXPECT_EQ(tree["gan"]["cut"]["epochs"].get<int>(), 2);
  EXPECT_DOUBLE_EQ(tree["split"]["ratio"].get<double>(), 0.6);
}

TEST(Cli, SynthWritesALoadableCorpus) {
  bg_test::TempDir dir;
  const auto r = run_cli("synth --out " + (dir.path() / "c").string() + " --patients-per-grade 1 --images-per-patient 2 --size 32");
  ASSERT_EQ(r.status, 0) << r.output;
  const auto ds = load_manifest(dir.path() / "c" / "manifest.csv", LoadOptions{32});
  EXPECT_EQ(ds.size(), 12u);
  for (auto g : all_grades()) EXPECT_EQ(ds.count(g), 2u);
}

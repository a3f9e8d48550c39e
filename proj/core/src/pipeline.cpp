#include "bronchograde/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>

#include "bronchograde/augment.hpp"
#include "bronchograde/classify.hpp"
#include "bronchograde/config_io.hpp"
#include "bronchograde/csv.hpp"
#include "bronchograde/data_model.hpp"
#include "bronchograde/errors.hpp"
#include "bronchograde/gan.hpp"
#include "bronchograde/hash.hpp"
#include "bronchograde/interpret.hpp"
#include "bronchograde/log.hpp"
#include "bronchograde/metrics.hpp"
#include "bronchograde/plots.hpp"
#include "bronchograde/random.hpp"

namespace bronchograde::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Unit {
  std::string id;
  /// Relative to the workspace unless absolute.
  std::vector<fs::path> inputs;
  json config;
  std::uint64_t seed = 0;
  std::vector<fs::path> outputs;
  bool cacheable = true;
  std::function<void()> run;
};

std::string hash_path(const fs::path& p) { return fs::is_directory(p) ? sha256_tree(p) : sha256_file(p); }

fs::path manifest_path(const fs::path& ws, const std::string& id) {
  std::string name = id;
  std::replace(name.begin(), name.end(), '/', '_');
  return ws / "manifests" / (name + ".json");
}

json hashes_of(const fs::path& ws, const std::vector<fs::path>& paths) {
  json out = json::object();
  for (const auto& p : paths) {
    const auto full = p.is_absolute() ? p : ws / p;
    out[p.generic_string()] = fs::exists(full) ? hash_path(full) : "";
  }
  return out;
}

/// Runs a unit unless its manifest shows identical inputs, config and seed and its outputs
/// are intact. Returns true when the unit actually ran.
bool run_unit(const fs::path& ws, const std::string& stage, const Unit& u, bool force) {
  for (const auto& in : u.inputs) {
    const auto full = in.is_absolute() ? in : ws / in;
    if (!fs::exists(full)) throw MissingArtifact(in);
  }
  const auto inputs = hashes_of(ws, u.inputs);
  const auto config_hash = sha256_hex(u.config.dump());
  const auto mpath = manifest_path(ws, u.id);

  if (u.cacheable && !force && fs::exists(mpath)) {
    try {
      json old;
      std::ifstream(mpath) >> old;
      if (old.at("tool_version") == kToolVersion && old.at("config_hash") == config_hash &&
          old.at("seed") == u.seed && old.at("inputs") == inputs && old.at("outputs") == hashes_of(ws, u.outputs)) {
        log::info(u.id, ": up to date");
        return false;
      }
    } catch (const json::exception&) {
      // Unreadable manifest: rerun.
    }
  }
  for (const auto& out : u.outputs) fs::remove_all(out.is_absolute() ? out : ws / out);
  log::info(u.id, ": running");
  u.run();
  json m = {{"unit", u.id},
            {"stage", stage},
            {"tool_version", kToolVersion},
            {"config_hash", config_hash},
            {"config", u.config},
            {"seed", u.seed},
            {"inputs", inputs},
            {"outputs", hashes_of(ws, u.outputs)}};
  fs::create_directories(mpath.parent_path());
  std::ofstream(mpath) << m.dump(2) << '\n';
  return true;
}

// ---- workspace layout -------------------------------------------------------------------

const fs::path kDataManifest = "data/manifest.csv";
const fs::path kImages = "data/images";
const fs::path kTrainCsv = "data/split/train.csv";
const fs::path kTestCsv = "data/split/test.csv";
const fs::path kMembership = "data/split/membership.csv";
const fs::path kAugmented = "augmented";
const fs::path kTransformCsv = "augmented/transform/manifest.csv";
const fs::path kCountsCsv = "augmented/counts.csv";

fs::path gan_dir(const std::string& v, int g) { return fs::path("models/gan") / v / ("grade_" + std::to_string(g)); }
fs::path generated_dir(const std::string& v, int g) {
  return fs::path("generated") / v / ("grade_" + std::to_string(g));
}
fs::path classifier_dir(const std::string& b, const std::string& m) { return fs::path("models/classifier") / (b + "_" + m); }

std::vector<std::string> strings(const json& arr) { return arr.get<std::vector<std::string>>(); }

std::uint64_t index_of(const std::vector<std::string>& v, const std::string& s) {
  return static_cast<std::uint64_t>(std::find(v.begin(), v.end(), s) - v.begin());
}

int image_size(const PipelineConfig& cfg) { return cfg.tree.at("image_size").get<int>(); }

LoadOptions load_opts(const PipelineConfig& cfg) { return LoadOptions{image_size(cfg)}; }

gan::GanConfig gan_config(const PipelineConfig& cfg, const std::string& v, int grade) {
  const auto variant = gan::variant_from_string(v);
  const auto base = cfg.profile() == Profile::desk ? gan::desk_config(variant) : gan::paper_config(variant);
  auto c = gan_config_from_json(cfg.tree["gan"][v], base);
  c.seed = derive_seed(cfg.seed(), {3, variant == gan::Variant::cut ? 0ULL : 1ULL, static_cast<std::uint64_t>(grade)});
  return c;
}

classify::ClassifierConfig classifier_config(const PipelineConfig& cfg, const std::string& b, const std::string& m) {
  const auto backbone = classify::backbone_from_string(b);
  const auto base = cfg.profile() == Profile::desk ? classify::desk_classifier_config(backbone)
                                                   : classify::paper_classifier_config(backbone);
  auto c = classifier_config_from_json(cfg.tree["classifier"][b], base);
  c.seed = derive_seed(cfg.seed(), {5, index_of({"inception_cnn", "vit"}, b), index_of(method_keys(), m)});
  return c;
}

std::vector<int> gan_grades(const PipelineConfig& cfg) { return cfg.tree["gan"]["grades"].get<std::vector<int>>(); }

/// Inputs holding the images a classifier for `method` trains on.
std::vector<fs::path> corpus_inputs(const PipelineConfig& cfg, const std::string& method) {
  const bool with_transform = cfg.tree["classifier"]["composition"] == "with_transform";
  std::vector<fs::path> in;
  if (method == "transformations" || ((method == "cut" || method == "cyclegan") && with_transform)) {
    in = {kTransformCsv};
  } else {
    in = {kTrainCsv};
  }
  if (method == "cut" || method == "cyclegan") {
    for (int g : gan_grades(cfg)) in.push_back(generated_dir(method, g) / "manifest.csv");
  }
  return in;
}

Dataset load_corpus(const fs::path& ws, const PipelineConfig& cfg, const std::string& method) {
  Dataset ds;
  for (const auto& p : corpus_inputs(cfg, method)) ds = concat(ds, load_manifest(ws / p, load_opts(cfg)));
  return ds;
}

/// The images a method contributes on its own (for histograms and spectra).
Dataset load_method_images(const fs::path& ws, const PipelineConfig& cfg, const std::string& method) {
  if (method == "original") return load_manifest(ws / kTrainCsv, load_opts(cfg));
  if (method == "transformations") return load_manifest(ws / kTransformCsv, load_opts(cfg));
  Dataset ds;
  for (int g : gan_grades(cfg)) ds = concat(ds, load_manifest(ws / generated_dir(method, g) / "manifest.csv", load_opts(cfg)));
  return ds;
}

std::string fmt(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string sanitise(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out.empty() ? "x" : out;
}

bool selected(const std::optional<std::string>& filter, const std::string& value) { return !filter || *filter == value; }

// ---- stages -----------------------------------------------------------------------------

std::vector<Unit> ingest_units(const fs::path& ws, const PipelineConfig& cfg) {
  const auto input = cfg.input();
  if (input.empty()) throw ValidationError("paths.input is not set (manifest CSV or grade_N directory)");
  Unit u;
  u.id = "ingest";
  u.inputs = {fs::absolute(input)};
  u.config = {{"image_size", cfg.tree["image_size"]}};
  u.outputs = {kImages, kDataManifest};
  u.cacheable = false;
  u.run = [=] {
    const auto ds = fs::is_directory(input) ? load_directory(input, load_opts(cfg)) : load_manifest(input, load_opts(cfg));
    if (ds.empty()) throw LoadError("no images found in " + input.string());
    std::vector<csv::Row> rows = {{"patient_id", "image_path", "ventilation_hours", "grade", "provenance", "split"}};
    std::set<std::string> used;
    for (const auto& rec : ds) {
      std::string name = sanitise(rec.patient_id) + "_" + sanitise(rec.source_path.stem().string());
      if (rec.source_path.stem().string().rfind(rec.patient_id, 0) == 0) name = sanitise(rec.source_path.stem().string());
      for (int k = 2; used.count(name); ++k) name = name + "_" + std::to_string(k);
      used.insert(name);
      const auto rel = fs::path("images") / ("grade_" + std::to_string(rec.grade.value())) / (name + ".png");
      write_png(ws / "data" / rel, rec.pixels);
      std::string split;
      if (rec.split_hint) split = *rec.split_hint == SplitTag::train ? "train" : "test";
      rows.push_back({rec.patient_id, rel.generic_string(), "", std::to_string(rec.grade.value()),
                      std::string(to_string(rec.provenance)), split});
    }
    csv::write_file(ws / kDataManifest, rows);
    log::info("ingest: ", ds.size(), " images");
  };
  return {u};
}

void write_split_manifest(const fs::path& ws, const fs::path& rel, const Dataset& ds) {
  const auto dir = (ws / rel).parent_path();
  std::vector<csv::Row> rows = {{"patient_id", "image_path", "ventilation_hours", "grade", "provenance"}};
  for (const auto& r : ds) {
    rows.push_back({r.patient_id, fs::relative(r.source_path, dir).generic_string(), "", std::to_string(r.grade.value()),
                    std::string(to_string(r.provenance))});
  }
  csv::write_file(ws / rel, rows);
}

std::vector<Unit> split_units(const fs::path& ws, const PipelineConfig& cfg) {
  Unit u;
  u.id = "split";
  u.inputs = {kDataManifest, kImages};
  u.config = cfg.tree["split"];
  u.seed = cfg.seed();
  u.outputs = {"data/split"};
  u.run = [=] {
    const auto ds = load_manifest(ws / kDataManifest, load_opts(cfg));
    const auto& s = cfg.tree["split"];
    const auto res = s["use_manifest_split"].get<bool>()
                         ? split_from_hints(ds)
                         : split_dataset(ds, SplitOptions{s["ratio"].get<double>(), cfg.seed(), s["by_patient"].get<bool>()});
    write_split_manifest(ws, kTrainCsv, res.train);
    write_split_manifest(ws, kTestCsv, res.test);
    std::vector<csv::Row> rows = {{"image_path", "patient_id", "grade", "split", "content_hash"}};
    std::vector<std::pair<std::size_t, std::string>> tagged;
    for (auto i : res.train_indices) tagged.emplace_back(i, "train");
    for (auto i : res.test_indices) tagged.emplace_back(i, "test");
    std::sort(tagged.begin(), tagged.end());
    for (const auto& [i, tag] : tagged) {
      rows.push_back({fs::relative(ds[i].source_path, ws / "data").generic_string(), ds[i].patient_id,
                      std::to_string(ds[i].grade.value()), tag, content_hash(ds[i].pixels)});
    }
    csv::write_file(ws / kMembership, rows);
    log::info("split: ", res.train.size(), " train / ", res.test.size(), " test images");
  };
  return {u};
}

std::vector<Unit> augment_units(const fs::path& ws, const PipelineConfig& cfg) {
  Unit u;
  u.id = "augment";
  u.inputs = {kTrainCsv, kImages};
  u.config = cfg.tree["augment"];
  u.seed = derive_seed(cfg.seed(), {2});
  u.outputs = {kAugmented};
  const auto seed = u.seed;
  u.run = [=] {
    const auto train = load_manifest(ws / kTrainCsv, load_opts(cfg));
    const auto& a = cfg.tree["augment"];
    augment::AugmentPlan plan;
    if (a["targets"].is_null()) {
      plan = augment::scaled_plan(train, a["factor"].get<double>(), seed);
    } else {
      plan = augment::table1_plan(seed);
      plan.per_grade_targets = a["targets"].get<std::array<std::size_t, GradeLabel::kCount>>();
    }
    plan.min_crop_area = a["min_crop_area"].get<double>();
    const auto res = augment::augment_dataset(train, plan);
    augment::write_augmented(res, ws / kAugmented);
    log::info("augment: ", train.size(), " -> ", res.dataset.size(), " images");
  };
  return {u};
}

std::vector<Unit> train_gan_units(const fs::path& ws, const PipelineConfig& cfg, const StageFilter& f) {
  std::vector<Unit> units;
  const bool transform = cfg.tree["gan"]["corpus"] == "transform";
  for (const auto& v : strings(cfg.tree["gan"]["variants"])) {
    if (!selected(f.variant, v)) continue;
    for (int g : gan_grades(cfg)) {
      if (f.grade && *f.grade != g) continue;
      Unit u;
      u.id = "train-gan/" + v + "/grade_" + std::to_string(g);
      u.inputs = transform ? std::vector<fs::path>{kTransformCsv, "augmented/transform"}
                           : std::vector<fs::path>{kTrainCsv, kImages};
      const auto gc = gan_config(cfg, v, g);
      u.config = {{"gan", to_json(gc)}, {"corpus", cfg.tree["gan"]["corpus"]}, {"grade", g}};
      u.seed = gc.seed;
      u.outputs = {gan_dir(v, g)};
      u.run = [=] {
        const auto corpus = load_manifest(ws / (transform ? kTransformCsv : kTrainCsv), load_opts(cfg));
        const auto part = one_vs_all_partition(corpus, g);
        auto res = gan::train(part, gc);
        res.model.save(ws / gan_dir(v, g));
        gan::write_history(res.history, ws / gan_dir(v, g) / "history.csv");
      };
      units.push_back(std::move(u));
    }
  }
  return units;
}

std::vector<Unit> generate_units(const fs::path& ws, const PipelineConfig& cfg, const StageFilter& f) {
  std::vector<Unit> units;
  for (const auto& v : strings(cfg.tree["gan"]["variants"])) {
    if (!selected(f.variant, v)) continue;
    for (int g : gan_grades(cfg)) {
      if (f.grade && *f.grade != g) continue;
      Unit u;
      u.id = "generate/" + v + "/grade_" + std::to_string(g);
      u.inputs = {gan_dir(v, g), kTrainCsv, kImages};
      const auto& gen = cfg.tree["gan"]["generate"];
      u.config = {{"factor", gen["factor"]}, {"targets", gen["targets"][v]}, {"image_size", cfg.tree["image_size"]}};
      u.seed = derive_seed(cfg.seed(), {4, v == "cut" ? 0ULL : 1ULL, static_cast<std::uint64_t>(g)});
      u.outputs = {generated_dir(v, g)};
      u.run = [=] {
        const auto model = gan::GanModel::load(ws / gan_dir(v, g));
        const auto train = load_manifest(ws / kTrainCsv, load_opts(cfg));
        std::vector<ImageRecord> src;
        for (const auto& r : train)
          if (r.grade.value() != g) src.push_back(r);
        const Dataset sources(std::move(src));
        const auto grade = GradeLabel(g);
        std::size_t n = 0;
        if (gen["targets"][v].is_null()) {
          n = static_cast<std::size_t>(std::ceil(gen["factor"].get<double>() * static_cast<double>(train.count(grade))));
        } else {
          n = gen["targets"][v][static_cast<std::size_t>(g - 1)].get<std::size_t>();
        }
        if (sources.empty()) throw PreconditionError("generate: no source images outside grade " + std::to_string(g));
        const auto out = gan::generate(model, sources, grade, n);
        gan::write_generated(out, gan::variant_from_string(v), grade, ws / "generated");
        log::info("generate: ", v, " grade ", g, ": ", out.size(), " images");
      };
      units.push_back(std::move(u));
    }
  }
  return units;
}

std::vector<std::pair<std::string, std::string>> model_combos(const PipelineConfig& cfg, const StageFilter& f) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& b : strings(cfg.tree["classifier"]["backbones"])) {
    if (!selected(f.backbone, b)) continue;
    for (const auto& m : strings(cfg.tree["classifier"]["methods"])) out.emplace_back(b, m);
  }
  return out;
}

std::vector<Unit> train_classifier_units(const fs::path& ws, const PipelineConfig& cfg, const StageFilter& f) {
  std::vector<Unit> units;
  for (const auto& [b, m] : model_combos(cfg, f)) {
    if (f.variant && (m == "cut" || m == "cyclegan") && *f.variant != m) continue;
    Unit u;
    u.id = "train-classifier/" + b + "/" + m;
    u.inputs = corpus_inputs(cfg, m);
    u.inputs.push_back(kImages);
    const auto cc = classifier_config(cfg, b, m);
    const double vf = cfg.tree["classifier"]["validation_fraction"].get<double>();
    u.config = {{"classifier", to_json(cc)},
                {"method", m},
                {"composition", cfg.tree["classifier"]["composition"]},
                {"validation_fraction", vf}};
    u.seed = cc.seed;
    const auto dir = classifier_dir(b, m);
    u.outputs = {dir};
    u.run = [=] {
      const auto corpus = load_corpus(ws, cfg, m);
      if (corpus.empty()) throw PreconditionError("train-classifier: empty corpus for method " + m);
      std::vector<std::size_t> order(corpus.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng rng(derive_seed(cc.seed, {0x7A1ULL}));
      std::shuffle(order.begin(), order.end(), rng.engine());
      const auto n_val = static_cast<std::size_t>(std::floor(vf * static_cast<double>(corpus.size())));
      std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
      std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
      std::sort(val_idx.begin(), val_idx.end());
      std::sort(train_idx.begin(), train_idx.end());
      const auto train = corpus.subset(train_idx);
      const auto val = n_val ? corpus.subset(val_idx) : train;

      auto model = classify::build_classifier(cc);
      const auto history = classify::finetune(model, train, val);
      model.save(ws / dir);
      classify::write_history(history, ws / dir / "history.csv");
      std::set<std::string> hashes;
      for (const auto& r : corpus) hashes.insert(content_hash(r.pixels));
      std::ofstream out(ws / dir / "train_hashes.txt");
      for (const auto& h : hashes) out << h << '\n';
      log::info("train-classifier: ", b, "/", m, ": ", train.size(), " train, ", val.size(),
                " val, best val accuracy ", fmt(history.best_val_accuracy, 4), " at epoch ", history.best_epoch);
    };
    units.push_back(std::move(u));
  }
  return units;
}

std::set<std::string> read_lines(const fs::path& p) {
  std::set<std::string> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.insert(line);
  return out;
}

std::vector<Unit> evaluate_units(const fs::path& ws, const PipelineConfig& cfg) {
  Unit u;
  u.id = "evaluate";
  u.inputs = {kTestCsv, kImages};
  const auto combos = model_combos(cfg, {});
  for (const auto& [b, m] : combos) u.inputs.push_back(classifier_dir(b, m));
  u.config = {{"backbones", cfg.tree["classifier"]["backbones"]}, {"methods", cfg.tree["classifier"]["methods"]}};
  u.outputs = {"eval"};
  u.cacheable = false;
  u.run = [=] {
    const auto test = load_manifest(ws / kTestCsv, load_opts(cfg));
    if (test.empty()) throw PreconditionError("evaluate: the test split is empty");
    std::vector<std::string> test_hashes;
    for (const auto& r : test) test_hashes.push_back(content_hash(r.pixels));
    const std::set<std::string> test_set(test_hashes.begin(), test_hashes.end());

    json isolation = {{"test_images", test.size()}, {"models", json::object()}};
    std::vector<metrics::ReportRow> rows;
    for (const auto& [b, m] : combos) {
      const auto dir = ws / classifier_dir(b, m);
      const auto train_hashes = read_lines(dir / "train_hashes.txt");
      std::size_t overlap = 0;
      for (const auto& h : test_set) overlap += train_hashes.count(h);
      isolation["models"][b + "_" + m] = {{"train_images", train_hashes.size()}, {"overlap", overlap}};
      if (overlap) {
        throw IsolationViolation("evaluate: " + std::to_string(overlap) + " test image(s) appear in the training corpus of " +
                                 b + "/" + m);
      }
      const auto model = classify::TrainedClassifier::load(dir);
      std::vector<int> truth, pred;
      std::vector<csv::Row> prow = {{"image_path", "patient_id", "true_grade", "predicted_grade", "p1", "p2", "p3", "p4",
                                     "p5", "p6"}};
      for (std::size_t i = 0; i < test.size(); ++i) {
        const auto p = model.predict(test[i].pixels);
        truth.push_back(test[i].grade.value());
        pred.push_back(p.grade.value());
        csv::Row row = {fs::relative(test[i].source_path, ws / "data").generic_string(), test[i].patient_id,
                        std::to_string(test[i].grade.value()), std::to_string(p.grade.value())};
        for (double q : p.probabilities) row.push_back(fmt(q, 6));
        prow.push_back(std::move(row));
      }
      csv::write_file(ws / "eval/predictions" / (b + "_" + m + ".csv"), prow);
      const auto cm = metrics::confusion_matrix(truth, pred, GradeLabel::kCount);
      std::vector<csv::Row> crow = {{"true\\pred", "1", "2", "3", "4", "5", "6"}};
      for (int t = 0; t < GradeLabel::kCount; ++t) {
        csv::Row row = {std::to_string(t + 1)};
        for (int q = 0; q < GradeLabel::kCount; ++q) row.push_back(std::to_string(cm.at(t, q)));
        crow.push_back(std::move(row));
      }
      csv::write_file(ws / "eval/confusion" / (b + "_" + m + ".csv"), crow);
      rows.push_back({b, method_display_name(m), metrics::compute_metrics(cm)});
    }
    isolation["disjoint"] = true;
    csv::write_file(ws / "eval/metrics.csv", metrics::metrics_csv(rows));
    std::ofstream(ws / "eval/metrics.txt") << metrics::metrics_table(rows);
    std::ofstream(ws / "eval/isolation.json") << isolation.dump(2) << '\n';
    log::info("evaluate: ", rows.size(), " model/method rows on ", test.size(), " test images");
  };
  return {u};
}

std::vector<Unit> interpret_units(const fs::path& ws, const PipelineConfig& cfg) {
  Unit u;
  u.id = "interpret";
  const auto methods = strings(cfg.tree["classifier"]["methods"]);
  const auto backbone = cfg.tree["interpret"]["backbone"].get<std::string>();
  u.inputs = {kTestCsv, kImages};
  for (const auto& m : methods) {
    for (const auto& p : corpus_inputs(cfg, m))
      if (std::find(u.inputs.begin(), u.inputs.end(), p) == u.inputs.end()) u.inputs.push_back(p);
    if (m == "transformations" && std::find(u.inputs.begin(), u.inputs.end(), kTransformCsv) == u.inputs.end())
      u.inputs.push_back(kTransformCsv);
    u.inputs.push_back(classifier_dir(backbone, m));
  }
  u.config = {{"interpret", cfg.tree["interpret"]}, {"methods", methods}};
  u.outputs = {"interpret"};
  u.cacheable = false;
  u.run = [=] {
    const auto& ic = cfg.tree["interpret"];
    const double lrf = ic["low_radius_fraction"].get<double>();
    const auto max_per_grade = ic["max_images_per_grade"].get<std::size_t>();
    const auto overlays = ic["overlays_per_grade"].get<std::size_t>();
    const bool use_true = ic["target"] == "true";
    const fs::path out = ws / "interpret";

    std::vector<csv::Row> hist_rows = {{"method", "grade", "images", "mean_red", "mean_green", "mean_blue"}};
    std::vector<csv::Row> spec_rows = {
        {"method", "grade", "images", "low_band_energy", "high_band_energy", "high_band_fraction"}};
    for (const auto& m : methods) {
      const auto images = load_method_images(ws, cfg, m);
      for (auto g : all_grades()) {
        const auto group = images.filter(g);
        if (group.empty()) {
          log::warn("interpret: no ", method_display_name(m), " images for grade ", g.value());
          continue;
        }
        std::vector<Image> pix;
        for (const auto& r : group) pix.push_back(r.pixels);
        const auto h = interpret::channel_histograms(pix);
        const auto mean_of = [](const interpret::Density& d) {
          double s = 0.0;
          for (int i = 0; i < 256; ++i) s += i * d[static_cast<std::size_t>(i)];
          return s;
        };
        const auto tag = m + "_grade_" + std::to_string(g.value());
        write_png(out / "histograms" / (tag + ".png"),
                  plots::histogram_panel(h, method_display_name(m) + " grade " + std::to_string(g.value())));
        hist_rows.push_back({method_display_name(m), std::to_string(g.value()), std::to_string(group.size()),
                             fmt(mean_of(h.red), 3), fmt(mean_of(h.green), 3), fmt(mean_of(h.blue), 3)});
        const auto s = interpret::mean_spectrum(pix, lrf);
        write_png(out / "spectra" / (tag + ".png"), plots::spectrum_panel(s, lrf));
        const double total = s.total_energy();
        spec_rows.push_back({method_display_name(m), std::to_string(g.value()), std::to_string(group.size()),
                             fmt(s.low_band_energy, 3), fmt(s.high_band_energy, 3),
                             fmt(total > 0 ? s.high_band_energy / total : 0.0, 6)});
      }
    }
    csv::write_file(out / "histograms.csv", hist_rows);
    csv::write_file(out / "spectra.csv", spec_rows);

    const auto test = load_manifest(ws / kTestCsv, load_opts(cfg));
    // Per grade, the first max_per_grade test images in manifest order.
    std::vector<std::size_t> chosen;
    std::array<std::size_t, GradeLabel::kCount> taken{};
    for (std::size_t i = 0; i < test.size(); ++i) {
      auto& t = taken[static_cast<std::size_t>(test[i].grade.index())];
      if (t < max_per_grade) {
        chosen.push_back(i);
        ++t;
      }
    }

    std::vector<csv::Row> pca_rows = {{"method", "images", "separability", "explained_1", "explained_2"}};
    std::vector<csv::Row> heat_rows = {{"method", "image_path", "true_grade", "target_grade", "mean_intensity"}};
    std::map<std::pair<int, std::string>, std::vector<double>> intensities;
    for (const auto& m : methods) {
      const auto model = classify::TrainedClassifier::load(ws / classifier_dir(backbone, m));
      const auto name = method_display_name(m);

      Eigen::MatrixXd feats(static_cast<Eigen::Index>(test.size()), model.feature_dim());
      std::vector<int> labels;
      for (std::size_t i = 0; i < test.size(); ++i) {
        const auto f = model.extract_features(test[i].pixels);
        for (std::size_t j = 0; j < f.size(); ++j) feats(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f[j];
        labels.push_back(test[i].grade.value());
      }
      try {
        auto emb = interpret::pca_project(feats, 2);
        emb.labels = labels;
        if (std::set<int>(labels.begin(), labels.end()).size() >= 2) {
          emb.separability = interpret::separability_score(emb.coordinates, labels);
        } else {
          log::warn("interpret: fewer than two grades in the test split; separability set to 0");
        }
        write_png(out / "pca" / (m + ".png"), plots::pca_scatter(emb, name + " (" + backbone + ")"));
        pca_rows.push_back({name, std::to_string(test.size()), fmt(emb.separability, 6),
                            fmt(emb.explained_variance_ratio.at(0), 6),
                            fmt(emb.explained_variance_ratio.size() > 1 ? emb.explained_variance_ratio[1] : 0.0, 6)});
      } catch (const std::exception& e) {
        log::warn("interpret: PCA skipped for ", name, ": ", e.what());
      }

      std::array<std::size_t, GradeLabel::kCount> drawn{};
      for (auto i : chosen) {
        const auto& rec = test[i];
        const int target = use_true ? rec.grade.value() : model.predict(rec.pixels).grade.value();
        const auto hm = interpret::grad_cam(model, rec.pixels, target);
        intensities[{rec.grade.value(), name}].push_back(hm.mean_intensity);
        const auto rel = fs::relative(rec.source_path, ws / "data").generic_string();
        heat_rows.push_back({name, rel, std::to_string(rec.grade.value()), std::to_string(target), fmt(hm.mean_intensity, 4)});
        auto& d = drawn[static_cast<std::size_t>(rec.grade.index())];
        if (d < overlays) {
          write_png(out / "heatmaps" / m /
                        ("grade_" + std::to_string(rec.grade.value()) + "_" + std::to_string(d) + ".png"),
                    interpret::overlay(rec.pixels, hm, 0.4));
          ++d;
        }
      }
    }
    csv::write_file(out / "pca.csv", pca_rows);
    csv::write_file(out / "heatmaps.csv", heat_rows);
    std::vector<std::string> names;
    for (const auto& m : methods) names.push_back(method_display_name(m));
    csv::write_file(out / "intensity.csv", interpret::intensity_csv(interpret::mean_intensity_table(intensities, names)));
  };
  return {u};
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingArtifact*>(&e)) return 2;
  if (dynamic_cast<const ValidationError*>(&e)) return 2;
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return 2;
  return 1;
}

StageReport execute_stage(Stage stage, const PipelineConfig& cfg, const StageFilter& filter) {
  const auto ws = cfg.workspace();
  StageReport report{stage, {}, {}};
  if (stage == Stage::report) {
    make_report(cfg);
    report.units_run.push_back("report");
    return report;
  }
  std::vector<Unit> units;
  switch (stage) {
    case Stage::ingest: units = ingest_units(ws, cfg); break;
    case Stage::split: units = split_units(ws, cfg); break;
    case Stage::augment: units = augment_units(ws, cfg); break;
    case Stage::train_gan: units = train_gan_units(ws, cfg, filter); break;
    case Stage::generate: units = generate_units(ws, cfg, filter); break;
    case Stage::train_classifier: units = train_classifier_units(ws, cfg, filter); break;
    case Stage::evaluate: units = evaluate_units(ws, cfg); break;
    case Stage::interpret: units = interpret_units(ws, cfg); break;
    case Stage::report: break;
  }
  // Check every declared input before doing any work so the first missing one is reported.
  for (const auto& u : units)
    for (const auto& in : u.inputs)
      if (!fs::exists(in.is_absolute() ? in : ws / in)) throw MissingArtifact(in);
  fs::create_directories(ws / "manifests");
  std::ofstream(ws / "manifests" / "config.json") << cfg.tree.dump(2) << '\n';
  for (const auto& u : units) {
    if (run_unit(ws, std::string(to_string(stage)), u, filter.force)) {
      report.units_run.push_back(u.id);
    } else {
      report.units_cached.push_back(u.id);
    }
  }
  return report;
}

int run_stage(Stage stage, const PipelineConfig& cfg, const StageFilter& filter) {
  try {
    execute_stage(stage, cfg, filter);
    return 0;
  } catch (const std::exception& e) {
    log::error(to_string(stage), ": ", e.what());
    return exit_code_for(e);
  }
}

int run_all(const PipelineConfig& cfg, const StageFilter& filter) {
  for (auto s : all_stages()) {
    const int rc = run_stage(s, cfg, filter);
    if (rc != 0) return rc;
  }
  return 0;
}

}  // namespace bronchograde::pipeline

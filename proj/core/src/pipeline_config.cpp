#include <fstream>
#include <sstream>

#include "bronchograde/classify.hpp"
#include "bronchograde/config_io.hpp"
#include "bronchograde/errors.hpp"
#include "bronchograde/gan.hpp"
#include "bronchograde/pipeline.hpp"

namespace bronchograde::pipeline {

using nlohmann::json;

namespace {

json without_seed(json j) {
  j.erase("seed");
  return j;
}

bool compatible(const json& dst, const json& src) {
  if (dst.is_null()) return true;
  if (dst.is_number() && src.is_number()) return true;
  if (dst.is_array() && (src.is_array())) return true;
  return dst.type() == src.type();
}

void merge(json& dst, const json& src, const std::string& where) {
  if (!src.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, value] : src.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!dst.contains(key)) throw ValidationError("unknown config key '" + path + "'");
    auto& slot = dst[key];
    if (slot.is_object() && value.is_object()) {
      merge(slot, value, path);
    } else if (!compatible(slot, value) && !(value.is_null() && path.find("targets") != std::string::npos)) {
      throw ValidationError("config key '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                            value.dump());
    } else {
      slot = value;
    }
  }
}

json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

void check_targets(const json& t, const std::string& where) {
  if (t.is_null()) return;
  require(t.is_array() && t.size() == GradeLabel::kCount, where + " must be null or six counts");
  for (const auto& v : t) require(v.is_number_integer() && v.get<long long>() >= 0, where + " counts must be >= 0");
}

template <typename T>
void check_subset(const json& arr, const std::vector<T>& allowed, const std::string& where) {
  require(arr.is_array() && !arr.empty(), where + " must be a non-empty list");
  for (const auto& v : arr) {
    bool found = false;
    for (const auto& a : allowed) found |= (v == json(a));
    require(found, where + ": unsupported entry " + v.dump());
  }
}

void validate_tree(const json& t) {
  profile_from_string(t.at("profile").get<std::string>());
  require(t.at("seed").is_number_integer() && t.at("seed").get<long long>() >= 0, "seed must be a non-negative integer");
  require(t.at("paths").at("workspace").is_string() && !t["paths"]["workspace"].get<std::string>().empty(),
          "paths.workspace must be set");
  require(t.at("paths").at("input").is_string(), "paths.input must be a string");
  require(t.at("image_size").is_number_integer() && t["image_size"].get<int>() >= 16, "image_size must be >= 16");

  const auto& s = t.at("split");
  const double ratio = s.at("ratio").get<double>();
  require(ratio > 0.0 && ratio < 1.0, "split.ratio must be in (0, 1)");

  const auto& a = t.at("augment");
  check_targets(a.at("targets"), "augment.targets");
  require(a.at("factor").get<double>() >= 1.0, "augment.factor must be >= 1");
  const double mca = a.at("min_crop_area").get<double>();
  require(mca > 0.0 && mca <= 1.0, "augment.min_crop_area must be in (0, 1]");

  const auto& g = t.at("gan");
  check_subset(g.at("variants"), std::vector<std::string>{"cut", "cyclegan"}, "gan.variants");
  check_subset(g.at("grades"), std::vector<int>{1, 2, 3, 4, 5, 6}, "gan.grades");
  require(g.at("corpus") == "transform" || g.at("corpus") == "original", "gan.corpus must be transform or original");
  require(g.at("generate").at("factor").get<double>() > 0.0, "gan.generate.factor must be positive");
  for (const char* v : {"cut", "cyclegan"}) {
    check_targets(g["generate"]["targets"].at(v), std::string("gan.generate.targets.") + v);
    const auto variant = gan::variant_from_string(v);
    const auto c = gan_config_from_json(g.at(v), gan::desk_config(variant));
    require(c.variant == variant, std::string("gan.") + v + ".variant must be " + v);
  }

  const auto& c = t.at("classifier");
  check_subset(c.at("backbones"), std::vector<std::string>{"inception_cnn", "vit"}, "classifier.backbones");
  check_subset(c.at("methods"), method_keys(), "classifier.methods");
  require(c.at("composition") == "single" || c.at("composition") == "with_transform",
          "classifier.composition must be single or with_transform");
  const double vf = c.at("validation_fraction").get<double>();
  require(vf >= 0.0 && vf <= 0.5, "classifier.validation_fraction must be in [0, 0.5]");
  for (const char* b : {"inception_cnn", "vit"}) {
    const auto cc = classifier_config_from_json(c.at(b), classify::desk_classifier_config(classify::backbone_from_string(b)));
    require(cc.backbone == classify::backbone_from_string(b), std::string("classifier.") + b + ".backbone must be " + b);
  }

  const auto& i = t.at("interpret");
  require(i.at("backbone") == "inception_cnn" || i.at("backbone") == "vit", "interpret.backbone must be a backbone name");
  require(i.at("target") == "predicted" || i.at("target") == "true", "interpret.target must be predicted or true");
  const double lrf = i.at("low_radius_fraction").get<double>();
  require(lrf > 0.0 && lrf <= 1.0, "interpret.low_radius_fraction must be in (0, 1]");
  require(i.at("max_images_per_grade").get<int>() >= 1, "interpret.max_images_per_grade must be >= 1");
  require(i.at("overlays_per_grade").get<int>() >= 0, "interpret.overlays_per_grade must be >= 0");
  if (i.at("backbone") == "vit") {
    require(c["vit"].value("vit_grad_cam", false), "interpret.backbone vit needs classifier.vit.vit_grad_cam");
  }
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::split: return "split";
    case Stage::augment: return "augment";
    case Stage::train_gan: return "train-gan";
    case Stage::generate: return "generate";
    case Stage::train_classifier: return "train-classifier";
    case Stage::evaluate: return "evaluate";
    case Stage::interpret: return "interpret";
    case Stage::report: return "report";
  }
  return "?";
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s = {Stage::ingest,           Stage::split,    Stage::augment,
                                       Stage::train_gan,        Stage::generate, Stage::train_classifier,
                                       Stage::evaluate,         Stage::interpret, Stage::report};
  return s;
}

Stage stage_from_string(std::string_view s) {
  for (auto st : all_stages())
    if (to_string(st) == s) return st;
  throw ValidationError("unknown stage: " + std::string(s));
}

std::string_view to_string(Profile p) { return p == Profile::paper ? "paper" : "desk"; }

Profile profile_from_string(std::string_view s) {
  if (s == "desk") return Profile::desk;
  if (s == "paper") return Profile::paper;
  throw ValidationError("unknown profile: " + std::string(s) + " (expected desk or paper)");
}

std::string method_display_name(std::string_view key) {
  if (key == "original") return "Original";
  if (key == "transformations") return "Transformations";
  if (key == "cyclegan") return "CycleGAN";
  if (key == "cut") return "CUT";
  throw ValidationError("unknown method: " + std::string(key));
}

Profile PipelineConfig::profile() const { return profile_from_string(tree.at("profile").get<std::string>()); }
std::uint64_t PipelineConfig::seed() const { return tree.at("seed").get<std::uint64_t>(); }
std::filesystem::path PipelineConfig::workspace() const { return tree.at("paths").at("workspace").get<std::string>(); }
std::filesystem::path PipelineConfig::input() const { return tree.at("paths").at("input").get<std::string>(); }

json default_config(Profile p) {
  const bool desk = p == Profile::desk;
  using gan::Variant;
  using classify::Backbone;

  auto cut = desk ? gan::desk_config(Variant::cut) : gan::paper_config(Variant::cut);
  auto cyc = desk ? gan::desk_config(Variant::cyclegan) : gan::paper_config(Variant::cyclegan);
  auto inc = desk ? classify::desk_classifier_config(Backbone::inception_cnn)
                  : classify::paper_classifier_config(Backbone::inception_cnn);
  auto vit = desk ? classify::desk_classifier_config(Backbone::vit) : classify::paper_classifier_config(Backbone::vit);
  if (desk) {
    // Bounded step counts keep the twelve per-grade trainings within a few minutes.
    cut.epochs = cyc.epochs = 3;
    cut.max_steps_per_epoch = cyc.max_steps_per_epoch = 40;
    for (auto* c : {&inc, &vit}) c->epochs = 12;
  }
  json targets_null = nullptr;
  const auto t1 = [](const std::array<std::size_t, GradeLabel::kCount>& a) { return json(a); };
  return {
      {"profile", std::string(to_string(p))},
      {"seed", 7},
      {"paths", {{"input", ""}, {"workspace", "workspace"}}},
      {"image_size", 256},
      {"split", {{"ratio", 0.7}, {"by_patient", true}, {"use_manifest_split", false}}},
      {"augment",
       {{"targets", desk ? targets_null : json(std::vector<int>{117, 385, 144, 297, 117, 162})},
        {"factor", 3.0},
        {"min_crop_area", 0.25}}},
      {"gan",
       {{"variants", {"cut", "cyclegan"}},
        {"grades", {1, 2, 3, 4, 5, 6}},
        {"corpus", "transform"},
        {"generate",
         {{"factor", 3.0},
          {"targets",
           {{"cut", desk ? targets_null : t1(gan::table1_generation_targets(Variant::cut))},
            {"cyclegan", desk ? targets_null : t1(gan::table1_generation_targets(Variant::cyclegan))}}}}},
        {"cut", without_seed(to_json(cut))},
        {"cyclegan", without_seed(to_json(cyc))}}},
      {"classifier",
       {{"backbones", {"inception_cnn", "vit"}},
        {"methods", method_keys()},
        {"composition", "single"},
        {"validation_fraction", 0.15},
        {"inception_cnn", without_seed(to_json(inc))},
        {"vit", without_seed(to_json(vit))}}},
      {"interpret",
       {{"backbone", "inception_cnn"},
        {"target", "predicted"},
        {"low_radius_fraction", 0.25},
        {"max_images_per_grade", desk ? 20 : 200},
        {"overlays_per_grade", 2}}},
      {"report", {{"timestamp", true}, {"title", "Inhalation injury grading report"}}},
  };
}

void apply_override(json& tree, const std::string& dotted_key, const std::string& value) {
  json* node = &tree;
  std::stringstream ss(dotted_key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ValidationError("empty override key");
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) {
      throw ValidationError("unknown config key '" + dotted_key + "'");
    }
    node = &(*node)[parts[i]];
  }
  if (node->is_object()) throw ValidationError("config key '" + dotted_key + "' is a section, not a value");
  json v = parse_scalar(value);
  if (node->is_array() && v.is_string()) {
    // Comma lists: --gan.variants cut,cyclegan
    json arr = json::array();
    std::stringstream items(value);
    std::string item;
    while (std::getline(items, item, ',')) arr.push_back(parse_scalar(item));
    v = arr;
  } else if (node->is_array() && v.is_number()) {
    v = json::array({v});
  }
  if (!compatible(*node, v) && !(v.is_null() && dotted_key.find("targets") != std::string::npos)) {
    throw ValidationError("config key '" + dotted_key + "' expects " + std::string(node->type_name()) + ", got " +
                          value);
  }
  *node = v;
}

PipelineConfig resolve_config(std::optional<Profile> profile, const std::optional<std::filesystem::path>& file,
                              const std::vector<std::pair<std::string, std::string>>& overrides) {
  json from_file;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw MissingArtifact(*file);
    try {
      in >> from_file;
    } catch (const json::exception& e) {
      throw ValidationError("config " + file->string() + ": " + e.what());
    }
    if (!from_file.is_object()) throw ValidationError("config " + file->string() + ": top level must be an object");
  }
  Profile p = Profile::desk;
  if (profile) {
    p = *profile;
  } else if (from_file.contains("profile")) {
    p = profile_from_string(from_file["profile"].get<std::string>());
  }
  json tree = default_config(p);
  if (!from_file.is_null()) merge(tree, from_file, "");
  tree["profile"] = std::string(to_string(p));
  for (const auto& [k, v] : overrides) apply_override(tree, k, v);
  try {
    validate_tree(tree);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return PipelineConfig{tree};
}

}  // namespace bronchograde::pipeline

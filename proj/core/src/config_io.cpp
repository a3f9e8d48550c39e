#include "bronchograde/config_io.hpp"

#include <set>

#include "bronchograde/errors.hpp"

namespace bronchograde {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + "." + key + ": wrong type (" + j.at(key).dump() + ")");
  }
}

}  // namespace

json to_json(const gan::GanConfig& c) {
  return {{"variant", gan::to_string(c.variant)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"lambda_cyc", c.lambda_cyc},
          {"lambda_nce", c.lambda_nce},
          {"tau", c.tau},
          {"negatives_per_anchor", c.negatives_per_anchor},
          {"patches_per_image", c.patches_per_image},
          {"projection_dim", c.projection_dim},
          {"nce_identity", c.nce_identity},
          {"image_size", c.image_size},
          {"max_steps_per_epoch", c.max_steps_per_epoch},
          {"network",
           {{"ngf", c.network.ngf},
            {"n_down", c.network.n_down},
            {"n_blocks", c.network.n_blocks},
            {"ndf", c.network.ndf},
            {"disc_layers", c.network.disc_layers}}},
          {"seed", c.seed}};
}

gan::GanConfig gan_config_from_json(const json& j, gan::GanConfig c) {
  const std::string w = "gan";
  reject_unknown(j,
                 {"variant", "epochs", "batch_size", "learning_rate", "beta1", "beta2", "lambda_cyc",
                  "lambda_nce", "tau", "negatives_per_anchor", "patches_per_image", "projection_dim",
                  "nce_identity", "image_size", "max_steps_per_epoch", "network", "seed"},
                 w);
  if (j.contains("variant")) {
    std::string v;
    read(j, "variant", v, w);
    c.variant = gan::variant_from_string(v);
  }
  read(j, "epochs", c.epochs, w);
  read(j, "batch_size", c.batch_size, w);
  read(j, "learning_rate", c.learning_rate, w);
  read(j, "beta1", c.beta1, w);
  read(j, "beta2", c.beta2, w);
  read(j, "lambda_cyc", c.lambda_cyc, w);
  read(j, "lambda_nce", c.lambda_nce, w);
  read(j, "tau", c.tau, w);
  read(j, "negatives_per_anchor", c.negatives_per_anchor, w);
  read(j, "patches_per_image", c.patches_per_image, w);
  read(j, "projection_dim", c.projection_dim, w);
  read(j, "nce_identity", c.nce_identity, w);
  read(j, "image_size", c.image_size, w);
  read(j, "max_steps_per_epoch", c.max_steps_per_epoch, w);
  read(j, "seed", c.seed, w);
  if (j.contains("network")) {
    const auto& n = j.at("network");
    const std::string wn = w + ".network";
    reject_unknown(n, {"ngf", "n_down", "n_blocks", "ndf", "disc_layers"}, wn);
    read(n, "ngf", c.network.ngf, wn);
    read(n, "n_down", c.network.n_down, wn);
    read(n, "n_blocks", c.network.n_blocks, wn);
    read(n, "ndf", c.network.ndf, wn);
    read(n, "disc_layers", c.network.disc_layers, wn);
  }
  c.validate();
  return c;
}

json to_json(const classify::ClassifierConfig& c) {
  return {{"backbone", classify::to_string(c.backbone)},
          {"pretrained", c.pretrained},
          {"weights_path", c.weights_path},
          {"trainable_scope", classify::to_string(c.trainable_scope)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"input_size", c.input_size},
          {"width", c.width},
          {"vit",
           {{"patch_size", c.vit.patch_size},
            {"dim", c.vit.dim},
            {"depth", c.vit.depth},
            {"heads", c.vit.heads},
            {"mlp_dim", c.vit.mlp_dim}}},
          {"class_weighting", c.class_weighting},
          {"vit_grad_cam", c.vit_grad_cam}};
}

classify::ClassifierConfig classifier_config_from_json(const json& j, classify::ClassifierConfig c) {
  const std::string w = "classifier";
  reject_unknown(j,
                 {"backbone", "pretrained", "weights_path", "trainable_scope", "epochs", "batch_size",
                  "learning_rate", "seed", "input_size", "width", "vit", "class_weighting", "vit_grad_cam"},
                 w);
  std::string s;
  if (j.contains("backbone")) {
    read(j, "backbone", s, w);
    c.backbone = classify::backbone_from_string(s);
  }
  if (j.contains("trainable_scope")) {
    read(j, "trainable_scope", s, w);
    c.trainable_scope = classify::scope_from_string(s);
  }
  read(j, "pretrained", c.pretrained, w);
  read(j, "weights_path", c.weights_path, w);
  read(j, "epochs", c.epochs, w);
  read(j, "batch_size", c.batch_size, w);
  read(j, "learning_rate", c.learning_rate, w);
  read(j, "seed", c.seed, w);
  read(j, "input_size", c.input_size, w);
  read(j, "width", c.width, w);
  read(j, "class_weighting", c.class_weighting, w);
  read(j, "vit_grad_cam", c.vit_grad_cam, w);
  if (j.contains("vit")) {
    const auto& v = j.at("vit");
    const std::string wv = w + ".vit";
    reject_unknown(v, {"patch_size", "dim", "depth", "heads", "mlp_dim"}, wv);
    read(v, "patch_size", c.vit.patch_size, wv);
    read(v, "dim", c.vit.dim, wv);
    read(v, "depth", c.vit.depth, wv);
    read(v, "heads", c.vit.heads, wv);
    read(v, "mlp_dim", c.vit.mlp_dim, wv);
  }
  c.validate();
  return c;
}

}  // namespace bronchograde

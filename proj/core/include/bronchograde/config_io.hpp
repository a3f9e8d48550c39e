#pragma once

#include <nlohmann/json.hpp>

#include "bronchograde/classify.hpp"
#include "bronchograde/gan.hpp"

namespace bronchograde {

nlohmann::json to_json(const gan::GanConfig& cfg);
/// Keys absent from `j` keep their value from `base`; unknown keys are rejected.
gan::GanConfig gan_config_from_json(const nlohmann::json& j, gan::GanConfig base);

nlohmann::json to_json(const classify::ClassifierConfig& cfg);
classify::ClassifierConfig classifier_config_from_json(const nlohmann::json& j,
                                                       classify::ClassifierConfig base);

}  // namespace bronchograde

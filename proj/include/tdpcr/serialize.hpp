#pragma once

#include <json.hpp>

#include "tdpcr/data.hpp"
#include "tdpcr/network.hpp"

namespace tdpcr {

nlohmann::json network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const nlohmann::json& j);

nlohmann::json dataset_spec_to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

BranchMode branch_mode_from_string(const std::string& s);

}  // namespace tdpcr

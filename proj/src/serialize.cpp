#include "tdpcr/serialize.hpp"

using json = nlohmann::json;

namespace tdpcr {

BranchMode branch_mode_from_string(const std::string& s) {
    if (s == "global_only") return BranchMode::global_only;
    if (s == "local_only") return BranchMode::local_only;
    if (s == "both") return BranchMode::both;
    throw ArgumentError("unknown branch mode: " + s);
}

json network_config_to_json(const NetworkConfig& cfg) {
    return json{{"stage_channels", cfg.stage_channels},
                {"naf_depths", cfg.naf_depths},
                {"prompt_channels", cfg.prompt_channels},
                {"optical_bands", cfg.optical_bands},
                {"sar_bands", cfg.sar_bands},
                {"num_classes", cfg.num_classes},
                {"seg_unified_channels", cfg.seg_unified_channels},
                {"branch", branch_mode_name(cfg.branch)}};
}

NetworkConfig network_config_from_json(const json& j) {
    NetworkConfig cfg;
    cfg.stage_channels = j.at("stage_channels").get<std::vector<int>>();
    cfg.naf_depths = j.at("naf_depths").get<std::vector<int>>();
    cfg.prompt_channels = j.at("prompt_channels").get<int>();
    cfg.optical_bands = j.at("optical_bands").get<int>();
    cfg.sar_bands = j.at("sar_bands").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.seg_unified_channels = j.at("seg_unified_channels").get<int>();
    cfg.branch = branch_mode_from_string(j.at("branch").get<std::string>());
    cfg.validate();
    return cfg;
}

json dataset_spec_to_json(const DatasetSpec& s) {
    return json{{"height", s.height},
                {"width", s.width},
                {"num_classes", s.num_classes},
                {"coverage_min", s.coverage_min},
                {"coverage_max", s.coverage_max},
                {"speckle_looks", s.speckle_looks},
                {"shadows", s.shadows},
                {"train_count", s.train_count},
                {"val_count", s.val_count},
                {"test_count", s.test_count},
                {"base_seed", s.base_seed}};
}

DatasetSpec dataset_spec_from_json(const json& j) {
    DatasetSpec s;
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.coverage_min = j.at("coverage_min").get<double>();
    s.coverage_max = j.at("coverage_max").get<double>();
    s.speckle_looks = j.at("speckle_looks").get<int>();
    s.shadows = j.at("shadows").get<bool>();
    s.train_count = j.at("train_count").get<int>();
    s.val_count = j.at("val_count").get<int>();
    s.test_count = j.at("test_count").get<int>();
    s.base_seed = j.at("base_seed").get<uint64_t>();
    return s;
}

}  // namespace tdpcr

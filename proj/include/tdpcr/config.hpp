#pragma once

#include <string>
#include <vector>

#include "tdpcr/data.hpp"
#include "tdpcr/network.hpp"
#include "tdpcr/trainer.hpp"

namespace tdpcr {

struct EvalSettings {
    std::string mode = "full";  // full | cr-only | direct-seg
    std::string split = "test";
    int max_scenes = -1;
    int max_strips = 4;
};

struct AblateSettings {
    int phase1_steps = 2000;
    int phase2_steps = 800;
};

// One declarative configuration for every command; nested sections mirror
// the dataset / network / training / evaluation structures. Unknown keys are
// rejected, command-line overrides win.
struct AppConfig {
    std::string data_root;  // dataset directory (env TDPCR_DATA_DIR default)
    DatasetSpec data;
    NetworkConfig network;
    TrainConfig train;
    EvalSettings eval;
    AblateSettings ablate;
};

AppConfig default_config();

// path may be empty (defaults only); overrides are dotted "a.b.c=value".
AppConfig load_app_config(const std::string& path, const std::vector<std::string>& overrides);

// resolved-config echo (re-loadable as a config file)
std::string app_config_json(const AppConfig& cfg);

void write_config_echo(const AppConfig& cfg, const std::string& out_dir);

}  // namespace tdpcr

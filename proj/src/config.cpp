#include "tdpcr/config.hpp"

#include <filesystem>
#include <fstream>

#include "tdpcr/serialize.hpp"

using json = nlohmann::json;

namespace tdpcr {

namespace {

json train_to_json(const TrainConfig& t) {
    return json{{"phase", t.phase},
                {"freeze", freeze_policy_name(t.freeze)},
                {"loss",
                 {{"lambda_ssim", t.loss.lambda_ssim},
                  {"lambda_rec", t.loss.lambda_rec},
                  {"lambda_seg", t.loss.lambda_seg},
                  {"label_smoothing", t.loss.label_smoothing}}},
                {"lr", t.lr},
                {"lr_min", t.lr_min},
                {"weight_decay", t.weight_decay},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"adam_eps", t.adam_eps},
                {"steps", t.steps},
                {"batch", t.batch},
                {"crop", t.crop},
                {"val_every", t.val_every},
                {"val_scenes", t.val_scenes},
                {"val_crop", t.val_crop},
                {"seed", t.seed},
                {"out_dir", t.out_dir},
                {"init_checkpoint", t.init_checkpoint},
                {"resume", t.resume}};
}

TrainConfig train_from_json(const json& j) {
    TrainConfig t;
    t.phase = j.at("phase").get<int>();
    t.freeze = freeze_policy_from_string(j.at("freeze").get<std::string>());
    const auto& l = j.at("loss");
    t.loss.lambda_ssim = l.at("lambda_ssim").get<double>();
    t.loss.lambda_rec = l.at("lambda_rec").get<double>();
    t.loss.lambda_seg = l.at("lambda_seg").get<double>();
    t.loss.label_smoothing = l.at("label_smoothing").get<double>();
    t.lr = j.at("lr").get<double>();
    t.lr_min = j.at("lr_min").get<double>();
    t.weight_decay = j.at("weight_decay").get<double>();
    t.beta1 = j.at("beta1").get<double>();
    t.beta2 = j.at("beta2").get<double>();
    t.adam_eps = j.at("adam_eps").get<double>();
    t.steps = j.at("steps").get<int>();
    t.batch = j.at("batch").get<int>();
    t.crop = j.at("crop").get<int>();
    t.val_every = j.at("val_every").get<int>();
    t.val_scenes = j.at("val_scenes").get<int>();
    t.val_crop = j.at("val_crop").get<int>();
    t.seed = j.at("seed").get<uint64_t>();
    t.out_dir = j.at("out_dir").get<std::string>();
    t.init_checkpoint = j.at("init_checkpoint").get<std::string>();
    t.resume = j.at("resume").get<std::string>();
    return t;
}

json app_to_json(const AppConfig& c) {
    return json{{"data_root", c.data_root},
                {"data", dataset_spec_to_json(c.data)},
                {"network", network_config_to_json(c.network)},
                {"train", train_to_json(c.train)},
                {"eval",
                 {{"mode", c.eval.mode},
                  {"split", c.eval.split},
                  {"max_scenes", c.eval.max_scenes},
                  {"max_strips", c.eval.max_strips}}},
                {"ablate", {{"phase1_steps", c.ablate.phase1_steps}, {"phase2_steps", c.ablate.phase2_steps}}}};
}

AppConfig app_from_json(const json& j) {
    AppConfig c;
    c.data_root = j.at("data_root").get<std::string>();
    c.data = dataset_spec_from_json(j.at("data"));
    c.network = network_config_from_json(j.at("network"));
    c.train = train_from_json(j.at("train"));
    c.eval.mode = j.at("eval").at("mode").get<std::string>();
    c.eval.split = j.at("eval").at("split").get<std::string>();
    c.eval.max_scenes = j.at("eval").at("max_scenes").get<int>();
    c.eval.max_strips = j.at("eval").at("max_strips").get<int>();
    c.ablate.phase1_steps = j.at("ablate").at("phase1_steps").get<int>();
    c.ablate.phase2_steps = j.at("ablate").at("phase2_steps").get<int>();
    return c;
}

// Recursive merge that rejects keys absent from the default tree.
void merge_strict(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) throw ArgumentError("config: expected an object at " + (prefix.empty() ? "root" : prefix));
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ArgumentError("config: unknown key '" + path + "'");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_strict(slot, it.value(), path);
        } else {
            if (slot.is_string() && !it.value().is_string())
                throw ArgumentError("config: key '" + path + "' expects a string");
            if ((slot.is_number() || slot.is_boolean()) && it.value().is_string())
                throw ArgumentError("config: key '" + path + "' expects a non-string scalar");
            slot = it.value();
        }
    }
}

void apply_override(json& tree, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ArgumentError("override must be key=value: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    json* node = &tree;
    size_t pos = 0;
    std::string last;
    std::vector<std::string> parts;
    while (pos != std::string::npos) {
        const auto dot = key.find('.', pos);
        parts.push_back(key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos));
        pos = dot == std::string::npos ? std::string::npos : dot + 1;
    }
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
            throw ArgumentError("config: unknown section '" + parts[i] + "' in override " + kv);
        node = &(*node)[parts[i]];
    }
    const std::string& leaf = parts.back();
    if (!node->contains(leaf)) throw ArgumentError("config: unknown key in override " + kv);
    json& slot = (*node)[leaf];
    try {
        if (slot.is_string())
            slot = value;
        else if (slot.is_boolean())
            slot = (value == "true" || value == "1");
        else if (slot.is_number_integer() || slot.is_number_unsigned())
            slot = json::parse(value);
        else if (slot.is_number_float())
            slot = std::stod(value);
        else if (slot.is_array())
            slot = json::parse(value);
        else
            throw ArgumentError("config: unsupported override target " + kv);
        if (slot.is_null()) throw ArgumentError("config: null override " + kv);
    } catch (const std::exception&) {
        throw ArgumentError("config: cannot parse override value in '" + kv + "'");
    }
}

}  // namespace

AppConfig default_config() {
    AppConfig c;
    const char* env = std::getenv("TDPCR_DATA_DIR");
    c.data_root = env ? env : "data/synthetic";
    return c;
}

AppConfig load_app_config(const std::string& path, const std::vector<std::string>& overrides) {
    json tree = app_to_json(default_config());
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ArgumentError("cannot open config file: " + path);
        json user;
        try {
            f >> user;
        } catch (const json::exception& e) {
            throw ArgumentError(strf("config parse error in %s: %s", path.c_str(), e.what()));
        }
        merge_strict(tree, user, "");
    }
    for (const auto& kv : overrides) apply_override(tree, kv);
    try {
        return app_from_json(tree);
    } catch (const json::exception& e) {
        throw ArgumentError(strf("config error: %s", e.what()));
    }
}

std::string app_config_json(const AppConfig& cfg) { return app_to_json(cfg).dump(2) + "\n"; }

void write_config_echo(const AppConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream f(std::filesystem::path(out_dir) / "config_resolved.json");
    f << app_config_json(cfg);
    if (!f) throw DataError("cannot write config echo in " + out_dir);
}

}  // namespace tdpcr

#include "tdpcr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "tdpcr/serialize.hpp"

using json = nlohmann::json;

namespace tdpcr {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'T', 'D', 'P', 'C', 'R', 'C', 'K', '1'};
}

void save_checkpoint(const std::string& path, const TdpcrNetwork<float>& net, const CheckpointMeta& meta,
                     const std::map<std::string, Tensor<float>>& extras) {
    json manifest;
    manifest["schema_version"] = 1;
    manifest["endianness"] = "little";
    manifest["phase"] = meta.phase;
    manifest["step"] = meta.step;
    manifest["seed"] = meta.seed;
    manifest["freeze"] = meta.freeze;
    manifest["network"] = network_config_to_json(net.config());
    json params = json::array();
    for (const auto& p : net.store().all())
        params.push_back({{"group", p->group}, {"name", p->name}, {"shape", p->value.val.shape()}});
    manifest["params"] = params;
    json ex = json::array();
    for (const auto& [name, t] : extras) ex.push_back({{"name", name}, {"shape", t.shape()}});
    manifest["extras"] = ex;

    const std::string mstr = manifest.dump();
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint for write: " + path);
    f.write(kMagic, 8);
    const uint64_t mlen = mstr.size();
    f.write(reinterpret_cast<const char*>(&mlen), 8);
    f.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (const auto& pm : net.store().all())
        f.write(reinterpret_cast<const char*>(pm->value.val.data()),
                static_cast<std::streamsize>(pm->value.val.size() * 4));
    for (const auto& [name, t] : extras)
        f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 4));
    if (!f) throw DataError("short write on checkpoint: " + path);
}

namespace {

json read_manifest(std::ifstream& f, const std::string& path) {
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0) throw DataError("not a checkpoint file: " + path);
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), 8);
    if (!f || mlen == 0 || mlen > (1ull << 30)) throw DataError("corrupt checkpoint manifest length: " + path);
    std::string mstr(mlen, '\0');
    f.read(mstr.data(), static_cast<std::streamsize>(mlen));
    if (!f) throw DataError("truncated checkpoint manifest: " + path);
    try {
        return json::parse(mstr);
    } catch (const json::exception& e) {
        throw DataError(strf("corrupt checkpoint manifest in %s: %s", path.c_str(), e.what()));
    }
}

CheckpointInfo info_from_manifest(const json& manifest, const std::string& path) {
    CheckpointInfo info;
    try {
        if (manifest.at("schema_version").get<int>() != 1) throw DataError("unsupported checkpoint schema");
        if (manifest.at("endianness").get<std::string>() != "little")
            throw DataError("checkpoint is not little-endian");
        info.meta.phase = manifest.at("phase").get<int>();
        info.meta.step = manifest.at("step").get<int64_t>();
        info.meta.seed = manifest.at("seed").get<uint64_t>();
        info.meta.freeze = manifest.at("freeze").get<std::string>();
        info.config = network_config_from_json(manifest.at("network"));
    } catch (const json::exception& e) {
        throw DataError(strf("corrupt checkpoint manifest in %s: %s", path.c_str(), e.what()));
    }
    return info;
}

}  // namespace

CheckpointInfo peek_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    return info_from_manifest(read_manifest(f, path), path);
}

CheckpointInfo load_checkpoint(const std::string& path, TdpcrNetwork<float>& net,
                               std::map<std::string, Tensor<float>>* extras) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    json manifest = read_manifest(f, path);
    CheckpointInfo info = info_from_manifest(manifest, path);

    size_t seen = 0;
    try {
        for (const auto& pj : manifest.at("params")) {
            const std::string name = pj.at("name").get<std::string>();
            const std::vector<int> shape = pj.at("shape").get<std::vector<int>>();
            Parameter<float>* p = net.store().find(name);
            if (!p) throw DataError("checkpoint parameter missing in model: " + name);
            if (p->value.val.shape() != shape)
                throw DataError(strf("shape mismatch for %s: file %s vs model %s", name.c_str(),
                                     Tensor<float>(shape).shape_str().c_str(), p->value.val.shape_str().c_str()));
            f.read(reinterpret_cast<char*>(p->value.val.data()),
                   static_cast<std::streamsize>(p->value.val.size() * 4));
            if (!f) throw DataError("truncated checkpoint payload: " + path);
            ++seen;
        }
        if (seen != net.store().all().size())
            throw DataError(strf("checkpoint covers %zu of %zu model parameters", seen, net.store().all().size()));
        if (extras) {
            extras->clear();
            for (const auto& ej : manifest.at("extras")) {
                const std::string name = ej.at("name").get<std::string>();
                Tensor<float> t(ej.at("shape").get<std::vector<int>>());
                f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 4));
                if (!f) throw DataError("truncated checkpoint extras: " + path);
                (*extras)[name] = std::move(t);
            }
        }
    } catch (const json::exception& e) {
        throw DataError(strf("corrupt checkpoint manifest in %s: %s", path.c_str(), e.what()));
    }
    return info;
}

}  // namespace tdpcr

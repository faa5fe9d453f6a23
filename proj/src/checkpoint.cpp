#include "sim2real/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace sim2real {

namespace {
constexpr const char* kMagic = "SIM2REAL-CKPT 1";
}

nlohmann::json to_json(const LayerSpec& L) {
    return {{"name", L.name},
            {"kind", to_string(L.kind)},
            {"filter", L.filter},
            {"stride", L.stride},
            {"channels", L.channels},
            {"dilation", L.dilation},
            {"pad", {L.pad_before, L.pad_after}},
            {"activation", to_string(L.activation)},
            {"normalization", to_string(L.normalization)},
            {"groups", L.groups},
            {"residual", L.residual},
            {"residual_from", L.residual_from},
            {"input_from", L.input_from},
            {"concat_from", L.concat_from},
            {"dropout_p", L.dropout_p},
            {"noise_sigma", L.noise_sigma},
            {"patch_grid", L.patch_grid}};
}

LayerSpec layer_from_json(const nlohmann::json& j) {
    LayerSpec L;
    L.name = j.at("name").get<std::string>();
    L.kind = parse_layer_kind(j.at("kind").get<std::string>());
    L.filter = j.at("filter").get<int>();
    L.stride = j.at("stride").get<int>();
    L.channels = j.at("channels").get<int>();
    L.dilation = j.at("dilation").get<int>();
    L.pad_before = j.at("pad").at(0).get<int>();
    L.pad_after = j.at("pad").at(1).get<int>();
    L.activation = parse_activation(j.at("activation").get<std::string>());
    L.normalization = parse_normalization(j.at("normalization").get<std::string>());
    L.groups = j.at("groups").get<int>();
    L.residual = j.at("residual").get<bool>();
    L.residual_from = j.at("residual_from").get<int>();
    L.input_from = j.at("input_from").get<int>();
    L.concat_from = j.at("concat_from").get<int>();
    L.dropout_p = j.at("dropout_p").get<double>();
    L.noise_sigma = j.at("noise_sigma").get<double>();
    L.patch_grid = j.at("patch_grid").get<int>();
    return L;
}

nlohmann::json to_json(const BuildArgs& a) {
    return {{"family", to_string(a.family)},
            {"size", a.size},
            {"width_divisor", a.width_divisor},
            {"n_patches", a.n_patches}};
}

BuildArgs build_args_from_json(const nlohmann::json& j) {
    BuildArgs a;
    a.family = parse_net_family(j.at("family").get<std::string>());
    a.size = j.at("size").get<int>();
    a.width_divisor = j.at("width_divisor").get<int>();
    a.n_patches = j.at("n_patches").get<int>();
    return a;
}

nlohmann::json architecture_to_json(const Architecture& arch) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& L : arch.layers) {
        layers.push_back(to_json(L));
    }
    return {{"input", {arch.input.h, arch.input.w, arch.input.c}}, {"layers", layers}};
}

void Checkpoint::save(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["meta"] = meta;
    header["networks"] = nlohmann::json::array();
    for (const auto& name : order_) {
        header["networks"].push_back(entries_.at(name).header);
    }
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
    out << kMagic << '\n' << text.size() << '\n' << text;
    for (const auto& name : order_) {
        const std::string& blob = entries_.at(name).blob;
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    if (!out) {
        throw IoError("failed writing checkpoint " + path.string());
    }
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    std::string magic;
    std::getline(in, magic);
    if (magic != kMagic) {
        throw IoError(path.string() + " is not a checkpoint file");
    }
    std::string len_line;
    std::getline(in, len_line);
    std::size_t len = 0;
    try {
        len = std::stoull(len_line);
    } catch (const std::exception&) {
        throw IoError("corrupt checkpoint header length in " + path.string());
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) {
        throw IoError("truncated checkpoint header in " + path.string());
    }
    const nlohmann::json header = nlohmann::json::parse(text);
    Checkpoint ck;
    ck.meta = header.at("meta");
    for (const auto& h : header.at("networks")) {
        Entry e;
        e.header = h;
        const std::size_t width = h.at("scalar").get<std::string>() == "f32" ? 4 : 8;
        e.blob.resize(h.at("count").get<std::size_t>() * width);
        in.read(e.blob.data(), static_cast<std::streamsize>(e.blob.size()));
        if (!in) {
            throw IoError("truncated parameter block in " + path.string());
        }
        const std::string name = h.at("name").get<std::string>();
        ck.order_.push_back(name);
        ck.entries_[name] = std::move(e);
    }
    return ck;
}

}  // namespace sim2real

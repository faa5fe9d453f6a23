#pragma once

// Checkpoint container: one file holding any number of named networks.
//
//   line 1   "SIM2REAL-CKPT 1"
//   line 2   byte length L of the JSON header, in decimal
//   L bytes  JSON header: {"meta": {...}, "networks": [{"name", "build",
//            "init_seed", "architecture", "scalar", "count"}, ...]}
//   rest     raw little-endian parameter blocks, one per network, in header order
//
// Loading rebuilds each architecture from its build arguments, checks it
// against the stored layer list and copies the parameters verbatim, so eval
// forwards of a reloaded network are bit-identical.

#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sim2real/architectures.hpp"

namespace sim2real {

nlohmann::json to_json(const LayerSpec& layer);
LayerSpec layer_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BuildArgs& args);
BuildArgs build_args_from_json(const nlohmann::json& j);
nlohmann::json architecture_to_json(const Architecture& arch);

template <typename Scalar>
constexpr const char* scalar_tag() {
    if constexpr (std::is_same_v<Scalar, float>) {
        return "f32";
    } else {
        return "f64";
    }
}

class Checkpoint {
public:
    nlohmann::json meta = nlohmann::json::object();

    template <typename Scalar>
    void add(const std::string& name, const Network<Scalar>& net) {
        Entry e;
        e.header = {{"name", name},
                    {"build", to_json(net.architecture().args)},
                    {"init_seed", net.init_seed()},
                    {"architecture", architecture_to_json(net.architecture())},
                    {"scalar", scalar_tag<Scalar>()},
                    {"count", net.num_params()}};
        const auto* bytes = reinterpret_cast<const char*>(net.parameters().data());
        e.blob.assign(bytes, bytes + net.num_params() * static_cast<std::int64_t>(sizeof(Scalar)));
        if (entries_.count(name) == 0) {
            order_.push_back(name);
        }
        entries_[name] = std::move(e);
    }

    [[nodiscard]] bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    [[nodiscard]] std::vector<std::string> names() const { return order_; }

    template <typename Scalar>
    Network<Scalar> network(const std::string& name) const {
        const auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw IoError("checkpoint has no network named " + name);
        }
        const nlohmann::json& h = it->second.header;
        if (h.at("scalar").get<std::string>() != scalar_tag<Scalar>()) {
            throw IoError("checkpoint network " + name + " stored as " + h.at("scalar").get<std::string>());
        }
        Network<Scalar> net(make_architecture(build_args_from_json(h.at("build"))), h.at("init_seed").get<std::uint64_t>());
        if (architecture_to_json(net.architecture()) != h.at("architecture")) {
            throw IoError("checkpoint architecture for " + name + " does not match its build arguments");
        }
        const auto count = h.at("count").get<std::int64_t>();
        if (count != net.num_params() ||
            static_cast<std::int64_t>(it->second.blob.size()) != count * static_cast<std::int64_t>(sizeof(Scalar))) {
            throw IoError("checkpoint parameter count mismatch for " + name);
        }
        std::memcpy(net.parameters().data(), it->second.blob.data(), it->second.blob.size());
        return net;
    }

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

private:
    struct Entry {
        nlohmann::json header;
        std::string blob;
    };
    std::map<std::string, Entry> entries_;
    std::vector<std::string> order_;
};

}  // namespace sim2real

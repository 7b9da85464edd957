#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nascell/errors.hpp"
#include "nascell/ops.hpp"
#include "nascell/tensor.hpp"

namespace nascell {

/// Versioned binary training checkpoint: a JSON container serialized as
/// MessagePack, so doubles round-trip exactly. Holds the run configuration,
/// epoch counter, RNG state, every parameter tensor, optimizer velocity, and
/// normalization running statistics.
struct Checkpoint {
    static constexpr const char* kFormat = "nascell-checkpoint";
    static constexpr int kVersion = 1;

    std::string kind;        // "search" or "model"
    nlohmann::json config;
    int epoch = 0;
    std::string rng_state;
    std::vector<Tensor> params;                       // detached copies on load
    std::vector<std::vector<double>> momenta;
    std::vector<std::vector<double>> norm_means;
    std::vector<std::vector<double>> norm_vars;
    std::vector<Tensor> alphas;                       // search checkpoints only

    nlohmann::json to_json() const {
        auto tensor_list = [](const std::vector<Tensor>& ts) {
            nlohmann::json arr = nlohmann::json::array();
            for (const Tensor& t : ts)
                arr.push_back({{"shape", t.shape()}, {"data", t.data()}});
            return arr;
        };
        nlohmann::json j;
        j["format"] = kFormat;
        j["version"] = kVersion;
        j["kind"] = kind;
        j["config"] = config;
        j["epoch"] = epoch;
        j["rng"] = rng_state;
        j["params"] = tensor_list(params);
        j["momenta"] = momenta;
        j["norm_means"] = norm_means;
        j["norm_vars"] = norm_vars;
        j["alphas"] = tensor_list(alphas);
        return j;
    }

    static Checkpoint from_json(const nlohmann::json& j) {
        if (!j.is_object() || j.value("format", std::string()) != kFormat)
            throw DataError("checkpoint: unrecognized container format");
        if (j.at("version").get<int>() != kVersion)
            throw DataError("checkpoint: unsupported version " + j.at("version").dump());
        auto tensor_list = [](const nlohmann::json& arr) {
            std::vector<Tensor> out;
            for (const auto& e : arr)
                out.emplace_back(e.at("shape").get<Shape>(), e.at("data").get<std::vector<double>>());
            return out;
        };
        Checkpoint c;
        c.kind = j.at("kind").get<std::string>();
        c.config = j.at("config");
        c.epoch = j.at("epoch").get<int>();
        c.rng_state = j.at("rng").get<std::string>();
        c.params = tensor_list(j.at("params"));
        c.momenta = j.at("momenta").get<std::vector<std::vector<double>>>();
        c.norm_means = j.at("norm_means").get<std::vector<std::vector<double>>>();
        c.norm_vars = j.at("norm_vars").get<std::vector<std::vector<double>>>();
        c.alphas = tensor_list(j.at("alphas"));
        return c;
    }

    void write(const std::string& path) const {
        const std::vector<std::uint8_t> bytes = nlohmann::json::to_msgpack(to_json());
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("checkpoint: cannot write " + path);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("checkpoint: failed writing " + path);
    }

    static Checkpoint read(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("checkpoint: cannot open " + path);
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        nlohmann::json j;
        try {
            j = nlohmann::json::from_msgpack(bytes);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("checkpoint: cannot decode " + path + ": " + e.what());
        }
        return from_json(j);
    }
};

namespace detail {

/// Copies checkpointed values into live tensors; shapes must match exactly.
inline void restore_tensors(const std::vector<Tensor>& saved, std::vector<Tensor>& live,
                            const char* what) {
    if (saved.size() != live.size())
        throw DataError(std::string("checkpoint: ") + what + " count mismatch (" +
                        std::to_string(saved.size()) + " saved, " + std::to_string(live.size()) +
                        " expected)");
    for (std::size_t i = 0; i < live.size(); ++i) {
        if (saved[i].shape() != live[i].shape())
            throw DataError(std::string("checkpoint: ") + what + " shape mismatch at index " +
                            std::to_string(i) + ": " + shape_str(saved[i].shape()) + " vs " +
                            shape_str(live[i].shape()));
        live[i].data() = saved[i].data();
    }
}

inline void restore_norms(const std::vector<std::vector<double>>& means,
                          const std::vector<std::vector<double>>& vars,
                          std::vector<BatchNorm2d*>& norms) {
    if (means.size() != norms.size() || vars.size() != norms.size())
        throw DataError("checkpoint: normalization stat count mismatch");
    for (std::size_t i = 0; i < norms.size(); ++i) {
        if (means[i].size() != norms[i]->running_mean().size())
            throw DataError("checkpoint: normalization channel mismatch at index " + std::to_string(i));
        norms[i]->running_mean() = means[i];
        norms[i]->running_var() = vars[i];
    }
}

} // namespace detail

} // namespace nascell

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nascell/errors.hpp"
#include "nascell/network.hpp"
#include "nascell/search.hpp"

namespace nascell {

/// Flat, fully serializable run configuration shared by every CLI command.
/// A persisted RunConfig plus its seed re-executes a run identically.
/// Precedence: built-in defaults < config file < command-line flags.
struct RunConfig {
    std::uint64_t seed = 1;
    int cells = 5;
    int nodes = 7;
    int channels = 16;
    int search_epochs = 50;
    int train_epochs = 70;
    int batch_size = 16;
    double lr = 0.007;
    double momentum = 0.9;
    double weight_decay = 3e-4;
    double alpha_lr = 3e-4;
    std::string protocol = "holdout";
    double holdout_ratio = 0.25;
    std::vector<std::string> classes;
    std::string out_dir = ".";

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["seed"] = seed;
        j["cells"] = cells;
        j["nodes"] = nodes;
        j["channels"] = channels;
        j["search_epochs"] = search_epochs;
        j["train_epochs"] = train_epochs;
        j["batch_size"] = batch_size;
        j["lr"] = lr;
        j["momentum"] = momentum;
        j["weight_decay"] = weight_decay;
        j["alpha_lr"] = alpha_lr;
        j["protocol"] = protocol;
        j["holdout_ratio"] = holdout_ratio;
        j["classes"] = classes;
        j["out_dir"] = out_dir;
        return j;
    }

    /// Overlays the file's keys onto this config. Unknown keys are rejected
    /// so stale or misspelled settings cannot silently change a run.
    void apply_json(const nlohmann::json& j) {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        for (const auto& [key, value] : j.items()) {
            try {
                if (key == "seed") seed = value.get<std::uint64_t>();
                else if (key == "cells") cells = value.get<int>();
                else if (key == "nodes") nodes = value.get<int>();
                else if (key == "channels") channels = value.get<int>();
                else if (key == "search_epochs") search_epochs = value.get<int>();
                else if (key == "train_epochs") train_epochs = value.get<int>();
                else if (key == "batch_size") batch_size = value.get<int>();
                else if (key == "lr") lr = value.get<double>();
                else if (key == "momentum") momentum = value.get<double>();
                else if (key == "weight_decay") weight_decay = value.get<double>();
                else if (key == "alpha_lr") alpha_lr = value.get<double>();
                else if (key == "protocol") protocol = value.get<std::string>();
                else if (key == "holdout_ratio") holdout_ratio = value.get<double>();
                else if (key == "classes") classes = value.get<std::vector<std::string>>();
                else if (key == "out_dir") out_dir = value.get<std::string>();
                else throw ConfigError("unknown config key '" + key + "'");
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError("bad value for config key '" + key + "': " + e.what());
            }
        }
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("malformed JSON in " + path + ": " + e.what());
        }
        RunConfig cfg;
        cfg.apply_json(j);
        return cfg;
    }

    void validate() const {
        if (cells < 2) throw ConfigError("cells must be >= 2");
        if (nodes < 4) throw ConfigError("nodes must be >= 4 (2 inputs, >=1 intermediate, 1 output)");
        if (channels < 1) throw ConfigError("channels must be >= 1");
        if (search_epochs < 1 || train_epochs < 0 || batch_size < 1)
            throw ConfigError("bad epoch/batch settings");
        if (lr <= 0 || momentum < 0 || weight_decay < 0 || alpha_lr < 0)
            throw ConfigError("bad optimizer rates");
        if (protocol != "holdout" && protocol != "loso")
            throw ConfigError("protocol must be 'holdout' or 'loso'");
        if (!(holdout_ratio > 0.0 && holdout_ratio < 1.0))
            throw ConfigError("holdout_ratio must be in (0,1)");
    }

    SearchConfig search_config() const {
        SearchConfig s;
        s.epochs = search_epochs;
        s.batch_size = batch_size;
        s.lr0 = lr;
        s.momentum = momentum;
        s.weight_decay = weight_decay;
        s.alpha_lr = alpha_lr;
        s.n_cells = cells;
        s.n_nodes = nodes;
        s.init_channels = channels;
        s.seed = seed;
        return s;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.epochs = train_epochs;
        t.batch_size = batch_size;
        t.lr0 = lr;
        t.momentum = momentum;
        t.weight_decay = weight_decay;
        t.seed = seed;
        return t;
    }
};

} // namespace nascell

#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "nascell/ops.hpp"

namespace nascell {

/// One retained connection of a discrete cell: the operation applied to the
/// output of predecessor node `pred`.
struct GenotypeEdge {
    CandidateOpKind op = CandidateOpKind::SepConv3x3;
    int pred = 0;

    bool operator==(const GenotypeEdge&) const = default;
};

/// The discrete architecture derived from a search: per intermediate node,
/// exactly two (operation, predecessor) pairs, for the regular ("normal")
/// and reduction cell types. Node indexing matches the cell DAG: inputs are
/// 0 and 1, intermediates start at 2, and the concat set lists every
/// intermediate node.
struct Genotype {
    int n_nodes = 7;
    std::vector<std::array<GenotypeEdge, 2>> normal;
    std::vector<std::array<GenotypeEdge, 2>> reduce;
    std::vector<int> normal_concat;
    std::vector<int> reduce_concat;

    bool operator==(const Genotype&) const = default;

    int n_intermediate() const { return n_nodes - 3; }

    /// Checks the structural invariants; throws on violation.
    void validate() const {
        const int B = n_intermediate();
        if (B < 1) throw std::invalid_argument("genotype: n_nodes must be >= 4");
        auto check_half = [&](const std::vector<std::array<GenotypeEdge, 2>>& half,
                              const std::vector<int>& concat, const char* which) {
            if (static_cast<int>(half.size()) != B)
                throw std::invalid_argument(std::string("genotype: ") + which + " has " +
                                            std::to_string(half.size()) + " nodes, expected " +
                                            std::to_string(B));
            for (int i = 0; i < B; ++i) {
                const int node = 2 + i;
                const auto& pair = half[static_cast<std::size_t>(i)];
                if (pair[0].pred == pair[1].pred)
                    throw std::invalid_argument(std::string("genotype: ") + which + " node " +
                                                std::to_string(node) + " uses one predecessor twice");
                for (const GenotypeEdge& e : pair) {
                    if (e.pred < 0 || e.pred >= node)
                        throw std::invalid_argument(std::string("genotype: ") + which + " node " +
                                                    std::to_string(node) + " has predecessor " +
                                                    std::to_string(e.pred) + " out of range");
                }
            }
            std::vector<int> expect;
            for (int i = 0; i < B; ++i) expect.push_back(2 + i);
            if (concat != expect)
                throw std::invalid_argument(std::string("genotype: ") + which +
                                            "_concat must list all intermediate nodes");
        };
        check_half(normal, normal_concat, "normal");
        check_half(reduce, reduce_concat, "reduce");
    }

    nlohmann::ordered_json to_json() const {
        auto half = [](const std::vector<std::array<GenotypeEdge, 2>>& edges) {
            nlohmann::ordered_json arr = nlohmann::ordered_json::array();
            for (const auto& pair : edges) {
                nlohmann::ordered_json node = nlohmann::ordered_json::array();
                for (const GenotypeEdge& e : pair)
                    node.push_back(nlohmann::ordered_json::array({op_kind_name(e.op), e.pred}));
                arr.push_back(node);
            }
            return arr;
        };
        nlohmann::ordered_json j;
        j["n_nodes"] = n_nodes;
        j["normal"] = half(normal);
        j["normal_concat"] = normal_concat;
        j["reduce"] = half(reduce);
        j["reduce_concat"] = reduce_concat;
        return j;
    }

    static Genotype from_json(const nlohmann::json& j) {
        auto half = [](const nlohmann::json& arr) {
            std::vector<std::array<GenotypeEdge, 2>> out;
            for (const auto& node : arr) {
                if (!node.is_array() || node.size() != 2)
                    throw std::invalid_argument("genotype: each node needs exactly 2 edges");
                std::array<GenotypeEdge, 2> pair;
                for (int i = 0; i < 2; ++i) {
                    const auto& e = node[static_cast<std::size_t>(i)];
                    if (!e.is_array() || e.size() != 2)
                        throw std::invalid_argument("genotype: edge must be [op, pred]");
                    const std::string name = e[0].get<std::string>();
                    const auto kind = op_kind_from_name(name);
                    if (!kind) throw std::invalid_argument("genotype: unknown op name '" + name + "'");
                    pair[static_cast<std::size_t>(i)] = GenotypeEdge{*kind, e[1].get<int>()};
                }
                out.push_back(pair);
            }
            return out;
        };
        Genotype g;
        g.n_nodes = j.at("n_nodes").get<int>();
        g.normal = half(j.at("normal"));
        g.normal_concat = j.at("normal_concat").get<std::vector<int>>();
        g.reduce = half(j.at("reduce"));
        g.reduce_concat = j.at("reduce_concat").get<std::vector<int>>();
        g.validate();
        return g;
    }
};

} // namespace nascell

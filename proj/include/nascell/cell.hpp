#pragma once

#include <array>
#include <memory>
#include <vector>

#include "nascell/genotype.hpp"
#include "nascell/ops.hpp"
#include "nascell/rng.hpp"
#include "nascell/tensor.hpp"

namespace nascell {

/// The cell DAG: N nodes total, of which 2 are inputs, B = N - 3 are
/// intermediate, and 1 is the output (the concat of all intermediates).
/// Every intermediate node receives an edge from each earlier node.
struct CellTopology {
    struct Edge {
        int src, dst;
    };

    int n_nodes = 7;
    int n_inputs = 2;
    int n_intermediate = 4;
    std::vector<Edge> edges;

    static CellTopology make(int n_nodes) {
        if (n_nodes < 4)
            throw std::invalid_argument("CellTopology: need n_nodes >= 4 (2 inputs + >=1 intermediate + output)");
        CellTopology t;
        t.n_nodes = n_nodes;
        t.n_intermediate = n_nodes - 3;
        for (int dst = 2; dst < 2 + t.n_intermediate; ++dst)
            for (int src = 0; src < dst; ++src) t.edges.push_back({src, dst});
        return t;
    }

    int num_edges() const { return static_cast<int>(edges.size()); }

    int edge_index(int src, int dst) const {
        for (int i = 0; i < num_edges(); ++i)
            if (edges[static_cast<std::size_t>(i)].src == src &&
                edges[static_cast<std::size_t>(i)].dst == dst)
                return i;
        throw std::invalid_argument("CellTopology: no edge (" + std::to_string(src) + "," +
                                    std::to_string(dst) + ")");
    }
};

/// Architecture parameters: one logit vector of length |kappa| = 7 per edge,
/// for each of the two cell types. Shared across all cells of a type.
struct AlphaParams {
    CellTopology topo;
    std::vector<Tensor> normal;
    std::vector<Tensor> reduce;

    /// Zeros plus small noise to break derivation ties.
    static AlphaParams init(const CellTopology& topo, Rng& rng, double noise = 1e-3) {
        AlphaParams a;
        a.topo = topo;
        auto make_edge_vec = [&]() {
            std::vector<double> v(kNumCandidateOps);
            for (auto& x : v) x = noise * rng.normal();
            return Tensor(Shape{kNumCandidateOps}, std::move(v), true);
        };
        for (int e = 0; e < topo.num_edges(); ++e) a.normal.push_back(make_edge_vec());
        for (int e = 0; e < topo.num_edges(); ++e) a.reduce.push_back(make_edge_vec());
        return a;
    }

    std::vector<Tensor> all() const {
        std::vector<Tensor> out = normal;
        out.insert(out.end(), reduce.begin(), reduce.end());
        return out;
    }
};

/// The 7 candidate operation instances living on one mixed edge.
using MixedEdgeOps = std::array<std::unique_ptr<OpInstance>, kNumCandidateOps>;

/// All mixed edges of one cell. In reduction cells, only edges sourced at
/// input nodes use stride 2; deeper edges keep stride 1 so node shapes agree.
struct MixedCellOps {
    CellTopology topo;
    bool reduction = false;
    std::vector<MixedEdgeOps> edges;

    static MixedCellOps make(const CellTopology& topo, int channels, bool reduction, Rng& rng) {
        MixedCellOps ops;
        ops.topo = topo;
        ops.reduction = reduction;
        ops.edges.resize(static_cast<std::size_t>(topo.num_edges()));
        for (int e = 0; e < topo.num_edges(); ++e) {
            const int stride = (reduction && topo.edges[static_cast<std::size_t>(e)].src < topo.n_inputs) ? 2 : 1;
            for (int k = 0; k < kNumCandidateOps; ++k)
                ops.edges[static_cast<std::size_t>(e)][static_cast<std::size_t>(k)] =
                    make_op(kAllCandidateOps[static_cast<std::size_t>(k)], channels, stride, rng);
        }
        return ops;
    }

    void collect_params(std::vector<Tensor>& out) const {
        for (const auto& edge : edges)
            for (const auto& op : edge) op->collect_params(out);
    }
    void collect_norms(std::vector<BatchNorm2d*>& out) {
        for (auto& edge : edges)
            for (auto& op : edge) op->collect_norms(out);
    }
};

/// Continuous relaxation of one edge: sum_o softmax(alpha)_o * o(x).
inline Tensor mixed_edge_forward(const Tensor& x, MixedEdgeOps& ops, const Tensor& alpha,
                                 bool training) {
    if (alpha.numel() != static_cast<std::size_t>(kNumCandidateOps))
        throw std::invalid_argument("mixed_edge_forward: alpha must have length 7");
    for (const auto& op : ops) {
        if (op->in_channels() != ops[0]->in_channels() || op->out_channels() != ops[0]->out_channels() ||
            op->stride() != ops[0]->stride())
            throw std::invalid_argument("mixed_edge_forward: ops disagree on channels/stride");
    }
    Tensor weights = softmax(alpha, 0);
    std::vector<Tensor> outs;
    outs.reserve(kNumCandidateOps);
    for (auto& op : ops) outs.push_back(op->forward(x, training));
    return weighted_sum(outs, weights);
}

/// Full continuous cell: every intermediate node sums the mixed-edge outputs
/// of all its predecessors; the cell output concatenates the intermediate
/// nodes along channels. Inputs must already be at the cell's working
/// channel count and equal spatial size.
inline Tensor cell_forward(const Tensor& prev_prev, const Tensor& prev, const CellTopology& topo,
                           const std::vector<Tensor>& alphas, MixedCellOps& ops, bool training) {
    if (prev_prev.ndim() != 4 || prev.ndim() != 4)
        throw std::invalid_argument("cell_forward: inputs must be [B,C,H,W]");
    if (prev_prev.dim(2) != prev.dim(2) || prev_prev.dim(3) != prev.dim(3))
        throw std::invalid_argument("cell_forward: spatial mismatch between inputs: " +
                                    shape_str(prev_prev.shape()) + " vs " + shape_str(prev.shape()));
    if (static_cast<int>(alphas.size()) != topo.num_edges())
        throw std::invalid_argument("cell_forward: alpha count != edge count");

    std::vector<Tensor> states{prev_prev, prev};
    for (int dst = 2; dst < 2 + topo.n_intermediate; ++dst) {
        Tensor acc;
        for (int src = 0; src < dst; ++src) {
            const int e = topo.edge_index(src, dst);
            Tensor msg = mixed_edge_forward(states[static_cast<std::size_t>(src)],
                                            ops.edges[static_cast<std::size_t>(e)],
                                            alphas[static_cast<std::size_t>(e)], training);
            acc = acc.defined() ? add(acc, msg) : msg;
        }
        states.push_back(acc);
    }
    return concat({states.begin() + 2, states.end()}, 1);
}

namespace detail {

inline std::vector<double> softmax_values(const Tensor& alpha) {
    const auto& a = alpha.data();
    double mx = a[0];
    for (double v : a) mx = std::max(mx, v);
    std::vector<double> w(a.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        w[i] = std::exp(a[i] - mx);
        denom += w[i];
    }
    for (auto& v : w) v /= denom;
    return w;
}

} // namespace detail

/// Discretization rule: per intermediate node, score each incoming edge by
/// its strongest softmax weight, keep the two strongest edges (necessarily
/// from distinct predecessors), and label each kept edge with its argmax
/// operation. Ties break deterministically toward the lower predecessor
/// index and lower op ordinal.
inline Genotype derive_genotype(const AlphaParams& alphas) {
    const CellTopology& topo = alphas.topo;

    auto derive_half = [&](const std::vector<Tensor>& edge_alphas) {
        std::vector<std::array<GenotypeEdge, 2>> out;
        for (int dst = 2; dst < 2 + topo.n_intermediate; ++dst) {
            struct Scored {
                double strength;
                int src;
                CandidateOpKind op;
            };
            std::vector<Scored> scored;
            for (int src = 0; src < dst; ++src) {
                const int e = topo.edge_index(src, dst);
                const auto w = detail::softmax_values(edge_alphas[static_cast<std::size_t>(e)]);
                int best_op = 0;
                for (int k = 1; k < kNumCandidateOps; ++k)
                    if (w[static_cast<std::size_t>(k)] > w[static_cast<std::size_t>(best_op)]) best_op = k;
                scored.push_back({w[static_cast<std::size_t>(best_op)], src,
                                  kAllCandidateOps[static_cast<std::size_t>(best_op)]});
            }
            std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
                if (a.strength != b.strength) return a.strength > b.strength;
                return a.src < b.src;
            });
            std::array<GenotypeEdge, 2> pair{GenotypeEdge{scored[0].op, scored[0].src},
                                             GenotypeEdge{scored[1].op, scored[1].src}};
            if (pair[0].pred > pair[1].pred) std::swap(pair[0], pair[1]);
            out.push_back(pair);
        }
        return out;
    };

    Genotype g;
    g.n_nodes = topo.n_nodes;
    g.normal = derive_half(alphas.normal);
    g.reduce = derive_half(alphas.reduce);
    for (int i = 0; i < topo.n_intermediate; ++i) {
        g.normal_concat.push_back(2 + i);
        g.reduce_concat.push_back(2 + i);
    }
    g.validate();
    return g;
}

} // namespace nascell

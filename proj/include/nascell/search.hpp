#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "nascell/cell.hpp"
#include "nascell/checkpoint.hpp"
#include "nascell/dataset.hpp"
#include "nascell/errors.hpp"
#include "nascell/genotype.hpp"
#include "nascell/network.hpp"
#include "nascell/optim.hpp"
#include "nascell/rng.hpp"

namespace nascell {

struct SearchConfig {
    int epochs = 50;
    int batch_size = 16;
    double lr0 = 0.007;
    double momentum = 0.9;
    double weight_decay = 3e-4;
    double alpha_lr = 3e-4;
    int n_cells = 5;
    int n_nodes = 7;
    int init_channels = 16;
    int num_classes = 2;
    int in_channels = 1;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const {
        return {{"epochs", epochs},        {"batch_size", batch_size},
                {"lr0", lr0},              {"momentum", momentum},
                {"weight_decay", weight_decay}, {"alpha_lr", alpha_lr},
                {"n_cells", n_cells},      {"n_nodes", n_nodes},
                {"init_channels", init_channels}, {"num_classes", num_classes},
                {"in_channels", in_channels}, {"seed", seed}};
    }
    static SearchConfig from_json(const nlohmann::json& j) {
        SearchConfig c;
        c.epochs = j.at("epochs").get<int>();
        c.batch_size = j.at("batch_size").get<int>();
        c.lr0 = j.at("lr0").get<double>();
        c.momentum = j.at("momentum").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.alpha_lr = j.at("alpha_lr").get<double>();
        c.n_cells = j.at("n_cells").get<int>();
        c.n_nodes = j.at("n_nodes").get<int>();
        c.init_channels = j.at("init_channels").get<int>();
        c.num_classes = j.at("num_classes").get<int>();
        c.in_channels = j.at("in_channels").get<int>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    }

    void validate() const {
        if (epochs < 1 || batch_size < 1) throw ConfigError("search: epochs and batch size must be >= 1");
        if (lr0 <= 0 || alpha_lr < 0 || weight_decay < 0 || momentum < 0)
            throw ConfigError("search: rates must be positive (alpha_lr/decay non-negative)");
        if (n_cells < 2 || n_nodes < 4 || init_channels < 1)
            throw ConfigError("search: bad architecture dimensions");
    }
};

/// The search-phase network: every edge carries all 7 candidate operations,
/// mixed by softmax(alpha). Cells share one alpha set per type; reduction
/// cells sit at the same 1/3 and 2/3 positions used at evaluation time.
class Supernet {
public:
    explicit Supernet(const SearchConfig& cfg) : cfg_(cfg), topo_(CellTopology::make(cfg.n_nodes)) {
        Rng rng(derive_seed(cfg.seed, "init"));
        const auto red = reduction_positions(cfg.n_cells);
        const int B = topo_.n_intermediate;

        stem_ = Stem(cfg.in_channels, cfg.init_channels, rng);
        int c_prev_prev = cfg.init_channels;
        int c_prev = cfg.init_channels;
        int c_work = cfg.init_channels;
        bool prev_was_reduction = false;
        for (int i = 0; i < cfg.n_cells; ++i) {
            const bool reduction = std::find(red.begin(), red.end(), i) != red.end();
            if (reduction) c_work *= 2;
            CellSlot slot;
            slot.reduction = reduction;
            slot.pre0 = prev_was_reduction ? InputAdapter::make_reduce(c_prev_prev, c_work, rng)
                                           : InputAdapter::make_conv(c_prev_prev, c_work, rng);
            slot.pre1 = InputAdapter::make_conv(c_prev, c_work, rng);
            slot.ops = MixedCellOps::make(topo_, c_work, reduction, rng);
            cells_.push_back(std::move(slot));
            c_prev_prev = c_prev;
            c_prev = B * c_work;
            prev_was_reduction = reduction;
        }
        feature_channels_ = c_prev;
        head_ = Classifier(feature_channels_, cfg.num_classes, rng);
        alphas_ = AlphaParams::init(topo_, rng);
    }

    Tensor forward(const Tensor& x, bool training) {
        Tensor s0 = stem_.forward(x, training);
        Tensor s1 = s0;
        for (auto& cell : cells_) {
            Tensor h0 = cell.pre0.forward(s0, training);
            Tensor h1 = cell.pre1.forward(s1, training);
            Tensor next = cell_forward(h0, h1, topo_, cell.reduction ? alphas_.reduce : alphas_.normal,
                                       cell.ops, training);
            s0 = s1;
            s1 = next;
        }
        return head_.forward(global_avg_pool(s1));
    }

    /// All network weights; disjoint from the architecture parameters.
    std::vector<Tensor> weights() const {
        std::vector<Tensor> out;
        stem_.collect_params(out);
        for (const auto& cell : cells_) {
            cell.pre0.collect_params(out);
            cell.pre1.collect_params(out);
            cell.ops.collect_params(out);
        }
        head_.collect_params(out);
        return out;
    }

    std::vector<BatchNorm2d*> norms() {
        std::vector<BatchNorm2d*> out;
        stem_.collect_norms(out);
        for (auto& cell : cells_) {
            cell.pre0.collect_norms(out);
            cell.pre1.collect_norms(out);
            cell.ops.collect_norms(out);
        }
        return out;
    }

    AlphaParams& alphas() { return alphas_; }
    const AlphaParams& alphas() const { return alphas_; }
    const CellTopology& topology() const { return topo_; }
    const SearchConfig& config() const { return cfg_; }

private:
    struct CellSlot {
        bool reduction = false;
        InputAdapter pre0, pre1;
        MixedCellOps ops;
    };

    SearchConfig cfg_;
    CellTopology topo_;
    Stem stem_;
    std::vector<CellSlot> cells_;
    Classifier head_;
    AlphaParams alphas_;
    int feature_channels_ = 0;
};

struct SearchState {
    SearchConfig cfg;
    std::unique_ptr<Supernet> net;
    std::vector<Tensor> weights;
    std::vector<Tensor> alpha_list;
    SgdMomentum w_opt{0.9, 3e-4};
    int epoch = 0;
    Rng master_rng{1};
};

/// Verifies that no tensor is updated by both optimizers.
inline void audit_parameter_disjointness(const SearchState& state) {
    std::unordered_set<const detail::TensorNode*> w_nodes;
    for (const Tensor& t : state.weights) w_nodes.insert(t.node());
    for (const Tensor& t : state.alpha_list) {
        if (w_nodes.count(t.node()))
            throw std::logic_error("search: a tensor is registered as both weight and alpha");
    }
}

inline SearchState make_search_state(const SearchConfig& cfg) {
    cfg.validate();
    SearchState state;
    state.cfg = cfg;
    state.net = std::make_unique<Supernet>(cfg);
    state.weights = state.net->weights();
    state.alpha_list = state.net->alphas().all();
    state.w_opt = SgdMomentum(cfg.momentum, cfg.weight_decay);
    state.w_opt.attach(state.weights);
    state.master_rng = Rng(cfg.seed);
    // Alphas of a cell type absent from the stack receive a zero gradient
    // rather than none; allocate the buffers up front.
    for (Tensor& a : state.alpha_list) a.grad();
    audit_parameter_disjointness(state);
    return state;
}

/// Splits the search data 50/50 by subject (seeded shuffle): the first half
/// of the shuffled subjects trains w, the second half trains alpha.
inline std::pair<std::vector<int>, std::vector<int>> search_split(const Dataset& ds,
                                                                  std::uint64_t seed) {
    std::vector<std::string> subjects = ds.subjects();
    if (subjects.size() < 2) throw DataError("search: need at least 2 subjects to split 50/50");
    Rng rng(derive_seed(seed, "search-split"));
    rng.shuffle(subjects);
    const std::size_t n_train = (subjects.size() + 1) / 2;
    std::unordered_set<std::string> train_subjects(subjects.begin(),
                                                   subjects.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<int> train_idx, val_idx;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (train_subjects.count(ds.samples[i].subject))
            train_idx.push_back(static_cast<int>(i));
        else
            val_idx.push_back(static_cast<int>(i));
    }
    return {train_idx, val_idx};
}

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

/// Mean validation loss under batch-statistic normalization without touching
/// running stats or gradients; the "val loss at init" reference.
inline double validation_loss(SearchState& state, const Dataset& ds, const std::vector<int>& val_idx) {
    if (val_idx.empty()) throw std::invalid_argument("validation_loss: empty split");
    NoGradGuard no_grad;
    BnStatsFreezeGuard freeze;
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < val_idx.size(); i += static_cast<std::size_t>(state.cfg.batch_size)) {
        const std::size_t end = std::min(val_idx.size(), i + static_cast<std::size_t>(state.cfg.batch_size));
        const std::vector<int> chunk(val_idx.begin() + static_cast<std::ptrdiff_t>(i),
                                     val_idx.begin() + static_cast<std::ptrdiff_t>(end));
        auto [x, labels] = make_batch(ds, chunk);
        Tensor loss = cross_entropy(state.net->forward(x, true), labels);
        loss_sum += loss.value() * static_cast<double>(chunk.size());
        seen += chunk.size();
    }
    return loss_sum / static_cast<double>(seen);
}

/// One alternating pass over the w-split: for each training batch, first an
/// alpha step on a validation batch (first-order: w treated as constant),
/// then a w step on the training batch with the cosine-annealed rate.
inline EpochMetrics bilevel_epoch(SearchState& state, const Dataset& ds,
                                  const std::vector<int>& train_idx, const std::vector<int>& val_idx) {
    if (train_idx.empty() || val_idx.empty())
        throw std::invalid_argument("bilevel_epoch: empty train or val split");
    audit_parameter_disjointness(state);

    const SearchConfig& cfg = state.cfg;
    Rng train_rng(derive_seed(cfg.seed, "train-batches", static_cast<std::uint64_t>(state.epoch)));
    Rng val_rng(derive_seed(cfg.seed, "val-batches", static_cast<std::uint64_t>(state.epoch)));
    const auto train_batches = make_epoch_batches(train_idx, cfg.batch_size, train_rng);
    const auto val_batches = make_epoch_batches(val_idx, cfg.batch_size, val_rng);

    const long steps_per_epoch = static_cast<long>(train_batches.size());
    const long total_steps = steps_per_epoch * cfg.epochs;

    auto zero_all = [&]() {
        for (Tensor& t : state.weights) t.zero_grad();
        for (Tensor& t : state.alpha_list) t.zero_grad();
    };

    EpochMetrics metrics;
    metrics.epoch = state.epoch;
    double train_sum = 0.0, val_sum = 0.0;
    std::size_t train_seen = 0, val_seen = 0;

    for (std::size_t step = 0; step < train_batches.size(); ++step) {
        const long t = static_cast<long>(state.epoch) * steps_per_epoch + static_cast<long>(step);
        const double lr = cosine_lr(std::min(t, total_steps), total_steps, cfg.lr0);

        // Upper level: alpha on a validation batch.
        const auto& vb = val_batches[step % val_batches.size()];
        {
            zero_all();
            auto [x, labels] = make_batch(ds, vb);
            Tensor loss = cross_entropy(state.net->forward(x, true), labels);
            if (!std::isfinite(loss.value()))
                throw NumericError("search: non-finite validation loss at epoch " +
                                   std::to_string(state.epoch) + ", step " + std::to_string(step));
            backward(loss);
            gradient_descent_step(state.alpha_list, cfg.alpha_lr);
            val_sum += loss.value() * static_cast<double>(vb.size());
            val_seen += vb.size();
        }

        // Lower level: w on the training batch.
        const auto& tb = train_batches[step];
        {
            zero_all();
            auto [x, labels] = make_batch(ds, tb);
            Tensor loss = cross_entropy(state.net->forward(x, true), labels);
            if (!std::isfinite(loss.value()))
                throw NumericError("search: non-finite training loss at epoch " +
                                   std::to_string(state.epoch) + ", step " + std::to_string(step));
            backward(loss);
            state.w_opt.step(state.weights, lr);
            train_sum += loss.value() * static_cast<double>(tb.size());
            train_seen += tb.size();
        }
        metrics.lr = lr;
    }

    metrics.train_loss = train_sum / static_cast<double>(train_seen);
    metrics.val_loss = val_sum / static_cast<double>(val_seen);
    ++state.epoch;
    return metrics;
}

inline void save_search_checkpoint(const std::string& path, const SearchState& state) {
    Checkpoint ck;
    ck.kind = "search";
    ck.config = state.cfg.to_json();
    ck.epoch = state.epoch;
    ck.rng_state = state.master_rng.serialize();
    ck.params = state.weights;
    ck.momenta = state.w_opt.velocity();
    for (BatchNorm2d* bn : state.net->norms()) {
        ck.norm_means.push_back(bn->running_mean());
        ck.norm_vars.push_back(bn->running_var());
    }
    ck.alphas = state.alpha_list;
    ck.write(path);
}

/// Rebuilds a SearchState from a checkpoint. Same seed, same platform:
/// continuing from the restored state is bit-compatible with never having
/// stopped.
inline SearchState load_search_checkpoint(const std::string& path) {
    Checkpoint ck = Checkpoint::read(path);
    if (ck.kind != "search") throw DataError("checkpoint: expected kind 'search', got '" + ck.kind + "'");
    SearchState state = make_search_state(SearchConfig::from_json(ck.config));
    detail::restore_tensors(ck.params, state.weights, "weight");
    detail::restore_tensors(ck.alphas, state.alpha_list, "alpha");
    auto norms = state.net->norms();
    detail::restore_norms(ck.norm_means, ck.norm_vars, norms);
    if (ck.momenta.size() != state.w_opt.velocity().size())
        throw DataError("checkpoint: optimizer state count mismatch");
    state.w_opt.velocity() = ck.momenta;
    state.epoch = ck.epoch;
    state.master_rng.deserialize(ck.rng_state);
    return state;
}

inline void write_genotype_json(const std::string& path, const Genotype& g) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write genotype file " + path);
    out << g.to_json().dump(2) << "\n";
}

inline Genotype read_genotype_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open genotype file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed genotype JSON in " + path + ": " + e.what());
    }
    try {
        return Genotype::from_json(j);
    } catch (const std::exception& e) {
        throw DataError("invalid genotype in " + path + ": " + e.what());
    }
}

struct SearchResult {
    Genotype genotype;
    double init_val_loss = 0.0;
    std::vector<EpochMetrics> history;
};

/// Full search: subject 50/50 split, cfg.epochs bilevel epochs, per-epoch
/// NDJSON log records and checkpoints (when out_dir is non-empty), final
/// genotype derivation.
inline SearchResult run_search(SearchConfig cfg, const Dataset& ds, const std::string& out_dir = "") {
    cfg.num_classes = ds.num_classes();
    cfg.in_channels = ds.channels;
    cfg.validate();

    SearchState state = make_search_state(cfg);
    auto [train_idx, val_idx] = search_split(ds, cfg.seed);

    std::ofstream log;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        log.open(std::filesystem::path(out_dir) / "search_log.ndjson", std::ios::trunc);
        if (!log) throw DataError("cannot write search log under " + out_dir);
    }

    SearchResult result;
    result.init_val_loss = validation_loss(state, ds, val_idx);
    if (log) {
        nlohmann::ordered_json rec;
        rec["epoch"] = -1;
        rec["train_loss"] = nullptr;
        rec["val_loss"] = result.init_val_loss;
        rec["lr"] = cfg.lr0;
        rec["genotype"] = derive_genotype(state.net->alphas()).to_json();
        log << rec.dump() << "\n";
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochMetrics m = bilevel_epoch(state, ds, train_idx, val_idx);
        result.history.push_back(m);
        if (log) {
            nlohmann::ordered_json rec;
            rec["epoch"] = m.epoch;
            rec["train_loss"] = m.train_loss;
            rec["val_loss"] = m.val_loss;
            rec["lr"] = m.lr;
            rec["genotype"] = derive_genotype(state.net->alphas()).to_json();
            log << rec.dump() << "\n";
        }
        if (!out_dir.empty())
            save_search_checkpoint((std::filesystem::path(out_dir) / "search_checkpoint.bin").string(),
                                   state);
    }

    result.genotype = derive_genotype(state.net->alphas());
    return result;
}

} // namespace nascell

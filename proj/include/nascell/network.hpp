#pragma once

#include <algorithm>
#include <chrono>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "nascell/cell.hpp"
#include "nascell/checkpoint.hpp"
#include "nascell/dataset.hpp"
#include "nascell/errors.hpp"
#include "nascell/genotype.hpp"
#include "nascell/ops.hpp"
#include "nascell/optim.hpp"
#include "nascell/rng.hpp"
#include "nascell/tensor.hpp"

namespace nascell {

/// 0-based positions of the two downsampling cells in a stack of k cells.
inline std::vector<int> reduction_positions(int n_cells) {
    return {n_cells / 3, 2 * n_cells / 3};
}

/// Adapts a previous cell output to the current cell's working width:
/// a 1x1 ReLU-conv-norm, or a factorized reduce when the producing cell was
/// followed by a downsampling step (spatial sizes differ by 2x).
struct InputAdapter {
    std::unique_ptr<ReluConvBn> conv;
    std::unique_ptr<FactorizedReduce> reduce;

    static InputAdapter make_conv(int c_in, int c_out, Rng& rng) {
        InputAdapter a;
        a.conv = std::make_unique<ReluConvBn>(c_in, c_out, 1, 1, 0, rng);
        return a;
    }
    static InputAdapter make_reduce(int c_in, int c_out, Rng& rng) {
        InputAdapter a;
        a.reduce = std::make_unique<FactorizedReduce>(c_in, c_out, rng);
        return a;
    }

    Tensor forward(const Tensor& x, bool training) {
        return conv ? conv->forward(x, training) : reduce->forward(x, training);
    }
    void collect_params(std::vector<Tensor>& out) const {
        if (conv) conv->collect_params(out);
        if (reduce) reduce->collect_params(out);
    }
    void collect_norms(std::vector<BatchNorm2d*>& out) {
        if (conv) conv->collect_norms(out);
        if (reduce) reduce->collect_norms(out);
    }
    std::int64_t param_count() const {
        return conv ? conv->param_count() : reduce->param_count();
    }
};

struct NetworkConfig {
    Genotype genotype;
    int n_cells = 5;
    int init_channels = 16;
    int num_classes = 2;
    int in_channels = 1;
    int input_hw = 120; // informational; the network is fully convolutional

    nlohmann::json to_json() const {
        return {{"genotype", genotype.to_json()}, {"n_cells", n_cells},
                {"init_channels", init_channels}, {"num_classes", num_classes},
                {"in_channels", in_channels},     {"input_hw", input_hw}};
    }
    static NetworkConfig from_json(const nlohmann::json& j) {
        NetworkConfig c;
        c.genotype = Genotype::from_json(j.at("genotype"));
        c.n_cells = j.at("n_cells").get<int>();
        c.init_channels = j.at("init_channels").get<int>();
        c.num_classes = j.at("num_classes").get<int>();
        c.in_channels = j.at("in_channels").get<int>();
        c.input_hw = j.at("input_hw").get<int>();
        return c;
    }
};

namespace detail {

/// One discrete cell instantiated from a genotype half: per intermediate
/// node, two (op, predecessor) connections whose outputs are summed.
struct DiscreteCell {
    bool reduction = false;
    int n_intermediate = 0;
    InputAdapter pre0, pre1;
    // per intermediate node: two ops with their source node ids
    std::vector<std::array<std::pair<int, std::unique_ptr<OpInstance>>, 2>> nodes;

    static DiscreteCell make(const Genotype& g, bool reduction, int c_prev_prev, int c_prev,
                             int c_work, bool prev_was_reduction, Rng& rng) {
        DiscreteCell cell;
        cell.reduction = reduction;
        cell.n_intermediate = g.n_intermediate();
        cell.pre0 = prev_was_reduction ? InputAdapter::make_reduce(c_prev_prev, c_work, rng)
                                       : InputAdapter::make_conv(c_prev_prev, c_work, rng);
        cell.pre1 = InputAdapter::make_conv(c_prev, c_work, rng);
        const auto& half = reduction ? g.reduce : g.normal;
        for (int i = 0; i < cell.n_intermediate; ++i) {
            std::array<std::pair<int, std::unique_ptr<OpInstance>>, 2> pair;
            for (int j = 0; j < 2; ++j) {
                const GenotypeEdge& e = half[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                const int stride = (reduction && e.pred < 2) ? 2 : 1;
                pair[static_cast<std::size_t>(j)] = {e.pred, make_op(e.op, c_work, stride, rng)};
            }
            cell.nodes.push_back(std::move(pair));
        }
        return cell;
    }

    Tensor forward(const Tensor& s0_raw, const Tensor& s1_raw, bool training) {
        std::vector<Tensor> states{pre0.forward(s0_raw, training), pre1.forward(s1_raw, training)};
        for (auto& node : nodes) {
            Tensor a = node[0].second->forward(states[static_cast<std::size_t>(node[0].first)], training);
            Tensor b = node[1].second->forward(states[static_cast<std::size_t>(node[1].first)], training);
            states.push_back(add(a, b));
        }
        return concat({states.begin() + 2, states.end()}, 1);
    }

    void collect_params(std::vector<Tensor>& out) const {
        pre0.collect_params(out);
        pre1.collect_params(out);
        for (const auto& node : nodes)
            for (const auto& [pred, op] : node) op->collect_params(out);
    }
    void collect_norms(std::vector<BatchNorm2d*>& out) {
        pre0.collect_norms(out);
        pre1.collect_norms(out);
        for (auto& node : nodes)
            for (auto& [pred, op] : node) op->collect_norms(out);
    }
    std::int64_t param_count() const {
        std::int64_t n = pre0.param_count() + pre1.param_count();
        for (const auto& node : nodes)
            for (const auto& [pred, op] : node) n += op->param_count();
        return n;
    }
};

} // namespace detail

/// The discrete evaluation network: stem, n_cells genotype cells with fresh
/// (untied) weights each and width doubling at the two reduction positions,
/// global average pooling, and a linear classifier.
class Network {
public:
    explicit Network(const NetworkConfig& cfg, std::uint64_t init_seed = 1) : cfg_(cfg) {
        cfg_.genotype.validate();
        if (cfg_.n_cells < 2) throw std::invalid_argument("Network: need at least 2 cells");
        if (cfg_.init_channels < 1 || cfg_.num_classes < 2 || cfg_.in_channels < 1)
            throw std::invalid_argument("Network: bad channel/class configuration");

        Rng rng(derive_seed(init_seed, "network-init"));
        const auto red = reduction_positions(cfg_.n_cells);
        const int B = cfg_.genotype.n_intermediate();

        stem_ = Stem(cfg_.in_channels, cfg_.init_channels, rng);
        int c_prev_prev = cfg_.init_channels;
        int c_prev = cfg_.init_channels;
        int c_work = cfg_.init_channels;
        bool prev_was_reduction = false;
        for (int i = 0; i < cfg_.n_cells; ++i) {
            const bool reduction = std::find(red.begin(), red.end(), i) != red.end();
            if (reduction) c_work *= 2;
            cells_.push_back(detail::DiscreteCell::make(cfg_.genotype, reduction, c_prev_prev, c_prev,
                                                        c_work, prev_was_reduction, rng));
            c_prev_prev = c_prev;
            c_prev = B * c_work;
            prev_was_reduction = reduction;
        }
        feature_channels_ = c_prev;
        head_ = Classifier(feature_channels_, cfg_.num_classes, rng);
    }

    /// Feature map before global pooling.
    Tensor forward_features(const Tensor& x, bool training) {
        if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels)
            throw std::invalid_argument("Network: input must be [B," + std::to_string(cfg_.in_channels) +
                                        ",H,W], got " + shape_str(x.shape()));
        Tensor s0 = stem_.forward(x, training);
        Tensor s1 = s0;
        for (auto& cell : cells_) {
            Tensor next = cell.forward(s0, s1, training);
            s0 = s1;
            s1 = next;
        }
        return s1;
    }

    Tensor forward(const Tensor& x, bool training) {
        return head_.forward(global_avg_pool(forward_features(x, training)));
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        stem_.collect_params(out);
        for (const auto& cell : cells_) cell.collect_params(out);
        head_.collect_params(out);
        return out;
    }

    std::vector<BatchNorm2d*> norms() {
        std::vector<BatchNorm2d*> out;
        stem_.collect_norms(out);
        for (auto& cell : cells_) cell.collect_norms(out);
        return out;
    }

    /// Analytic count of learnable scalars (independent of input resolution).
    std::int64_t param_count() const {
        std::int64_t n = stem_.param_count() + head_.param_count();
        for (const auto& cell : cells_) n += cell.param_count();
        return n;
    }

    const NetworkConfig& config() const { return cfg_; }
    int feature_channels() const { return feature_channels_; }
    bool cell_is_reduction(int i) const { return cells_.at(static_cast<std::size_t>(i)).reduction; }

private:
    NetworkConfig cfg_;
    Stem stem_;
    std::vector<detail::DiscreteCell> cells_;
    Classifier head_;
    int feature_channels_ = 0;
};

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

struct Metrics {
    std::vector<std::vector<std::int64_t>> confusion; // [true][predicted]
    double accuracy = 0.0;
    double uar = 0.0;
    std::vector<double> per_class_recall;
    std::int64_t param_count = 0;
    double fps = 0.0;
    std::string hardware;

    nlohmann::json to_json() const {
        return {{"accuracy", accuracy}, {"uar", uar},       {"per_class_recall", per_class_recall},
                {"confusion", confusion}, {"params", param_count}, {"fps", fps},
                {"hardware", hardware}};
    }
};

/// accuracy = trace/total; UAR = mean recall over classes with >=1 true
/// sample (recall of an absent class is excluded, not counted as zero).
inline Metrics metrics_from_confusion(const std::vector<std::vector<std::int64_t>>& confusion) {
    Metrics m;
    m.confusion = confusion;
    const int k = static_cast<int>(confusion.size());
    std::int64_t total = 0, correct = 0;
    double recall_sum = 0.0;
    int present = 0;
    m.per_class_recall.assign(static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) {
        std::int64_t row = 0;
        for (int j = 0; j < k; ++j) row += confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        total += row;
        correct += confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
        if (row > 0) {
            const double r = static_cast<double>(confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]) /
                             static_cast<double>(row);
            m.per_class_recall[static_cast<std::size_t>(i)] = r;
            recall_sum += r;
            ++present;
        }
    }
    m.accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    m.uar = present > 0 ? recall_sum / present : 0.0;
    return m;
}

inline std::string cpu_model_string() {
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line)) {
        const auto pos = line.find("model name");
        if (pos != std::string::npos) {
            const auto colon = line.find(':');
            if (colon != std::string::npos && colon + 2 <= line.size())
                return line.substr(colon + 2);
        }
    }
    return "unknown-cpu";
}

// ---------------------------------------------------------------------------
// Training and evaluation.
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 70;
    int batch_size = 16;
    double lr0 = 0.007;
    double momentum = 0.9;
    double weight_decay = 3e-4;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const {
        return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr0", lr0},
                {"momentum", momentum}, {"weight_decay", weight_decay}, {"seed", seed}};
    }
};

struct TrainEpochStats {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double lr = 0.0;
};

namespace detail {

inline void save_model_checkpoint(const std::string& path, Network& net, const TrainConfig& tcfg,
                                  int epoch, SgdMomentum& opt) {
    Checkpoint ck;
    ck.kind = "model";
    ck.config = {{"network", net.config().to_json()}, {"train", tcfg.to_json()}};
    ck.epoch = epoch;
    ck.rng_state = "";
    ck.params = net.parameters();
    ck.momenta = opt.velocity();
    for (BatchNorm2d* bn : net.norms()) {
        ck.norm_means.push_back(bn->running_mean());
        ck.norm_vars.push_back(bn->running_var());
    }
    ck.write(path);
}

} // namespace detail

/// SGD/momentum training with the cosine schedule annealed over all steps.
/// A non-finite loss saves a checkpoint (when a path is given) and aborts.
inline std::vector<TrainEpochStats> train_model(Network& net, const Dataset& ds,
                                                const std::vector<int>& train_indices,
                                                const TrainConfig& cfg,
                                                const std::string& checkpoint_path = "") {
    if (train_indices.empty()) throw std::invalid_argument("train_model: empty training set");
    std::vector<TrainEpochStats> history;
    if (cfg.epochs == 0) return history;
    if (cfg.epochs < 0) throw std::invalid_argument("train_model: negative epoch count");

    std::vector<Tensor> params = net.parameters();
    SgdMomentum opt(cfg.momentum, cfg.weight_decay);
    opt.attach(params);

    const long steps_per_epoch =
        static_cast<long>((train_indices.size() + cfg.batch_size - 1) / cfg.batch_size);
    const long total_steps = steps_per_epoch * cfg.epochs;
    long t = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, "model-batches", static_cast<std::uint64_t>(epoch)));
        const auto batches = make_epoch_batches(train_indices, cfg.batch_size, shuffle_rng);
        double loss_sum = 0.0;
        std::int64_t correct = 0, seen = 0;
        double lr = cfg.lr0;
        for (const auto& batch : batches) {
            auto [x, labels] = make_batch(ds, batch);
            for (Tensor& p : params) p.zero_grad();
            Tensor logits = net.forward(x, true);
            Tensor loss = cross_entropy(logits, labels);
            if (!std::isfinite(loss.value())) {
                if (!checkpoint_path.empty())
                    detail::save_model_checkpoint(checkpoint_path, net, cfg, epoch, opt);
                throw NumericError("train_model: non-finite loss " + std::to_string(loss.value()) +
                                   " at epoch " + std::to_string(epoch));
            }
            backward(loss);
            lr = cosine_lr(t, total_steps, cfg.lr0);
            opt.step(params, lr);
            ++t;

            loss_sum += loss.value() * static_cast<double>(batch.size());
            const int k = net.config().num_classes;
            for (std::size_t b = 0; b < batch.size(); ++b) {
                const double* row = logits.data().data() + b * static_cast<std::size_t>(k);
                int arg = 0;
                for (int c = 1; c < k; ++c)
                    if (row[c] > row[arg]) arg = c;
                if (arg == labels[b]) ++correct;
                ++seen;
            }
        }
        history.push_back({epoch, loss_sum / static_cast<double>(seen),
                           static_cast<double>(correct) / static_cast<double>(seen), lr});
        if (!checkpoint_path.empty())
            detail::save_model_checkpoint(checkpoint_path, net, cfg, epoch + 1, opt);
    }
    return history;
}

/// Deterministic evaluation pass (running-stat normalization, no graph).
/// fps is the median over `fps_trials` single-image forwards after
/// `fps_warmup` warmups; it is a hardware-specific measurement, not part of
/// the deterministic outputs.
inline Metrics evaluate(Network& net, const Dataset& ds, const std::vector<int>& indices,
                        int fps_warmup = 10, int fps_trials = 100) {
    if (indices.empty()) throw std::invalid_argument("evaluate: empty index list");
    NoGradGuard no_grad;
    const int k = net.config().num_classes;
    std::vector<std::vector<std::int64_t>> confusion(
        static_cast<std::size_t>(k), std::vector<std::int64_t>(static_cast<std::size_t>(k), 0));

    constexpr int kEvalBatch = 16;
    for (std::size_t i = 0; i < indices.size(); i += kEvalBatch) {
        const std::size_t end = std::min(indices.size(), i + kEvalBatch);
        const std::vector<int> chunk(indices.begin() + static_cast<std::ptrdiff_t>(i),
                                     indices.begin() + static_cast<std::ptrdiff_t>(end));
        auto [x, labels] = make_batch(ds, chunk);
        Tensor logits = net.forward(x, false);
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            const int label = labels[b];
            if (label < 0 || label >= k)
                throw std::invalid_argument("evaluate: label " + std::to_string(label) +
                                            " outside configured class range");
            const double* row = logits.data().data() + b * static_cast<std::size_t>(k);
            int arg = 0;
            for (int c = 1; c < k; ++c)
                if (row[c] > row[arg]) arg = c;
            ++confusion[static_cast<std::size_t>(label)][static_cast<std::size_t>(arg)];
        }
    }

    Metrics m = metrics_from_confusion(confusion);
    m.param_count = net.param_count();
    m.hardware = cpu_model_string();

    if (fps_trials > 0) {
        auto [single, single_labels] = make_batch(ds, {indices.front()});
        (void)single_labels;
        for (int i = 0; i < fps_warmup; ++i) (void)net.forward(single, false);
        std::vector<double> times;
        times.reserve(static_cast<std::size_t>(fps_trials));
        for (int i = 0; i < fps_trials; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            (void)net.forward(single, false);
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        std::sort(times.begin(), times.end());
        const double median = times[times.size() / 2];
        m.fps = median > 0.0 ? 1.0 / median : 0.0;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Subject-independent split protocols.
// ---------------------------------------------------------------------------

enum class SplitMode { HoldoutSubjects, Loso };

inline SplitMode split_mode_from_string(const std::string& s) {
    if (s == "holdout") return SplitMode::HoldoutSubjects;
    if (s == "loso") return SplitMode::Loso;
    throw ConfigError("unknown protocol '" + s + "' (expected 'holdout' or 'loso')");
}

struct Fold {
    std::vector<int> train_indices;
    std::vector<int> test_indices;
    std::string held_subjects; // comma-joined test subjects
};

/// holdout: one fold, subjects partitioned by a seeded shuffle at the given
/// test fraction (at least one subject on each side). loso: one fold per
/// subject. Train and test subjects never overlap.
inline std::vector<Fold> split_protocol(const Dataset& ds, SplitMode mode,
                                        double holdout_test_fraction, std::uint64_t seed) {
    const std::vector<std::string> subjects = ds.subjects();
    if (subjects.size() < 2)
        throw DataError("split_protocol: need at least 2 subjects for subject-independent splits");

    auto fold_from_test_set = [&](const std::vector<std::string>& test_subjects) {
        Fold f;
        auto is_test = [&](const std::string& s) {
            return std::find(test_subjects.begin(), test_subjects.end(), s) != test_subjects.end();
        };
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (is_test(ds.samples[i].subject))
                f.test_indices.push_back(static_cast<int>(i));
            else
                f.train_indices.push_back(static_cast<int>(i));
        }
        for (std::size_t i = 0; i < test_subjects.size(); ++i) {
            if (i) f.held_subjects += ",";
            f.held_subjects += test_subjects[i];
        }
        if (f.train_indices.empty() || f.test_indices.empty())
            throw DataError("split_protocol: degenerate fold (empty side)");
        return f;
    };

    std::vector<Fold> folds;
    if (mode == SplitMode::Loso) {
        for (const std::string& subject : subjects)
            folds.push_back(fold_from_test_set({subject}));
    } else {
        if (!(holdout_test_fraction > 0.0 && holdout_test_fraction < 1.0))
            throw ConfigError("holdout ratio must be in (0,1)");
        std::vector<std::string> shuffled = subjects;
        Rng rng(derive_seed(seed, "holdout-split"));
        rng.shuffle(shuffled);
        const int s = static_cast<int>(subjects.size());
        int n_test = static_cast<int>(std::lround(holdout_test_fraction * s));
        n_test = std::max(1, std::min(s - 1, n_test));
        folds.push_back(fold_from_test_set(
            {shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_test)}));
    }
    return folds;
}

/// Full protocol run: per fold, train a fresh network on the fold's training
/// subjects and evaluate on its held-out subjects. Reports per-fold metrics
/// plus the mean-over-folds and pooled-confusion aggregates.
struct ProtocolResult {
    std::vector<Fold> folds;
    std::vector<Metrics> fold_metrics;
    double mean_accuracy = 0.0;
    double mean_uar = 0.0;
    Metrics pooled;

    nlohmann::json to_json() const {
        nlohmann::json records = nlohmann::json::array();
        for (std::size_t i = 0; i < fold_metrics.size(); ++i) {
            nlohmann::json rec = fold_metrics[i].to_json();
            rec["fold"] = static_cast<int>(i);
            rec["held_subjects"] = folds[i].held_subjects;
            records.push_back(rec);
        }
        nlohmann::json agg = pooled.to_json();
        agg["fold"] = "aggregate";
        agg["mean_accuracy"] = mean_accuracy;
        agg["mean_uar"] = mean_uar;
        return {{"folds", records}, {"aggregate", agg}};
    }
};

inline ProtocolResult evaluate_protocol(const Dataset& ds, const NetworkConfig& base_cfg,
                                        const TrainConfig& tcfg, SplitMode mode,
                                        double holdout_test_fraction, std::uint64_t seed,
                                        int fps_trials = 100) {
    ProtocolResult result;
    result.folds = split_protocol(ds, mode, holdout_test_fraction, seed);
    const int k = base_cfg.num_classes;
    std::vector<std::vector<std::int64_t>> pooled(
        static_cast<std::size_t>(k), std::vector<std::int64_t>(static_cast<std::size_t>(k), 0));

    for (std::size_t i = 0; i < result.folds.size(); ++i) {
        Network net(base_cfg, derive_seed(seed, "fold-init", i));
        TrainConfig fold_tcfg = tcfg;
        fold_tcfg.seed = derive_seed(seed, "fold-train", i);
        train_model(net, ds, result.folds[i].train_indices, fold_tcfg);
        Metrics m = evaluate(net, ds, result.folds[i].test_indices, 10, fps_trials);
        for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b)
                pooled[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
                    m.confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
        result.mean_accuracy += m.accuracy;
        result.mean_uar += m.uar;
        result.fold_metrics.push_back(std::move(m));
    }
    result.mean_accuracy /= static_cast<double>(result.folds.size());
    result.mean_uar /= static_cast<double>(result.folds.size());
    result.pooled = metrics_from_confusion(pooled);
    result.pooled.param_count = result.fold_metrics.front().param_count;
    result.pooled.hardware = result.fold_metrics.front().hardware;
    return result;
}

} // namespace nascell

// Acceptance suite: every release criterion as a runnable check with one
// pass/fail line. Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "nascell/nascell.hpp"
#include "oracles.hpp"

using namespace nascell;
namespace fs = std::filesystem;

namespace {

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// --- criterion 1: gradient suite ------------------------------------------

bool criterion_gradients(std::string& detail) {
    const double t0 = now_seconds();
    double worst = 0.0;

    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        const int n = 2 + static_cast<int>(rng.uniform_int(3));
        const int m = 2 + static_cast<int>(rng.uniform_int(3));

        // elementwise kinds with and without broadcasting
        {
            Tensor a = oracles::random_tensor({n, m}, rng);
            Tensor b = oracles::random_tensor({n, m}, rng);
            Tensor r = oracles::random_tensor({n, m}, rng);
            for (BinaryKind kind : {BinaryKind::Add, BinaryKind::Sub, BinaryKind::Mul})
                worst = std::max(worst, oracles::finite_diff_check({a, b}, [&]() {
                    return oracles::projection_loss(binary_elementwise(a, b, kind), r);
                }));
            Tensor x4 = oracles::random_tensor({2, 3, 2, 2}, rng);
            Tensor b4 = oracles::random_tensor({1, 3, 1, 1}, rng);
            Tensor r4 = oracles::random_tensor({2, 3, 2, 2}, rng);
            worst = std::max(worst, oracles::finite_diff_check({x4, b4}, [&]() {
                return oracles::projection_loss(mul(x4, b4), r4);
            }));
        }
        // matmul, relu, softmax, reductions, reshape, concat, weighted sum
        {
            Tensor a = oracles::random_tensor({n, m}, rng);
            Tensor b = oracles::random_tensor({m, n}, rng);
            Tensor r = oracles::random_tensor({n, n}, rng);
            worst = std::max(worst, oracles::finite_diff_check({a, b}, [&]() {
                return oracles::projection_loss(matmul(a, b), r);
            }));
            Tensor x = oracles::random_tensor({n, m}, rng, 0.2, 2.0);
            Tensor rx = oracles::random_tensor({n, m}, rng);
            worst = std::max(worst, oracles::finite_diff_check({x}, [&]() {
                return oracles::projection_loss(relu(x), rx);
            }));
            worst = std::max(worst, oracles::finite_diff_check({x}, [&]() {
                return oracles::projection_loss(softmax(x, 1), rx);
            }));
            Tensor rm = oracles::random_tensor({1, m}, rng);
            worst = std::max(worst, oracles::finite_diff_check({x}, [&]() {
                return oracles::projection_loss(mean_axes(x, {0}, true), rm);
            }));
            worst = std::max(worst, oracles::finite_diff_check({x}, [&]() { return sum_all(mul(x, x)); }));

            Tensor i1 = oracles::random_tensor({1, 2, 3, 3}, rng);
            Tensor i2 = oracles::random_tensor({1, 2, 3, 3}, rng);
            Tensor w2 = oracles::random_tensor({2}, rng);
            Tensor rc = oracles::random_tensor({1, 4, 3, 3}, rng);
            worst = std::max(worst, oracles::finite_diff_check({i1, i2}, [&]() {
                return oracles::projection_loss(concat({i1, i2}, 1), rc);
            }));
            Tensor rw = oracles::random_tensor({1, 2, 3, 3}, rng);
            worst = std::max(worst, oracles::finite_diff_check({i1, i2, w2}, [&]() {
                return oracles::projection_loss(weighted_sum({i1, i2}, w2), rw);
            }));
            worst = std::max(worst, oracles::finite_diff_check({i1}, [&]() {
                return oracles::projection_loss(shift2d(i1, 1, 1), rw);
            }));
        }
        // cross entropy
        {
            std::vector<int> labels;
            for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.uniform_int(3)));
            Tensor logits = oracles::random_tensor({n, 3}, rng, -2, 2);
            worst = std::max(worst, oracles::finite_diff_check(
                                        {logits}, [&]() { return cross_entropy(logits, labels); }));
        }
        // convolution variants and pooling
        {
            Tensor x = oracles::random_tensor({1, 2, 5, 5}, rng);
            for (std::size_t i = 0; i < x.numel(); ++i) x.data()[i] += 1e-3 * static_cast<double>(i);
            Tensor k = oracles::random_tensor({2, 2, 3, 3}, rng, -0.5, 0.5);
            Tensor r = oracles::random_tensor({1, 2, 5, 5}, rng);
            worst = std::max(worst, oracles::finite_diff_check({x, k}, [&]() {
                return oracles::projection_loss(conv2d(x, k, 1, 1, 1, 1), r);
            }));
            Tensor kd = oracles::random_tensor({2, 1, 3, 3}, rng, -0.5, 0.5);
            Tensor rs = oracles::random_tensor({1, 2, 3, 3}, rng);
            worst = std::max(worst, oracles::finite_diff_check({x, kd}, [&]() {
                return oracles::projection_loss(conv2d(x, kd, 2, 1, 1, 2), rs);
            }));
            worst = std::max(worst, oracles::finite_diff_check({x}, [&]() {
                return oracles::projection_loss(maxpool2d(x, 3, 1, 1), r);
            }));
            worst = std::max(worst, oracles::finite_diff_check({x}, [&]() {
                return oracles::projection_loss(avgpool2d(x, 3, 1, 1), r);
            }));
        }
        // batch norm, training and eval modes
        {
            BatchNorm2d bn(2);
            Tensor x = oracles::random_tensor({2, 2, 3, 3}, rng);
            Tensor r = oracles::random_tensor({2, 2, 3, 3}, rng);
            BnStatsFreezeGuard freeze;
            worst = std::max(worst, oracles::finite_diff_check({x, bn.gamma(), bn.beta()}, [&]() {
                return oracles::projection_loss(bn.forward(x, true), r);
            }));
        }
        // every composed candidate op at both strides
        for (CandidateOpKind kind : kAllCandidateOps) {
            for (int stride : {1, 2}) {
                auto op = make_op(kind, 2, stride, rng);
                Tensor x = oracles::random_tensor({1, 2, 6, 6}, rng);
                for (std::size_t i = 0; i < x.numel(); ++i) x.data()[i] += 1e-3 * static_cast<double>(i);
                Tensor r = oracles::random_tensor({1, 2, 6 / stride, 6 / stride}, rng);
                std::vector<Tensor> checked{x};
                op->collect_params(checked);
                BnStatsFreezeGuard freeze;
                worst = std::max(worst, oracles::finite_diff_check(checked, [&]() {
                    return oracles::projection_loss(op->forward(x, true), r);
                }));
            }
        }
    }

    const double elapsed = now_seconds() - t0;
    std::ostringstream oss;
    oss << "max rel err " << worst << ", " << elapsed << " s";
    detail = oss.str();
    return worst < 1e-5 && elapsed < 60.0;
}

// --- criterion 2: dynamic imaging ------------------------------------------

bool criterion_dynamic_imaging(std::string& detail) {
    for (int q = 1; q <= 100; ++q) {
        const auto w = rank_weights(q);
        double total = 0.0;
        for (int p = 1; p <= q; ++p) {
            double direct = 0.0;
            for (int l = p; l <= q; ++l) direct += (2.0 * l - q) / l;
            if (std::abs(w[static_cast<std::size_t>(p - 1)] - direct) > 1e-9) {
                detail = "weight mismatch at q=" + std::to_string(q);
                return false;
            }
            total += w[static_cast<std::size_t>(p - 1)];
        }
        if (std::abs(total - q) > 1e-9) {
            detail = "sum F(p) != q at q=" + std::to_string(q);
            return false;
        }
    }
    const auto w3 = rank_weights(3);
    if (std::abs(w3[0] - 0.5) > 1e-12 || std::abs(w3[1] - 1.5) > 1e-12 || std::abs(w3[2] - 1.0) > 1e-12) {
        detail = "q=3 weights are not [0.5, 1.5, 1.0]";
        return false;
    }
    const double c = 0.61;
    FrameSequence seq;
    for (int i = 0; i < 3; ++i) {
        Image f(4, 4, 1);
        std::fill(f.pix.begin(), f.pix.end(), c);
        seq.frames.push_back(f);
    }
    for (double v : dynamic_image(seq).pixels.pix) {
        if (std::abs(v - 3 * c) > 1e-12) {
            detail = "constant video != q*c";
            return false;
        }
    }
    detail = "weights, sums, q=3 case, constant video";
    return true;
}

// --- criterion 3: relaxation identities -------------------------------------

bool criterion_relaxation(std::string& detail) {
    Rng rng(31);
    MixedEdgeOps ops;
    for (int k = 0; k < kNumCandidateOps; ++k)
        ops[static_cast<std::size_t>(k)] = make_op(kAllCandidateOps[static_cast<std::size_t>(k)], 3, 1, rng);
    Tensor x = oracles::random_tensor({1, 3, 6, 6}, rng);
    BnStatsFreezeGuard freeze;

    Tensor zero_alpha = Tensor::zeros({7}, true);
    Tensor mixed = mixed_edge_forward(x, ops, zero_alpha, true);
    std::vector<double> avg(mixed.numel(), 0.0);
    {
        NoGradGuard ng;
        for (auto& op : ops) {
            Tensor out = op->forward(x, true);
            for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += out.data()[i] / 7.0;
        }
    }
    for (std::size_t i = 0; i < avg.size(); ++i) {
        if (std::abs(mixed.data()[i] - avg[i]) > 1e-9) {
            detail = "uniform mixture != explicit average";
            return false;
        }
    }

    Tensor alpha({7}, {0.4, -0.3, 1.2, 0.0, -0.7, 0.2, 0.5}, true);
    Tensor shifted = alpha.detach();
    for (auto& v : shifted.data()) v += 3.75;
    shifted.set_requires_grad(true);
    Tensor m1 = mixed_edge_forward(x, ops, alpha, true);
    Tensor m2 = mixed_edge_forward(x, ops, shifted, true);
    for (std::size_t i = 0; i < m1.numel(); ++i) {
        if (std::abs(m1.data()[i] - m2.data()[i]) > 1e-12) {
            detail = "alpha shift changed the mixed output";
            return false;
        }
    }

    const CellTopology topo = CellTopology::make(7);
    AlphaParams alphas = AlphaParams::init(topo, rng, 1.0);
    const Genotype before = derive_genotype(alphas);
    Rng shift_rng(77);
    for (auto* half : {&alphas.normal, &alphas.reduce})
        for (Tensor& a : *half) {
            const double cst = shift_rng.uniform(-10, 10);
            for (auto& v : a.data()) v += cst;
        }
    if (!(derive_genotype(alphas) == before)) {
        detail = "alpha shift changed the derived genotype";
        return false;
    }
    detail = "uniform mixture, shift invariance of output and genotype";
    return true;
}

// --- criterion 4: derivation oracle -----------------------------------------

bool criterion_derivation(std::string& detail) {
    for (int n_nodes : {6, 7, 8}) {
        const CellTopology topo = CellTopology::make(n_nodes);
        Rng rng(static_cast<std::uint64_t>(4000 + n_nodes));
        for (int trial = 0; trial < 1000; ++trial) {
            const AlphaParams alphas = AlphaParams::init(topo, rng, 1.0);
            const Genotype derived = derive_genotype(alphas);
            derived.validate();
            if (!(derived == oracles::brute_force_derive(alphas))) {
                detail = "mismatch at n_nodes=" + std::to_string(n_nodes) + " trial " +
                         std::to_string(trial);
                return false;
            }
        }
    }
    detail = "3000 random draws, N in {6,7,8}, exact equality";
    return true;
}

// --- criterion 5: cell-forward oracle ----------------------------------------

bool criterion_cell_forward(std::string& detail) {
    double worst = 0.0;
    for (std::uint64_t seed : {51u, 52u}) {
        Rng rng(seed);
        const CellTopology topo = CellTopology::make(7);
        for (bool reduction : {false, true}) {
            MixedCellOps ops = MixedCellOps::make(topo, 2, reduction, rng);
            AlphaParams alphas = AlphaParams::init(topo, rng, 0.5);
            Tensor x = oracles::random_tensor({1, 2, 8, 8}, rng);
            Tensor y = oracles::random_tensor({1, 2, 8, 8}, rng);
            const auto& edge_alphas = reduction ? alphas.reduce : alphas.normal;
            BnStatsFreezeGuard freeze;
            Tensor impl = cell_forward(x, y, topo, edge_alphas, ops, true);
            const auto oracle = oracles::brute_force_cell(x, y, topo, edge_alphas, ops);
            for (std::size_t i = 0; i < oracle.size(); ++i)
                worst = std::max(worst, std::abs(impl.data()[i] - oracle[i]));
        }
    }
    std::ostringstream oss;
    oss << "max |delta| " << worst;
    detail = oss.str();
    return worst < 1e-9;
}

// --- criteria 6 and 7: structural grid and parameter accounting ---------------

bool criterion_structural_grid(std::string& detail) {
    const std::vector<int> red5 = reduction_positions(5);
    const std::vector<int> red8 = reduction_positions(8);
    const std::vector<int> red10 = reduction_positions(10);
    const std::vector<int> red15 = reduction_positions(15);
    if (red5 != std::vector<int>{1, 3} || red8 != std::vector<int>{2, 5} ||
        red10 != std::vector<int>{3, 6} || red15 != std::vector<int>{5, 10}) {
        detail = "reduction position formula broken";
        return false;
    }

    int checked = 0;
    for (int n_cells : {5, 8, 10, 15}) {
        for (int n_nodes : {6, 7, 8}) {
            Rng rng(static_cast<std::uint64_t>(n_cells * 100 + n_nodes));
            NetworkConfig cfg;
            cfg.genotype = derive_genotype(AlphaParams::init(CellTopology::make(n_nodes), rng, 1.0));
            cfg.n_cells = n_cells;
            cfg.init_channels = 8;
            cfg.num_classes = 6;
            cfg.in_channels = 1;
            cfg.input_hw = 120;
            Network net(cfg, 1);

            const auto red = reduction_positions(n_cells);
            for (int i = 0; i < n_cells; ++i) {
                const bool expect = (i == red[0] || i == red[1]);
                if (net.cell_is_reduction(i) != expect) {
                    detail = "reduction placement wrong at cells=" + std::to_string(n_cells);
                    return false;
                }
            }

            NoGradGuard ng;
            Tensor x = oracles::random_tensor({1, 1, 120, 120}, rng, 0, 1);
            Tensor feats = net.forward_features(x, false);
            if (feats.dim(2) != 30 || feats.dim(3) != 30) { // 120 / 4
                detail = "feature map not input/4 at cells=" + std::to_string(n_cells) +
                         " nodes=" + std::to_string(n_nodes);
                return false;
            }
            Tensor logits = net.forward(x, false);
            if (!(logits.shape() == Shape{1, 6})) {
                detail = "bad logit shape";
                return false;
            }
            ++checked;
        }
    }
    detail = std::to_string(checked) + " configurations, forward shapes and reduction placement";
    return checked == 12;
}

bool criterion_params(std::string& detail) {
    Rng rng(71);
    for (CandidateOpKind kind : kAllCandidateOps) {
        for (int stride : {1, 2}) {
            for (int channels : {3, 16}) {
                auto op = make_op(kind, channels, stride, rng);
                std::vector<Tensor> params;
                op->collect_params(params);
                if (count_params(*op) != oracles::enumerate_params(params)) {
                    detail = std::string("op count mismatch for ") + op_kind_name(kind);
                    return false;
                }
            }
        }
    }
    for (int n_cells : {5, 8}) {
        for (int n_nodes : {6, 7, 8}) {
            Rng grng(static_cast<std::uint64_t>(7000 + n_cells * 10 + n_nodes));
            NetworkConfig cfg;
            cfg.genotype = derive_genotype(AlphaParams::init(CellTopology::make(n_nodes), grng, 1.0));
            cfg.n_cells = n_cells;
            cfg.init_channels = 16;
            cfg.num_classes = 6;
            cfg.in_channels = 1;
            cfg.input_hw = 48;
            Network net48(cfg, 1);
            cfg.input_hw = 120;
            Network net120(cfg, 9);
            if (net48.param_count() != oracles::enumerate_params(net48.parameters())) {
                detail = "network count != enumeration";
                return false;
            }
            if (net48.param_count() != net120.param_count()) {
                detail = "count depends on input resolution";
                return false;
            }
        }
    }
    detail = "all op kinds and genotype networks, exact; resolution invariant";
    return true;
}

// --- criteria 8 and 9: end-to-end toy search, determinism ---------------------

struct ToySearchArtifacts {
    SearchResult seed1;
    double seed1_seconds = 0.0;
    int val_improved = 0;
};

ToySearchArtifacts run_toy_searches(const Dataset& ds) {
    ToySearchArtifacts art;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        SearchConfig cfg;
        cfg.epochs = 5;
        cfg.batch_size = 16;
        cfg.n_cells = 5;
        cfg.n_nodes = 7;
        cfg.init_channels = 8;
        cfg.seed = seed;
        const double t0 = now_seconds();
        SearchResult r = run_search(cfg, ds);
        const double elapsed = now_seconds() - t0;
        if (r.history.back().val_loss < r.init_val_loss) ++art.val_improved;
        if (seed == 1) {
            art.seed1 = std::move(r);
            art.seed1_seconds = elapsed;
        }
    }
    return art;
}

bool criterion_toy_search(const Dataset& ds, const ToySearchArtifacts& art, std::string& detail) {
    std::ostringstream oss;
    oss << "search " << art.seed1_seconds << " s, val " << art.seed1.init_val_loss << " -> "
        << art.seed1.history.back().val_loss << " (improved on " << art.val_improved << "/3 seeds)";
    if (art.seed1_seconds >= 15.0 * 60.0) {
        detail = oss.str() + "; too slow";
        return false;
    }
    if (art.seed1.history.back().val_loss >= art.seed1.init_val_loss || art.val_improved < 2) {
        detail = oss.str() + "; val loss did not improve";
        return false;
    }

    int seeds_ok = 0;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        NetworkConfig ncfg;
        ncfg.genotype = art.seed1.genotype;
        ncfg.n_cells = 5;
        ncfg.init_channels = 8;
        ncfg.num_classes = ds.num_classes();
        ncfg.in_channels = ds.channels;
        ncfg.input_hw = ds.height;
        Network net(ncfg, derive_seed(seed, "retrain-init"));

        const auto folds = split_protocol(ds, SplitMode::HoldoutSubjects, 0.25, seed);
        TrainConfig tcfg;
        tcfg.epochs = 30;
        tcfg.batch_size = 16;
        tcfg.seed = seed;
        train_model(net, ds, folds[0].train_indices, tcfg);
        const Metrics train_m = evaluate(net, ds, folds[0].train_indices, 0, 0);
        const Metrics test_m = evaluate(net, ds, folds[0].test_indices, 0, 0);
        oss << "; seed " << seed << ": train " << train_m.accuracy << ", held-out " << test_m.accuracy;
        if (train_m.accuracy >= 0.95 && test_m.accuracy >= 0.90) ++seeds_ok;
    }
    oss << "; " << seeds_ok << "/3 seeds passed";
    detail = oss.str();
    return seeds_ok >= 2;
}

bool criterion_determinism(const Dataset& ds, const ToySearchArtifacts& art, std::string& detail) {
    SearchConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.n_cells = 5;
    cfg.n_nodes = 7;
    cfg.init_channels = 8;
    cfg.seed = 1;
    const SearchResult repeat = run_search(cfg, ds);

    const fs::path dir = fs::temp_directory_path() / "nascell_acceptance";
    fs::create_directories(dir);
    write_genotype_json((dir / "g1.json").string(), art.seed1.genotype);
    write_genotype_json((dir / "g2.json").string(), repeat.genotype);
    std::ifstream f1(dir / "g1.json", std::ios::binary), f2(dir / "g2.json", std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    fs::remove_all(dir);
    if (s1.str() != s2.str() || s1.str().empty()) {
        detail = "repeated search produced different genotype.json bytes";
        return false;
    }

    const auto folds = split_protocol(ds, SplitMode::Loso, 0.25, 1);
    if (folds.size() != ds.subjects().size()) {
        detail = "LOSO fold count != subject count";
        return false;
    }
    std::size_t covered = 0;
    for (const auto& fold : folds) {
        covered += fold.test_indices.size();
        std::unordered_set<std::string> train_subjects;
        for (int i : fold.train_indices)
            train_subjects.insert(ds.samples[static_cast<std::size_t>(i)].subject);
        for (int i : fold.test_indices) {
            if (train_subjects.count(ds.samples[static_cast<std::size_t>(i)].subject)) {
                detail = "subject overlap inside a LOSO fold";
                return false;
            }
        }
    }
    if (covered != ds.size()) {
        detail = "LOSO folds do not partition the dataset";
        return false;
    }
    detail = "byte-identical genotype.json; LOSO folds partition subjects cleanly";
    return true;
}

// --- criterion 10: optimizer arithmetic ---------------------------------------

bool criterion_optimizer(std::string& detail) {
    Tensor x = Tensor::scalar(1.0, true);
    std::vector<Tensor> params{x};
    SgdMomentum opt(0.9, 0.0);
    opt.attach(params);
    auto take_step = [&]() {
        x.zero_grad();
        backward(scale(sum_all(mul(x, x)), 0.5));
        opt.step(params, 0.1);
    };
    take_step();
    const bool step1 = (x.data()[0] == 0.9) && (opt.velocity()[0][0] == 1.0);
    take_step();
    const double v2 = 0.9 * 1.0 + 0.9;
    const bool step2 = (opt.velocity()[0][0] == v2) && (x.data()[0] == 0.9 - 0.1 * v2) &&
                       (std::abs(x.data()[0] - 0.72) < 1e-15);
    const bool cosine_ok = (cosine_lr(0, 1000, 0.007) == 0.007) && (cosine_lr(1000, 1000, 0.007) == 0.0);
    detail = "1 -> 0.9 -> 0.72 exact; cosine endpoints 0.007 and 0 exact";
    return step1 && step2 && cosine_ok;
}

} // namespace

int main() {
    int failures = 0;
    const auto report = [&](int id, const std::string& name, bool ok, const std::string& detail) {
        std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << name;
        if (!detail.empty()) std::cout << " — " << detail;
        std::cout << std::endl;
        if (!ok) ++failures;
    };

    std::string detail;

    detail.clear();
    report(1, "gradient suite", criterion_gradients(detail), detail);
    detail.clear();
    report(2, "dynamic-imaging oracle", criterion_dynamic_imaging(detail), detail);
    detail.clear();
    report(3, "relaxation identities", criterion_relaxation(detail), detail);
    detail.clear();
    report(4, "derivation oracle", criterion_derivation(detail), detail);
    detail.clear();
    report(5, "cell-forward oracle", criterion_cell_forward(detail), detail);
    detail.clear();
    report(6, "structural grid", criterion_structural_grid(detail), detail);
    detail.clear();
    report(7, "parameter accounting", criterion_params(detail), detail);

    const Dataset stripes = make_stripes_dataset(200, 16, 4, 2024);
    const ToySearchArtifacts art = run_toy_searches(stripes);
    detail.clear();
    report(8, "end-to-end toy search", criterion_toy_search(stripes, art, detail), detail);
    detail.clear();
    report(9, "determinism and LOSO protocol", criterion_determinism(stripes, art, detail), detail);
    detail.clear();
    report(10, "optimizer arithmetic", criterion_optimizer(detail), detail);

    if (failures == 0)
        std::cout << "all acceptance criteria passed" << std::endl;
    else
        std::cout << failures << " acceptance criteria FAILED" << std::endl;
    return failures;
}

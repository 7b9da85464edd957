#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "nascell/network.hpp"
#include "nascell/search.hpp"
#include "oracles.hpp"

using namespace nascell;

namespace {

Genotype sample_genotype(int n_nodes, std::uint64_t seed = 42) {
    Rng rng(seed);
    const CellTopology topo = CellTopology::make(n_nodes);
    return derive_genotype(AlphaParams::init(topo, rng, 1.0));
}

} // namespace

TEST_CASE("metrics from confusion matrices") {
    const Metrics m1 = metrics_from_confusion({{9, 1}, {2, 8}});
    CHECK(m1.accuracy == Catch::Approx(0.85).margin(1e-12));
    CHECK(m1.uar == Catch::Approx(0.85).margin(1e-12));

    const Metrics m2 = metrics_from_confusion({{10, 0}, {5, 0}});
    CHECK(m2.accuracy == Catch::Approx(2.0 / 3).margin(1e-12));
    CHECK(m2.uar == Catch::Approx(0.5).margin(1e-12));

    const Metrics m3 = metrics_from_confusion({{4, 0, 0}, {0, 3, 0}, {0, 0, 2}});
    CHECK(m3.accuracy == 1.0);
    CHECK(m3.uar == 1.0);

    // a class with no true samples is excluded from UAR, not counted as zero
    const Metrics m4 = metrics_from_confusion({{4, 0}, {0, 0}});
    CHECK(m4.uar == 1.0);
}

TEST_CASE("reduction positions across the ablation grid") {
    CHECK(reduction_positions(5) == std::vector<int>{1, 3});
    CHECK(reduction_positions(8) == std::vector<int>{2, 5});
    CHECK(reduction_positions(10) == std::vector<int>{3, 6});
    CHECK(reduction_positions(15) == std::vector<int>{5, 10});
}

TEST_CASE("network forward shape and reduction placement") {
    NetworkConfig cfg;
    cfg.genotype = sample_genotype(7);
    cfg.n_cells = 5;
    cfg.init_channels = 8;
    cfg.num_classes = 3;
    cfg.in_channels = 1;
    Network net(cfg, 1);

    for (int i = 0; i < 5; ++i) CHECK(net.cell_is_reduction(i) == (i == 1 || i == 3));

    Rng rng(2);
    Tensor x = oracles::random_tensor({2, 1, 16, 16}, rng, 0, 1);
    Tensor feats = net.forward_features(x, false);
    CHECK(feats.dim(2) == 4); // 16 / 4 after two reductions
    CHECK(feats.dim(3) == 4);
    Tensor logits = net.forward(x, false);
    CHECK(logits.shape() == Shape{2, 3});

    // softmax over the classifier output sums to one per sample
    Tensor probs = softmax(logits, 1);
    for (int b = 0; b < 2; ++b) {
        double s = 0;
        for (int c = 0; c < 3; ++c) s += probs.data()[b * 3 + c];
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("eval-mode predictions are deterministic and batch-size invariant") {
    NetworkConfig cfg;
    cfg.genotype = sample_genotype(6);
    cfg.n_cells = 4;
    cfg.init_channels = 4;
    cfg.num_classes = 2;
    Network net(cfg, 3);

    Rng rng(4);
    Tensor batch = oracles::random_tensor({5, 1, 12, 12}, rng, 0, 1);
    NoGradGuard ng;
    Tensor all = net.forward(batch, false);
    Tensor again = net.forward(batch, false);
    CHECK(all.data() == again.data());

    // the same sample alone produces the same logits as inside the batch
    std::vector<double> one(batch.data().begin() + 2 * 144, batch.data().begin() + 3 * 144);
    Tensor single({1, 1, 12, 12}, one);
    Tensor solo = net.forward(single, false);
    for (int c = 0; c < 2; ++c)
        CHECK(std::abs(solo.data()[static_cast<std::size_t>(c)] - all.data()[2 * 2 + c]) < 1e-9);
}

TEST_CASE("network parameter count equals enumeration and ignores resolution") {
    NetworkConfig cfg;
    cfg.genotype = sample_genotype(7);
    cfg.n_cells = 5;
    cfg.init_channels = 16;
    cfg.num_classes = 6;
    cfg.in_channels = 1;
    cfg.input_hw = 48;
    Network net48(cfg, 1);
    cfg.input_hw = 120;
    Network net120(cfg, 2);

    CHECK(net48.param_count() == oracles::enumerate_params(net48.parameters()));
    CHECK(net48.param_count() == net120.param_count());
}

TEST_CASE("networks reject invalid configurations") {
    NetworkConfig cfg;
    cfg.genotype = sample_genotype(7);
    cfg.n_cells = 1;
    CHECK_THROWS(Network(cfg, 1));
    cfg.n_cells = 5;
    cfg.genotype.normal[0][1].pred = cfg.genotype.normal[0][0].pred; // duplicate predecessor
    CHECK_THROWS(Network(cfg, 1));
}

TEST_CASE("train_model: zero epochs returns the model unchanged") {
    NetworkConfig cfg;
    cfg.genotype = sample_genotype(6);
    cfg.n_cells = 2;
    cfg.init_channels = 4;
    cfg.num_classes = 2;
    Network net(cfg, 5);
    const auto before = net.parameters();
    std::vector<std::vector<double>> snapshot;
    for (const auto& p : before) snapshot.push_back(p.data());

    const Dataset ds = make_stripes_dataset(8, 8, 2, 1);
    TrainConfig tcfg;
    tcfg.epochs = 0;
    const auto history = train_model(net, ds, ds.all_indices(), tcfg);
    CHECK(history.empty());
    const auto after = net.parameters();
    for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i].data() == snapshot[i]);
}

TEST_CASE("train_model overfits one batch of 16 samples within 200 steps") {
    const Dataset ds = make_stripes_dataset(16, 8, 2, 2);
    NetworkConfig cfg;
    cfg.genotype = sample_genotype(7);
    cfg.n_cells = 2;
    cfg.init_channels = 8;
    cfg.num_classes = 2;
    Network net(cfg, 6);
    TrainConfig tcfg;
    tcfg.epochs = 200; // one batch per epoch -> 200 steps
    tcfg.batch_size = 16;
    tcfg.seed = 2;
    const auto history = train_model(net, ds, ds.all_indices(), tcfg);
    double best = 0;
    for (const auto& h : history) best = std::max(best, h.accuracy);
    CHECK(best == 1.0);
}

TEST_CASE("train_model aborts with a checkpoint on non-finite loss") {
    namespace fs = std::filesystem;
    const fs::path ckpt = fs::temp_directory_path() / "nascell_abort.bin";
    fs::remove(ckpt);

    const Dataset ds = make_stripes_dataset(8, 8, 2, 3);
    NetworkConfig cfg;
    cfg.genotype = sample_genotype(6);
    cfg.n_cells = 2;
    cfg.init_channels = 4;
    cfg.num_classes = 2;
    Network net(cfg, 7);
    // blown-up classifier bias: every logit row goes non-finite
    net.parameters().back().data()[0] = std::numeric_limits<double>::infinity();
    TrainConfig tcfg;
    tcfg.epochs = 1;
    CHECK_THROWS_AS(train_model(net, ds, ds.all_indices(), tcfg, ckpt.string()), NumericError);
    REQUIRE(fs::exists(ckpt));
    const Checkpoint c = Checkpoint::read(ckpt.string());
    CHECK(c.kind == "model");
    fs::remove(ckpt);
}

TEST_CASE("split protocols are subject independent") {
    const Dataset ds = make_stripes_dataset(30, 8, 3, 4);

    const auto loso = split_protocol(ds, SplitMode::Loso, 0.25, 1);
    REQUIRE(loso.size() == 3);
    std::size_t pooled = 0;
    for (const auto& fold : loso) {
        pooled += fold.test_indices.size();
        std::unordered_set<std::string> train_subjects, test_subjects;
        for (int i : fold.train_indices) train_subjects.insert(ds.samples[static_cast<std::size_t>(i)].subject);
        for (int i : fold.test_indices) test_subjects.insert(ds.samples[static_cast<std::size_t>(i)].subject);
        CHECK(test_subjects.size() == 1);
        for (const auto& s : test_subjects) CHECK(train_subjects.count(s) == 0);
    }
    CHECK(pooled == ds.size()); // folds partition the dataset

    const auto holdout = split_protocol(ds, SplitMode::HoldoutSubjects, 0.34, 1);
    REQUIRE(holdout.size() == 1);
    CHECK(holdout[0].train_indices.size() + holdout[0].test_indices.size() == ds.size());

    const Dataset single = make_stripes_dataset(10, 8, 1, 5);
    CHECK_THROWS(split_protocol(single, SplitMode::Loso, 0.25, 1));
}

TEST_CASE("protocol evaluation reports per-fold and aggregate metrics") {
    const Dataset ds = make_stripes_dataset(24, 8, 3, 6);
    NetworkConfig cfg;
    cfg.genotype = sample_genotype(6);
    cfg.n_cells = 2;
    cfg.init_channels = 4;
    cfg.num_classes = 2;
    cfg.in_channels = 1;
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 8;

    const ProtocolResult result =
        evaluate_protocol(ds, cfg, tcfg, SplitMode::Loso, 0.25, 1, /*fps_trials=*/3);
    REQUIRE(result.fold_metrics.size() == 3);
    std::int64_t pooled_total = 0;
    for (const auto& row : result.pooled.confusion)
        for (std::int64_t v : row) pooled_total += v;
    CHECK(pooled_total == static_cast<std::int64_t>(ds.size()));
    CHECK(result.fold_metrics[0].fps > 0.0);
    CHECK(result.fold_metrics[0].param_count > 0);

    const nlohmann::json j = result.to_json();
    REQUIRE(j.at("folds").size() == 3);
    CHECK(j.at("aggregate").contains("mean_accuracy"));
    CHECK(j.at("aggregate").contains("accuracy")); // pooled
}

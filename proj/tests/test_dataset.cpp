#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "nascell/dataset.hpp"
#include "nascell/run_config.hpp"

using namespace nascell;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_gray_pgm(const fs::path& p, int hw, double value) {
    Image img(hw, hw, 1);
    std::fill(img.pix.begin(), img.pix.end(), value);
    write_image(p.string(), img);
}

} // namespace

TEST_CASE("stripes generator is balanced and bounded") {
    const Dataset ds = make_stripes_dataset(200, 16, 4, 1);
    CHECK(ds.size() == 200);
    CHECK(ds.subjects().size() == 4);
    CHECK(ds.num_classes() == 2);
    int label_counts[2] = {0, 0};
    for (const auto& s : ds.samples) {
        ++label_counts[s.label];
        for (double v : s.input.data()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK(label_counts[0] == 100);
    CHECK(label_counts[1] == 100);

    // deterministic generation
    const Dataset again = make_stripes_dataset(200, 16, 4, 1);
    CHECK(again.samples[17].input.data() == ds.samples[17].input.data());
}

TEST_CASE("ingest counts a macro-style image tree") {
    TempDir tmp("nascell_ingest_macro");
    for (const std::string subject : {"s0", "s1"})
        for (const std::string cls : {"happy", "sad"})
            for (int i = 0; i < 3; ++i)
                write_gray_pgm(
                    (fs::create_directories(tmp.path / subject / cls),
                     tmp.path / subject / cls / ("img" + std::to_string(i) + ".pgm")),
                    6, 0.25 * i);

    const DatasetManifest m = ingest(tmp.path.string(), {"happy", "sad"});
    CHECK(m.size() == 12);
    CHECK(m.kind == SampleKind::Image);
    CHECK(m.subjects() == std::vector<std::string>{"s0", "s1"});

    // idempotence: two scans produce identical manifests
    const DatasetManifest m2 = ingest(tmp.path.string(), {"happy", "sad"});
    REQUIRE(m2.size() == m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(m2.entries[i].subject == m.entries[i].subject);
        CHECK(m2.entries[i].label == m.entries[i].label);
        CHECK(m2.entries[i].paths == m.entries[i].paths);
    }

    const Dataset ds = load_dataset(m);
    CHECK(ds.size() == 12);
    CHECK(ds.channels == 1);
    CHECK(ds.height == 6);
}

TEST_CASE("ingest flags video layouts with ordered frames") {
    TempDir tmp("nascell_ingest_micro");
    for (const std::string subject : {"s0", "s1"}) {
        const fs::path clip = tmp.path / subject / "pos" / "clip0";
        fs::create_directories(clip);
        for (int f = 0; f < 5; ++f)
            write_gray_pgm(clip / ("f" + std::to_string(f) + ".pgm"), 5, 0.1 + 0.15 * f);
    }
    const DatasetManifest m = ingest(tmp.path.string(), {"pos"});
    CHECK(m.kind == SampleKind::Video);
    REQUIRE(m.size() == 2);
    CHECK(m.entries[0].paths.size() == 5); // q = 5 per sample

    const Dataset ds = load_dataset(m);
    CHECK(ds.size() == 2);
    for (double v : ds.samples[0].input.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("ingest error diagnostics are distinct") {
    TempDir tmp("nascell_ingest_bad");

    CHECK_THROWS_WITH(ingest((tmp.path / "nowhere").string(), {"a"}),
                      Catch::Matchers::ContainsSubstring("root not found"));

    fs::create_directories(tmp.path / "s0" / "happy");
    CHECK_THROWS_WITH(ingest(tmp.path.string(), {"happy"}),
                      Catch::Matchers::ContainsSubstring("empty class"));

    write_gray_pgm(tmp.path / "s0" / "happy" / "a.pgm", 4, 0.5);
    CHECK_THROWS_WITH(ingest(tmp.path.string(), {"sad"}),
                      Catch::Matchers::ContainsSubstring("not in the declared class table"));

    std::ofstream(tmp.path / "s0" / "happy" / "b.jpg") << "not a pnm";
    CHECK_THROWS_WITH(ingest(tmp.path.string(), {"happy"}),
                      Catch::Matchers::ContainsSubstring("unknown file type"));
}

TEST_CASE("mixed image and video samples are rejected") {
    TempDir tmp("nascell_ingest_mixed");
    write_gray_pgm((fs::create_directories(tmp.path / "s0" / "a"), tmp.path / "s0" / "a" / "x.pgm"), 4, 0.5);
    const fs::path clip = tmp.path / "s1" / "a" / "clip";
    fs::create_directories(clip);
    write_gray_pgm(clip / "f0.pgm", 4, 0.5);
    CHECK_THROWS_WITH(ingest(tmp.path.string(), {"a"}),
                      Catch::Matchers::ContainsSubstring("mixed"));
}

TEST_CASE("heterogeneous sample shapes are rejected at load") {
    TempDir tmp("nascell_ingest_shapes");
    write_gray_pgm((fs::create_directories(tmp.path / "s0" / "a"), tmp.path / "s0" / "a" / "x.pgm"), 4, 0.5);
    write_gray_pgm((fs::create_directories(tmp.path / "s1" / "a"), tmp.path / "s1" / "a" / "y.pgm"), 5, 0.5);
    const DatasetManifest m = ingest(tmp.path.string(), {"a"});
    CHECK_THROWS_AS(load_dataset(m), DataError);
}

TEST_CASE("dataset round trip through the PGM tree writer") {
    TempDir tmp("nascell_roundtrip");
    const Dataset ds = make_stripes_dataset(24, 8, 3, 5);
    write_dataset_pgm(ds, tmp.path.string());
    const Dataset loaded = load_dataset(ingest(tmp.path.string(), ds.class_names));
    CHECK(loaded.size() == ds.size());
    CHECK(loaded.subjects() == ds.subjects());
    CHECK(loaded.height == 8);
    // 8-bit quantization: every reloaded pixel within half a step
    for (double v : loaded.samples[0].input.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("epoch batches cover every index exactly once") {
    Rng rng(1);
    std::vector<int> indices{0, 1, 2, 3, 4, 5, 6};
    const auto batches = make_epoch_batches(indices, 3, rng);
    REQUIRE(batches.size() == 3);
    CHECK(batches.back().size() == 1);
    std::vector<int> seen;
    for (const auto& b : batches) seen.insert(seen.end(), b.begin(), b.end());
    std::sort(seen.begin(), seen.end());
    CHECK(seen == indices);

    Rng rng2(1);
    const auto batches2 = make_epoch_batches(indices, 3, rng2);
    CHECK(batches2 == batches); // same seed, same order
}

TEST_CASE("make_batch stacks samples with labels") {
    const Dataset ds = make_stripes_dataset(6, 4, 2, 8);
    auto [x, labels] = make_batch(ds, {0, 3, 5});
    CHECK(x.shape() == Shape{3, 1, 4, 4});
    CHECK(labels.size() == 3);
    CHECK(std::equal(ds.samples[3].input.data().begin(), ds.samples[3].input.data().end(),
                     x.data().begin() + 16));
}

TEST_CASE("run config: defaults, file overlay, strictness") {
    RunConfig cfg;
    CHECK(cfg.cells == 5);
    CHECK(cfg.nodes == 7);
    CHECK(cfg.search_epochs == 50);
    CHECK(cfg.train_epochs == 70);
    CHECK(cfg.batch_size == 16);
    CHECK(cfg.lr == 0.007);
    CHECK(cfg.momentum == 0.9);
    CHECK(cfg.weight_decay == 3e-4);
    CHECK_NOTHROW(cfg.validate());

    TempDir tmp("nascell_cfg");
    {
        std::ofstream out(tmp.path / "cfg.json");
        out << R"({"seed": 9, "cells": 8, "classes": ["a","b","c"], "protocol": "loso"})";
    }
    const RunConfig loaded = RunConfig::from_file((tmp.path / "cfg.json").string());
    CHECK(loaded.seed == 9);
    CHECK(loaded.cells == 8);
    CHECK(loaded.nodes == 7); // untouched default
    CHECK(loaded.classes == std::vector<std::string>{"a", "b", "c"});
    CHECK(loaded.protocol == "loso");

    // lossless round trip through the flat schema
    RunConfig reparsed;
    reparsed.apply_json(nlohmann::json::parse(loaded.to_json().dump()));
    CHECK(reparsed.to_json() == loaded.to_json());

    {
        std::ofstream out(tmp.path / "bad_key.json");
        out << R"({"cellz": 8})";
    }
    CHECK_THROWS_AS(RunConfig::from_file((tmp.path / "bad_key.json").string()), ConfigError);
    {
        std::ofstream out(tmp.path / "bad_value.json");
        out << R"({"cells": "eight"})";
    }
    CHECK_THROWS_AS(RunConfig::from_file((tmp.path / "bad_value.json").string()), ConfigError);
    {
        std::ofstream out(tmp.path / "broken.json");
        out << "{ not json";
    }
    CHECK_THROWS_AS(RunConfig::from_file((tmp.path / "broken.json").string()), ConfigError);

    RunConfig invalid;
    invalid.protocol = "bootstrap";
    CHECK_THROWS_AS(invalid.validate(), ConfigError);
    invalid.protocol = "loso";
    invalid.holdout_ratio = 1.5;
    CHECK_THROWS_AS(invalid.validate(), ConfigError);
}

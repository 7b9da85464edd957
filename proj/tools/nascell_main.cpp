// Command-line pipeline: dynamic-image preprocessing, architecture search,
// genotype training, protocol evaluation, and parameter accounting.
//
// Exit codes: 0 success, 2 malformed configuration, 3 dataset error,
// 4 numerical abort. Every error path prints a single machine-parseable
// line: "error: <category>: <message>".

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "nascell/nascell.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliOptions {
    std::string config_path;
    std::string data_root;
    std::string genotype_path;
    std::string in_dir;
    std::string out_file;
    std::vector<std::string> classes;
    int num_classes = 0;
    int in_channels = 1;
    int input_hw = 0;
    std::uint64_t seed = 0;
    int cells = 0, nodes = 0, channels = 0, epochs = 0, batch_size = 0;
    std::string protocol;
    std::string out_dir;
    double holdout_ratio = 0.0;
    int fps_trials = 100;
};

bool flag_given(const CLI::App* sub, const std::string& name) {
    const CLI::Option* o = sub->get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
}

// Defaults < config file < flags.
nascell::RunConfig resolve_config(const CLI::App* sub, const CliOptions& opt) {
    nascell::RunConfig cfg;
    if (flag_given(sub, "--config")) cfg = nascell::RunConfig::from_file(opt.config_path);
    if (flag_given(sub, "--seed")) cfg.seed = opt.seed;
    if (flag_given(sub, "--cells")) cfg.cells = opt.cells;
    if (flag_given(sub, "--nodes")) cfg.nodes = opt.nodes;
    if (flag_given(sub, "--channels")) cfg.channels = opt.channels;
    if (flag_given(sub, "--epochs")) {
        cfg.search_epochs = opt.epochs;
        cfg.train_epochs = opt.epochs;
    }
    if (flag_given(sub, "--batch-size")) cfg.batch_size = opt.batch_size;
    if (flag_given(sub, "--protocol")) cfg.protocol = opt.protocol;
    if (flag_given(sub, "--holdout-ratio")) cfg.holdout_ratio = opt.holdout_ratio;
    if (flag_given(sub, "--classes")) cfg.classes = opt.classes;
    if (flag_given(sub, "--out")) cfg.out_dir = opt.out_dir;
    cfg.validate();
    return cfg;
}

nascell::Dataset load_data(const std::string& root, const std::vector<std::string>& classes) {
    if (classes.empty())
        throw nascell::ConfigError("a class table is required (config 'classes' or --classes)");
    return nascell::load_dataset(nascell::ingest(root, classes));
}

int cmd_dynimg(const CliOptions& opt) {
    nascell::FrameSequence seq;
    if (!fs::is_directory(opt.in_dir))
        throw nascell::DataError("frame directory not found: " + opt.in_dir);
    std::vector<fs::path> frames;
    for (const auto& e : fs::directory_iterator(opt.in_dir)) frames.push_back(e.path());
    std::sort(frames.begin(), frames.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    for (const auto& f : frames) seq.frames.push_back(nascell::read_image(f.string()));
    if (seq.frames.empty()) throw nascell::DataError("no frames in " + opt.in_dir);
    const nascell::Image out = nascell::normalize_for_display(nascell::dynamic_image(seq));
    nascell::write_image(opt.out_file, out);
    std::cout << "dynimg: " << seq.q() << " frames -> " << opt.out_file << "\n";
    return 0;
}

int cmd_search(const CLI::App* sub, const CliOptions& opt) {
    const nascell::RunConfig cfg = resolve_config(sub, opt);
    const nascell::Dataset ds = load_data(opt.data_root, cfg.classes);
    fs::create_directories(cfg.out_dir);

    const nascell::SearchResult result = nascell::run_search(cfg.search_config(), ds, cfg.out_dir);
    nascell::write_genotype_json((fs::path(cfg.out_dir) / "genotype.json").string(), result.genotype);
    {
        std::ofstream cfg_out(fs::path(cfg.out_dir) / "run_config.json");
        cfg_out << cfg.to_json().dump(2) << "\n";
    }
    std::cout << "search: init val loss " << result.init_val_loss << "\n";
    for (const auto& m : result.history)
        std::cout << "search: epoch " << m.epoch << " train_loss " << m.train_loss << " val_loss "
                  << m.val_loss << " lr " << m.lr << "\n";
    std::cout << "search: wrote " << (fs::path(cfg.out_dir) / "genotype.json").string() << "\n";
    return 0;
}

int cmd_train(const CLI::App* sub, const CliOptions& opt) {
    const nascell::RunConfig cfg = resolve_config(sub, opt);
    const nascell::Dataset ds = load_data(opt.data_root, cfg.classes);
    const nascell::Genotype genotype = nascell::read_genotype_json(opt.genotype_path);
    fs::create_directories(cfg.out_dir);

    nascell::NetworkConfig ncfg;
    ncfg.genotype = genotype;
    ncfg.n_cells = cfg.cells;
    ncfg.init_channels = cfg.channels;
    ncfg.num_classes = ds.num_classes();
    ncfg.in_channels = ds.channels;
    ncfg.input_hw = ds.height;

    nascell::Network net(ncfg, cfg.seed);
    const std::string ckpt = (fs::path(cfg.out_dir) / "model_checkpoint.bin").string();
    const auto history = nascell::train_model(net, ds, ds.all_indices(), cfg.train_config(), ckpt);

    std::ofstream hist(fs::path(cfg.out_dir) / "train_history.ndjson", std::ios::trunc);
    for (const auto& h : history) {
        nlohmann::ordered_json rec;
        rec["epoch"] = h.epoch;
        rec["loss"] = h.loss;
        rec["accuracy"] = h.accuracy;
        rec["lr"] = h.lr;
        hist << rec.dump() << "\n";
        std::cout << "train: epoch " << h.epoch << " loss " << h.loss << " acc " << h.accuracy << "\n";
    }
    std::cout << "train: wrote " << ckpt << " (" << net.param_count() << " params)\n";
    return 0;
}

int cmd_eval(const CLI::App* sub, const CliOptions& opt) {
    const nascell::RunConfig cfg = resolve_config(sub, opt);
    const nascell::Dataset ds = load_data(opt.data_root, cfg.classes);
    const nascell::Genotype genotype = nascell::read_genotype_json(opt.genotype_path);
    fs::create_directories(cfg.out_dir);

    nascell::NetworkConfig ncfg;
    ncfg.genotype = genotype;
    ncfg.n_cells = cfg.cells;
    ncfg.init_channels = cfg.channels;
    ncfg.num_classes = ds.num_classes();
    ncfg.in_channels = ds.channels;
    ncfg.input_hw = ds.height;

    const auto mode = nascell::split_mode_from_string(cfg.protocol);
    const auto result = nascell::evaluate_protocol(ds, ncfg, cfg.train_config(), mode,
                                                   cfg.holdout_ratio, cfg.seed, opt.fps_trials);

    const std::string path = (fs::path(cfg.out_dir) / "metrics.json").string();
    std::ofstream out(path, std::ios::trunc);
    out << result.to_json().dump(2) << "\n";
    for (std::size_t i = 0; i < result.fold_metrics.size(); ++i)
        std::cout << "eval: fold " << i << " [" << result.folds[i].held_subjects << "] accuracy "
                  << result.fold_metrics[i].accuracy << " uar " << result.fold_metrics[i].uar << "\n";
    std::cout << "eval: mean accuracy " << result.mean_accuracy << " pooled accuracy "
              << result.pooled.accuracy << " -> " << path << "\n";
    return 0;
}

int cmd_params(const CLI::App* sub, const CliOptions& opt) {
    const nascell::RunConfig cfg = resolve_config(sub, opt);
    const nascell::Genotype genotype = nascell::read_genotype_json(opt.genotype_path);

    int num_classes = opt.num_classes;
    if (sub->count("--num-classes") == 0) {
        if (cfg.classes.empty())
            throw nascell::ConfigError("params needs --num-classes or a class table");
        num_classes = static_cast<int>(cfg.classes.size());
    }

    nascell::NetworkConfig ncfg;
    ncfg.genotype = genotype;
    ncfg.n_cells = cfg.cells;
    ncfg.init_channels = cfg.channels;
    ncfg.num_classes = num_classes;
    ncfg.in_channels = opt.in_channels;
    if (opt.input_hw > 0) ncfg.input_hw = opt.input_hw;

    nascell::Network net(ncfg, cfg.seed);
    std::cout << net.param_count() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentiable cell-based architecture search pipeline"};
    app.require_subcommand(1);
    CliOptions opt;

    auto add_common = [&](CLI::App* sub, bool with_data) {
        sub->add_option("--config", opt.config_path, "JSON run-config file (flags override it)");
        sub->add_option("--seed", opt.seed, "Master RNG seed");
        sub->add_option("--cells", opt.cells, "Number of stacked cells");
        sub->add_option("--nodes", opt.nodes, "Nodes per cell (2 inputs + intermediates + output)");
        sub->add_option("--channels", opt.channels, "Initial channel width");
        sub->add_option("--epochs", opt.epochs, "Epoch count for this command");
        sub->add_option("--batch-size", opt.batch_size, "Mini-batch size");
        sub->add_option("--classes", opt.classes, "Ordered class-name table");
        sub->add_option("--out", opt.out_dir, "Output directory");
        if (with_data)
            sub->add_option("--data", opt.data_root, "Dataset root (<subject>/<class>/<sample>)")
                ->required();
    };

    CLI::App* dynimg = app.add_subcommand("dynimg", "Collapse an ordered frame directory into a dynamic image");
    dynimg->add_option("--in", opt.in_dir, "Directory of frames (lexicographic order)")->required();
    dynimg->add_option("--out", opt.out_file, "Output image file (PGM/PPM, maxval 255)")->required();

    CLI::App* search = app.add_subcommand("search", "Bilevel architecture search; emits genotype.json");
    add_common(search, true);

    CLI::App* train = app.add_subcommand("train", "Train a derived genotype on a dataset");
    add_common(train, true);
    train->add_option("--genotype", opt.genotype_path, "genotype.json from a search")->required();

    CLI::App* eval = app.add_subcommand("eval", "Subject-independent protocol evaluation");
    add_common(eval, true);
    eval->add_option("--genotype", opt.genotype_path, "genotype.json from a search")->required();
    eval->add_option("--protocol", opt.protocol, "holdout or loso");
    eval->add_option("--holdout-ratio", opt.holdout_ratio, "Held-out subject fraction for holdout");
    eval->add_option("--fps-trials", opt.fps_trials, "Timing trials for the fps measurement");

    CLI::App* params = app.add_subcommand("params", "Print the exact learnable-scalar count for a genotype");
    add_common(params, false);
    params->add_option("--genotype", opt.genotype_path, "genotype.json")->required();
    params->add_option("--num-classes", opt.num_classes, "Class count (overrides class table)");
    params->add_option("--in-channels", opt.in_channels, "Input image channels");
    params->add_option("--input-hw", opt.input_hw, "Nominal input size (informational)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    }

    try {
        if (app.got_subcommand(dynimg)) return cmd_dynimg(opt);
        if (app.got_subcommand(search)) return cmd_search(search, opt);
        if (app.got_subcommand(train)) return cmd_train(train, opt);
        if (app.got_subcommand(eval)) return cmd_eval(eval, opt);
        if (app.got_subcommand(params)) return cmd_params(params, opt);
    } catch (const nascell::ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const nascell::DataError& e) {
        std::cerr << "error: dataset: " << e.what() << "\n";
        return 3;
    } catch (const nascell::NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

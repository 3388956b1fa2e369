// sparsesoup command-line interface.
//
//   sparsesoup pretrain --config cfg.json --out dir [--seed N]
//   sparsesoup run      --config cfg.json --out dir [--seed N] [--method name] [--parallel N]
//   sparsesoup eval     --config cfg.json --checkpoint file.ckpt
//   sparsesoup sweep    --config cfg.json --out dir --grid sparsity|epochs|hyper [--seed N] [--parallel N]
//   sparsesoup report   --in dir [--in dir2 ...] [--out summary.csv]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sparsesoup/sparsesoup.hpp"

namespace {

using namespace sparsesoup;

ExperimentConfig load_and_override(const std::string& config_path, const std::optional<std::string>& method,
                                   const std::optional<uint64_t>& seed, const std::optional<std::string>& out_dir) {
    ExperimentConfig cfg = load_config(config_path);
    if (method) cfg.method = method_from_string(*method);
    if (seed) cfg.seeds = {*seed};
    if (out_dir) cfg.output_dir = *out_dir;
    return cfg;
}

int cmd_pretrain(const ExperimentConfig& cfg, unsigned parallel) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    const DataBundle data = build_datasets(cfg);
    for (uint64_t seed : cfg.seeds) {
        RunContext ctx = make_run_context(cfg, data, seed, parallel);
        const ModelState model = pretrain(ctx);
        const Mask mask = full_mask(model);
        const std::string path =
            (fs::path(cfg.output_dir) / ("pretrained-" + config_hash_hex(cfg).substr(0, 8) + "-s" +
                                         std::to_string(seed) + ".ckpt"))
                .string();
        save_checkpoint(model, mask, CheckpointMeta{config_hash_hex(cfg), 0, -1, seed}, path);
        const auto test = evaluate(model, data.test);
        std::cout << path << " test_acc=" << test.accuracy << " test_loss=" << test.loss << "\n";
    }
    return 0;
}

int cmd_run(const ExperimentConfig& cfg, unsigned parallel) {
    const RunResult result = run_experiment(cfg, cfg.output_dir, parallel, true);
    std::cout << "wrote " << result.rows.size() << " metric rows to "
              << (std::filesystem::path(cfg.output_dir) / "metrics.csv").string() << "\n";
    for (const auto& ckpt : result.final_checkpoints) std::cout << ckpt << "\n";
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint) {
    std::cout << eval_checkpoint(checkpoint, cfg).dump(2) << "\n";
    return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& grid, uint64_t seed, unsigned parallel) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    std::string csv, name;
    if (grid == "sparsity") {
        csv = sweep_sparsity(cfg, seed, parallel);
        name = "sweep_sparsity.csv";
    } else if (grid == "epochs") {
        csv = sweep_epochs(cfg, seed, parallel);
        name = "sweep_epochs.csv";
    } else if (grid == "hyper") {
        csv = sweep_hyper(cfg, seed, parallel);
        name = "sweep_hyper.csv";
    } else {
        throw ConfigError("sweep: grid must be sparsity, epochs or hyper");
    }
    const std::string path = (fs::path(cfg.output_dir) / name).string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << csv;
    std::cout << path << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::optional<std::string>& out_path) {
    const std::string summary = report_from_dirs(inputs);
    if (out_path) {
        std::ofstream out(*out_path);
        if (!out) throw IoError("cannot write " + *out_path);
        out << summary;
        std::cout << *out_path << "\n";
    } else {
        std::cout << summary;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse model training with per-phase replica averaging"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, grid = "sparsity";
    std::optional<std::string> method, out_dir, report_out;
    std::optional<uint64_t> seed;
    unsigned parallel = 1;
    std::vector<std::string> report_inputs;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", config_path, "experiment config (json)");
        if (needs_config) opt->required();
        sub->add_option("--seed", seed, "override the config seed list with one seed");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--parallel", parallel, "max worker threads (also capped by SPARSESOUP_THREADS)");
        sub->add_option("--method", method, "override the configured method");
    };

    auto* sub_pretrain = app.add_subcommand("pretrain", "train the dense base model and store its checkpoint");
    add_common(sub_pretrain, true);
    auto* sub_run = app.add_subcommand("run", "execute the configured method; write metrics.csv and checkpoints");
    add_common(sub_run, true);
    auto* sub_eval = app.add_subcommand("eval", "evaluate a stored checkpoint on the configured datasets");
    add_common(sub_eval, true);
    sub_eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    auto* sub_sweep = app.add_subcommand("sweep", "run one of the study grids");
    add_common(sub_sweep, true);
    sub_sweep->add_option("--grid", grid, "sparsity | epochs | hyper");
    auto* sub_report = app.add_subcommand("report", "aggregate metrics.csv files into a summary table");
    sub_report->add_option("--in", report_inputs, "run directory or metrics.csv (repeatable)")->required();
    sub_report->add_option("--out", report_out, "summary output path (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (sub_report->parsed()) return cmd_report(report_inputs, report_out);
        const ExperimentConfig cfg = load_and_override(config_path, method, seed, out_dir);
        if (sub_pretrain->parsed()) return cmd_pretrain(cfg, parallel);
        if (sub_run->parsed()) return cmd_run(cfg, parallel);
        if (sub_eval->parsed()) return cmd_eval(cfg, checkpoint);
        if (sub_sweep->parsed()) return cmd_sweep(cfg, grid, cfg.seeds.front(), parallel);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const sparsesoup::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

#pragma once

// Experiment execution: method dispatch, checkpoint/CSV emission, evaluation
// of stored checkpoints, and the sweep grids (sparsity, retrain-length,
// hyperparameter pairs).

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sparsesoup/checkpoint.hpp"
#include "sparsesoup/config.hpp"
#include "sparsesoup/metrics.hpp"
#include "sparsesoup/orchestrator.hpp"
#include "sparsesoup/report.hpp"

namespace sparsesoup {

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string make_run_id(const ExperimentConfig& cfg, uint64_t seed) {
    return std::string(to_string(cfg.method)) + "-" + config_hash_hex(cfg).substr(0, 8) + "-s" + std::to_string(seed);
}

/// Dispatches the configured method. For bimp/gmp/dpf, m >= 2 enables the
/// per-segment fork-and-merge extension.
inline std::pair<ModelState, RunRecord> execute_method(const ExperimentConfig& cfg, const RunContext& ctx) {
    const auto plan = make_plan(cfg.target_sparsity, cfg.phases);
    switch (cfg.method) {
        case MethodKind::sms: {
            PhasePlan pp = make_phase_plan(cfg.target_sparsity, cfg.phases, cfg.m, cfg.merge, cfg.pruning);
            if (!cfg.replicas.empty()) pp.replicas.assign(cfg.phases, cfg.replicas);
            return sms_run(pretrain(ctx), pp, ctx);
        }
        case MethodKind::imp:
            return imp_run(pretrain(ctx), plan, ImpVariant::standard, 1, ctx, cfg.pruning);
        case MethodKind::imp_mx:
            return imp_run(pretrain(ctx), plan, ImpVariant::m_times, cfg.m, ctx, cfg.pruning);
        case MethodKind::imp_mphases:
            return imp_run(pretrain(ctx), plan, ImpVariant::m_phases, cfg.m, ctx, cfg.pruning);
        case MethodKind::imp_reprune:
            return imp_reprune_run(pretrain(ctx), plan, cfg.m, ctx, cfg.pruning);
        case MethodKind::bimp:
        case MethodKind::gmp:
        case MethodKind::dpf:
            return dst_run(cfg.method, cfg.m >= 2, cfg.m, cfg.target_sparsity, ctx);
    }
    throw ConfigError("execute_method: unhandled method");
}

struct RunResult {
    std::vector<MetricRow> rows;
    std::vector<std::string> final_checkpoints;  // one per seed
};

inline json record_to_json(const RunRecord& record) {
    json phases = json::array();
    for (const auto& p : record.phases) {
        json jp;
        jp["phase"] = p.phase;
        jp["target_sparsity"] = p.target_sparsity;
        jp["recorded_sparsity"] = p.recorded_sparsity;
        jp["m"] = p.m;
        jp["retrain_epochs_total"] = p.retrain_epochs_total;
        jp["candidate_val"] = p.candidate_val;
        jp["candidate_test"] = p.candidate_test;
        if (!p.candidate_ood.empty()) jp["candidate_ood"] = p.candidate_ood;
        jp["best_val"] = p.best_val;
        jp["mean_val"] = p.mean_val;
        jp["best_test"] = p.best_test;
        jp["mean_test"] = p.mean_test;
        jp["soup_val"] = p.soup_val;
        jp["soup_test"] = p.soup_test;
        if (p.has_ood) jp["soup_ood"] = p.soup_ood;
        jp["dense_flops"] = p.flops.dense_flops;
        jp["sparse_flops"] = p.flops.sparse_flops;
        jp["speedup"] = p.flops.speedup();
        if (p.l2) jp["l2"] = {{"mean", p.l2->mean}, {"max", p.l2->max}};
        jp["merge"] = {{"pre_merge_sparsities", p.merge.pre_merge_sparsities},
                       {"post_merge_sparsity", p.merge.post_merge_sparsity},
                       {"masks_identical", p.merge.masks_identical},
                       {"soup_val_accuracy", p.merge.soup_val_accuracy}};
        if (p.soup_subgroups) {
            json rec = json::object();
            for (const auto& [gid, r] : p.soup_subgroups->recall) rec[std::to_string(gid)] = r;
            jp["subgroup_recall"] = rec;
            jp["balanced_accuracy"] = p.soup_subgroups->balanced_accuracy;
        }
        jp["replica_masks_identical"] = p.replica_masks_identical;
        phases.push_back(jp);
    }
    return json{{"phases", phases}};
}

/// Runs the configured method for every seed, writing metrics.csv, per-phase
/// checkpoints, run-record JSONs and the resolved config into out_dir.
inline RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, unsigned parallel,
                                bool write_files = true) {
    namespace fs = std::filesystem;
    if (write_files) fs::create_directories(out_dir);
    const DataBundle data = build_datasets(cfg);
    const std::string stamp = utc_timestamp();
    const std::string hash = config_hash_hex(cfg);

    RunResult result;
    for (uint64_t seed : cfg.seeds) {
        RunContext ctx = make_run_context(cfg, data, seed, parallel);
        const std::string run_id = make_run_id(cfg, seed);
        std::vector<std::string> checkpoint_paths;
        if (write_files) {
            ctx.sinks.on_model = [&](uint32_t phase, int32_t replica, const ModelState& m, const Mask& mask) {
                CheckpointMeta meta{hash, phase, replica, seed};
                const std::string entity = replica < 0 ? "soup" : "replica" + std::to_string(replica);
                const std::string path =
                    (fs::path(out_dir) / (run_id + "_p" + std::to_string(phase) + "_" + entity + ".ckpt")).string();
                save_checkpoint(m, mask, meta, path);
                checkpoint_paths.push_back(path);
            };
        }
        auto [model, record] = execute_method(cfg, ctx);
        auto rows = rows_from_record(record, run_id, to_string(cfg.method), seed, stamp);
        result.rows.insert(result.rows.end(), rows.begin(), rows.end());

        if (write_files) {
            const std::string final_path = (fs::path(out_dir) / (run_id + "_final.ckpt")).string();
            const Mask final_mask = mask_from_zeros(model);
            save_checkpoint(model, final_mask, CheckpointMeta{hash, cfg.phases, -1, seed}, final_path);
            result.final_checkpoints.push_back(final_path);
            checkpoint_paths.push_back(final_path);
            json rec_json = record_to_json(record);
            rec_json["checkpoints"] = checkpoint_paths;
            std::ofstream rec_out((fs::path(out_dir) / ("record_" + run_id + ".json")).string());
            rec_out << rec_json.dump(2) << '\n';
        }
    }
    if (write_files) {
        write_metric_csv((fs::path(out_dir) / "metrics.csv").string(), result.rows, false);
        std::ofstream cfg_out((fs::path(out_dir) / "config.json").string());
        cfg_out << config_to_json(cfg).dump(2) << '\n';
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint evaluation
// ---------------------------------------------------------------------------

inline json eval_checkpoint(const std::string& ckpt_path, const ExperimentConfig& cfg) {
    const DataBundle data = build_datasets(cfg);
    LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    ModelState model = recompute_bn(std::move(ck.model), data.train, 256);
    json out;
    out["checkpoint"] = ckpt_path;
    const auto val = evaluate(model, data.val);
    const auto test = evaluate(model, data.test);
    out["val_acc"] = val.accuracy;
    out["test_acc"] = test.accuracy;
    out["test_loss"] = test.loss;
    out["sparsity"] = sparsity_of(ck.mask);
    const auto flops = count_flops(model, ck.mask);
    out["speedup"] = flops.speedup();
    out["dense_flops"] = flops.dense_flops;
    out["sparse_flops"] = flops.sparse_flops;
    if (cfg.ood.enabled) out["ood_acc"] = ood_accuracy(model, data.test, cfg.ood.kinds);
    if (data.test.has_subgroups()) {
        const auto sub = subgroup_recall(model, data.test);
        json rec = json::object();
        for (const auto& [gid, r] : sub.recall) rec[std::to_string(gid)] = r;
        out["subgroup_recall"] = rec;
        out["balanced_accuracy"] = sub.balanced_accuracy;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

namespace detail {

struct SweepBase {
    const ExperimentConfig& cfg;
    DataBundle data;
    RunContext ctx;
    ModelState pretrained;

    SweepBase(const ExperimentConfig& c, uint64_t seed, unsigned parallel)
        : cfg(c), data(build_datasets(c)), ctx(make_run_context(c, data, seed, parallel)), pretrained(pretrain(ctx)) {}
};

// Trains one replica from a pruned parent under a replica spec.
inline ModelState train_replica(const RunContext& ctx, const ModelState& pruned, const Mask& mask,
                                const ReplicaSpec& rs, float drop, uint32_t phase_number, uint32_t index) {
    const uint64_t seed = seed_mix(rs.seed.value_or(ctx.base_seed), phase_number, index);
    const RetrainSchedule sched = build_retrain_schedule(ctx, rs, drop);
    OptimizerState opt = make_optimizer(pruned, ctx.momentum, rs.weight_decay.value_or(ctx.weight_decay));
    return train(pruned, mask, std::move(opt), *ctx.train_data, sched, sched.T_rt, ctx.batch_size, seed);
}

}  // namespace detail

/// One-shot prune to each sparsity in the grid, retrain m candidates, and
/// compare uniform/greedy soups against the candidates.
/// Columns: sparsity,m,uniform_test,greedy_test,best_test,mean_test,seed,timestamp
inline std::string sweep_sparsity(const ExperimentConfig& cfg, uint64_t seed, unsigned parallel) {
    detail::SweepBase base(cfg, seed, parallel);
    const std::string stamp = utc_timestamp();
    std::ostringstream out;
    out << "sparsity,m,uniform_test,greedy_test,best_test,mean_test,seed,timestamp\n";
    for (double s : cfg.sweep.sparsity_grid) {
        const Mask prev = mask_from_zeros(base.pretrained);
        const Mask mask = magnitude_mask(base.pretrained, s, prev);
        const ModelState pruned = apply_mask(base.pretrained, mask);
        const float drop = detail::pruning_drop(detail::val_accuracy_recomputed(base.pretrained, base.ctx),
                                                detail::val_accuracy_recomputed(pruned, base.ctx));
        std::vector<ModelState> cands(cfg.sweep.sparsity_m);
        std::vector<double> cand_test(cands.size());
        parallel_for_index(cands.size(), parallel, [&](std::size_t i) {
            cands[i] = detail::train_replica(base.ctx, pruned, mask, ReplicaSpec{}, drop, 1, static_cast<uint32_t>(i));
            cand_test[i] = evaluate(recompute_bn(cands[i], base.data.train, base.ctx.bn_batch), base.data.test).accuracy;
        });
        auto [usoup, urep] = uniform_soup(cands, base.data.train, base.data.val, base.ctx.bn_batch);
        auto [gsoup, recipe, grep] = greedy_soup(cands, base.data.val, base.data.train, base.ctx.bn_batch);
        double best = cand_test[0], mean = 0.0;
        for (double v : cand_test) {
            best = std::max(best, v);
            mean += v;
        }
        mean /= static_cast<double>(cand_test.size());
        out << detail::fmt_double(s) << ',' << cfg.sweep.sparsity_m << ','
            << detail::fmt_double(evaluate(usoup, base.data.test).accuracy) << ','
            << detail::fmt_double(evaluate(gsoup, base.data.test).accuracy) << ',' << detail::fmt_double(best) << ','
            << detail::fmt_double(mean) << ',' << seed << ',' << stamp << '\n';
    }
    return out.str();
}

/// Soup of m models trained k epochs vs a single model trained m*k epochs
/// (one-shot pruning at each sparsity in the grid).
/// Columns: retrain_epochs,sparsity,m,sms_soup_test,imp_mx_test,seed,timestamp
inline std::string sweep_epochs(const ExperimentConfig& cfg, uint64_t seed, unsigned parallel) {
    detail::SweepBase base(cfg, seed, parallel);
    const std::string stamp = utc_timestamp();
    std::ostringstream out;
    out << "retrain_epochs,sparsity,m,sms_soup_test,imp_mx_test,seed,timestamp\n";
    for (double s : cfg.sweep.epoch_sparsities) {
        const Mask mask = magnitude_mask(base.pretrained, s, mask_from_zeros(base.pretrained));
        const ModelState pruned = apply_mask(base.pretrained, mask);
        const float drop = detail::pruning_drop(detail::val_accuracy_recomputed(base.pretrained, base.ctx),
                                                detail::val_accuracy_recomputed(pruned, base.ctx));
        for (uint32_t k : cfg.sweep.epoch_grid) {
            std::vector<ModelState> cands(cfg.sweep.epoch_m);
            parallel_for_index(cands.size(), parallel, [&](std::size_t i) {
                ReplicaSpec rs;
                rs.retrain_epochs = k;
                cands[i] = detail::train_replica(base.ctx, pruned, mask, rs, drop, 1, static_cast<uint32_t>(i));
            });
            auto [soup, rep] = uniform_soup(cands, base.data.train, base.data.val, base.ctx.bn_batch);
            ReplicaSpec long_rs;
            long_rs.retrain_epochs = cfg.sweep.epoch_m * k;
            const ModelState long_model = recompute_bn(
                detail::train_replica(base.ctx, pruned, mask, long_rs, drop, 1, 0), base.data.train, base.ctx.bn_batch);
            out << k << ',' << detail::fmt_double(s) << ',' << cfg.sweep.epoch_m << ','
                << detail::fmt_double(evaluate(soup, base.data.test).accuracy) << ','
                << detail::fmt_double(evaluate(long_model, base.data.test).accuracy) << ',' << seed << ',' << stamp
                << '\n';
        }
    }
    return out.str();
}

/// Varies one hyperparameter axis at a time (random seed, weight decay,
/// retraining length, initial LR of a linear schedule) and averages all C(v,2)
/// pairs of the v variants.
/// Columns: axis,i,j,max_individual_test,pair_soup_test,seed,timestamp
inline std::string sweep_hyper(const ExperimentConfig& cfg, uint64_t seed, unsigned parallel) {
    detail::SweepBase base(cfg, seed, parallel);
    const std::string stamp = utc_timestamp();
    const uint32_t v = cfg.sweep.hyper_variants;

    const Mask mask = magnitude_mask(base.pretrained, cfg.sweep.hyper_sparsity, mask_from_zeros(base.pretrained));
    const ModelState pruned = apply_mask(base.pretrained, mask);
    const float drop = detail::pruning_drop(detail::val_accuracy_recomputed(base.pretrained, base.ctx),
                                            detail::val_accuracy_recomputed(pruned, base.ctx));

    RunContext ctx = base.ctx;
    ctx.retrain_epochs = cfg.sweep.hyper_epochs;

    const std::vector<std::string> axes = {"seed", "weight_decay", "retrain_epochs", "initial_lr"};
    std::ostringstream out;
    out << "axis,i,j,max_individual_test,pair_soup_test,seed,timestamp\n";
    for (const auto& axis : axes) {
        std::vector<ReplicaSpec> specs(v);
        for (uint32_t i = 0; i < v; ++i) {
            auto& rs = specs[i];
            if (axis == "seed") {
                rs.seed = seed_mix(seed, 0x6879706572ull, i);
            } else if (axis == "weight_decay") {
                const double f = v > 1 ? 0.5 + static_cast<double>(i) / (v - 1) : 1.0;
                rs.weight_decay = static_cast<float>(ctx.weight_decay * f);
            } else if (axis == "retrain_epochs") {
                rs.retrain_epochs = std::max<uint32_t>(1, cfg.sweep.hyper_epochs + i);
            } else {  // initial_lr: linear decay with varied starting value
                const double f = v > 1 ? 0.5 + static_cast<double>(i) / (v - 1) : 1.0;
                rs.schedule = ScheduleKind::LLR;
                rs.initial_lr = static_cast<float>(ctx.original.at_epoch(0) * f);
            }
        }
        std::vector<ModelState> variants(v);
        std::vector<double> test_acc(v);
        parallel_for_index(v, parallel, [&](std::size_t i) {
            // non-seed axes share one batch-order stream so only the studied
            // hyperparameter varies
            const uint32_t stream = axis == "seed" ? static_cast<uint32_t>(i) : 0;
            variants[i] = detail::train_replica(ctx, pruned, mask, specs[i], drop, 1, stream);
            test_acc[i] = evaluate(recompute_bn(variants[i], base.data.train, ctx.bn_batch), base.data.test).accuracy;
        });
        for (uint32_t i = 0; i < v; ++i)
            for (uint32_t j = i + 1; j < v; ++j) {
                const std::vector<ModelState> pair = {variants[i], variants[j]};
                auto [soup, rep] = uniform_soup(pair, base.data.train, base.data.val, ctx.bn_batch);
                out << axis << ',' << i << ',' << j << ',' << detail::fmt_double(std::max(test_acc[i], test_acc[j]))
                    << ',' << detail::fmt_double(evaluate(soup, base.data.test).accuracy) << ',' << seed << ','
                    << stamp << '\n';
            }
    }
    return out.str();
}

/// Aggregates metrics.csv files from the given directories into a
/// Table-shaped summary (mean +- std over seeds per method/phase/entity).
inline std::string report_from_dirs(const std::vector<std::string>& dirs) {
    namespace fs = std::filesystem;
    std::vector<MetricRow> rows;
    std::vector<std::string> files;
    for (const auto& d : dirs) {
        if (fs::is_regular_file(d)) {
            files.push_back(d);
            continue;
        }
        if (!fs::is_directory(d)) throw IoError("report: no such file or directory: " + d);
        for (const auto& entry : fs::directory_iterator(d))
            if (entry.is_regular_file() && entry.path().filename() == "metrics.csv") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("report: no metrics.csv found");
    for (const auto& f : files) {
        auto r = read_metric_csv(f);
        rows.insert(rows.end(), r.begin(), r.end());
    }
    return summarize_rows(std::move(rows));
}

}  // namespace sparsesoup

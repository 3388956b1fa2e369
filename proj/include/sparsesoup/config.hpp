#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsesoup/data.hpp"
#include "sparsesoup/errors.hpp"
#include "sparsesoup/orchestrator.hpp"

namespace sparsesoup {

using json = nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for '" + key + "'");
    }
}

template <typename T>
T require(const json& obj, const std::string& key, const std::string& where) {
    if (!obj.contains(key)) throw ConfigError("config: missing key '" + key + "' in " + where);
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: bad value for '" + key + "' in " + where);
    }
}

}  // namespace detail

struct DatasetConfig {
    std::string kind = "blobs";  // blobs | csv
    uint32_t num_classes = 10;
    uint32_t dim = 2;
    uint32_t n_per_class = 200;
    uint32_t test_n_per_class = 50;
    float spread = 1.0f;
    uint64_t seed = 42;
    std::optional<float> subgroup_skew;
    std::string train_path, test_path;  // csv kind
    float val_fraction = 0.1f;
};

struct PretrainConfig {
    uint32_t epochs = 30;
    uint32_t batch_size = 32;
    float lr = 0.1f;
    float final_lr = 0.0f;
    float weight_decay = 1e-4f;
    float momentum = 0.9f;
    std::vector<std::pair<uint32_t, float>> pieces;  // empty = linear decay
};

struct RetrainConfig {
    uint32_t epochs = 5;
    ScheduleKind schedule = ScheduleKind::ALLR;
    std::optional<uint32_t> batch_size;  // defaults to the pretraining batch size
};

struct DstConfig {
    uint32_t epochs = 0;
    uint32_t prune_events = 9;
    double final_event_frac = 1.0;
    uint32_t bimp_pretrain_epochs = 0;
    uint32_t bimp_cycles = 1;
};

struct OodConfig {
    bool enabled = true;
    std::vector<CorruptionKind> kinds = {CorruptionKind::gaussian_noise, CorruptionKind::uniform_noise,
                                         CorruptionKind::feature_dropout, CorruptionKind::affine_shift};
};

struct SweepConfig {
    std::vector<double> sparsity_grid = {0.5, 0.7, 0.8, 0.9, 0.95};
    uint32_t sparsity_m = 5;
    std::vector<uint32_t> epoch_grid = {1, 2, 5};
    std::vector<double> epoch_sparsities = {0.9, 0.95};
    uint32_t epoch_m = 3;
    uint32_t hyper_variants = 4;
    double hyper_sparsity = 0.7;
    uint32_t hyper_epochs = 3;
};

struct ExperimentConfig {
    std::string name = "exp";
    DatasetConfig dataset;
    ArchSpec arch{{2, 32, 32, 10}, true};
    PretrainConfig pretrain;
    MethodKind method = MethodKind::sms;
    double target_sparsity = 0.9;
    uint32_t phases = 3;
    uint32_t m = 3;
    MergeMethod merge = MergeMethod::uniform;
    PruningKind pruning = PruningKind::unstructured_global;
    RetrainConfig retrain;
    std::vector<ReplicaSpec> replicas;  // optional per-replica overrides; size m when given
    std::vector<uint64_t> seeds = {1};
    DstConfig dst;
    OodConfig ood;
    SweepConfig sweep;
    std::string output_dir = "out";
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

inline ExperimentConfig parse_config(const json& root) {
    ExperimentConfig cfg;
    detail::reject_unknown_keys(root, {"name", "dataset", "arch", "pretrain", "method", "target_sparsity", "phases",
                                       "m", "merge", "pruning", "retrain", "replicas", "seeds", "dst", "ood", "sweep",
                                       "output_dir"},
                                "config");
    cfg.name = detail::get_or<std::string>(root, "name", cfg.name);
    cfg.output_dir = detail::get_or<std::string>(root, "output_dir", cfg.output_dir);

    if (root.contains("dataset")) {
        const auto& d = root.at("dataset");
        detail::reject_unknown_keys(d, {"kind", "num_classes", "dim", "n_per_class", "test_n_per_class", "spread",
                                        "seed", "subgroup_skew", "train_path", "test_path", "val_fraction"},
                                    "dataset");
        cfg.dataset.kind = detail::get_or<std::string>(d, "kind", cfg.dataset.kind);
        if (cfg.dataset.kind != "blobs" && cfg.dataset.kind != "csv")
            throw ConfigError("config: dataset.kind must be 'blobs' or 'csv'");
        cfg.dataset.num_classes = detail::get_or<uint32_t>(d, "num_classes", cfg.dataset.num_classes);
        cfg.dataset.dim = detail::get_or<uint32_t>(d, "dim", cfg.dataset.dim);
        cfg.dataset.n_per_class = detail::get_or<uint32_t>(d, "n_per_class", cfg.dataset.n_per_class);
        cfg.dataset.test_n_per_class = detail::get_or<uint32_t>(d, "test_n_per_class", cfg.dataset.test_n_per_class);
        cfg.dataset.spread = detail::get_or<float>(d, "spread", cfg.dataset.spread);
        cfg.dataset.seed = detail::get_or<uint64_t>(d, "seed", cfg.dataset.seed);
        if (d.contains("subgroup_skew")) cfg.dataset.subgroup_skew = d.at("subgroup_skew").get<float>();
        cfg.dataset.train_path = detail::get_or<std::string>(d, "train_path", "");
        cfg.dataset.test_path = detail::get_or<std::string>(d, "test_path", "");
        cfg.dataset.val_fraction = detail::get_or<float>(d, "val_fraction", cfg.dataset.val_fraction);
        if (cfg.dataset.kind == "csv" && (cfg.dataset.train_path.empty() || cfg.dataset.test_path.empty()))
            throw ConfigError("config: csv dataset needs train_path and test_path");
    }

    if (root.contains("arch")) {
        const auto& a = root.at("arch");
        detail::reject_unknown_keys(a, {"layer_sizes", "batchnorm"}, "arch");
        cfg.arch.layer_sizes = detail::require<std::vector<uint32_t>>(a, "layer_sizes", "arch");
        cfg.arch.batchnorm = detail::get_or<bool>(a, "batchnorm", cfg.arch.batchnorm);
        cfg.arch.validate();
    }

    if (root.contains("pretrain")) {
        const auto& p = root.at("pretrain");
        detail::reject_unknown_keys(p, {"epochs", "batch_size", "lr", "final_lr", "weight_decay", "momentum",
                                        "schedule_pieces"},
                                    "pretrain");
        cfg.pretrain.epochs = detail::get_or<uint32_t>(p, "epochs", cfg.pretrain.epochs);
        cfg.pretrain.batch_size = detail::get_or<uint32_t>(p, "batch_size", cfg.pretrain.batch_size);
        cfg.pretrain.lr = detail::get_or<float>(p, "lr", cfg.pretrain.lr);
        cfg.pretrain.final_lr = detail::get_or<float>(p, "final_lr", cfg.pretrain.final_lr);
        cfg.pretrain.weight_decay = detail::get_or<float>(p, "weight_decay", cfg.pretrain.weight_decay);
        cfg.pretrain.momentum = detail::get_or<float>(p, "momentum", cfg.pretrain.momentum);
        if (p.contains("schedule_pieces")) {
            for (const auto& piece : p.at("schedule_pieces")) {
                if (!piece.is_array() || piece.size() != 2)
                    throw ConfigError("config: pretrain.schedule_pieces entries must be [last_epoch, lr]");
                cfg.pretrain.pieces.emplace_back(piece.at(0).get<uint32_t>(), piece.at(1).get<float>());
            }
        }
        if (cfg.pretrain.batch_size < 1) throw ConfigError("config: pretrain.batch_size must be >= 1");
    }

    if (root.contains("method")) cfg.method = method_from_string(root.at("method").get<std::string>());
    cfg.target_sparsity = detail::get_or<double>(root, "target_sparsity", cfg.target_sparsity);
    if (!(cfg.target_sparsity > 0.0 && cfg.target_sparsity < 1.0))
        throw ConfigError("config: target_sparsity must be in (0,1)");
    cfg.phases = detail::get_or<uint32_t>(root, "phases", cfg.phases);
    if (cfg.phases < 1) throw ConfigError("config: phases must be >= 1");
    cfg.m = detail::get_or<uint32_t>(root, "m", cfg.m);
    if (cfg.m < 1) throw ConfigError("config: m must be >= 1");
    if (root.contains("merge")) cfg.merge = merge_method_from_string(root.at("merge").get<std::string>());
    if (root.contains("pruning")) cfg.pruning = pruning_kind_from_string(root.at("pruning").get<std::string>());

    if (root.contains("retrain")) {
        const auto& r = root.at("retrain");
        detail::reject_unknown_keys(r, {"epochs", "schedule", "batch_size"}, "retrain");
        cfg.retrain.epochs = detail::get_or<uint32_t>(r, "epochs", cfg.retrain.epochs);
        if (cfg.retrain.epochs < 1) throw ConfigError("config: retrain.epochs must be >= 1");
        if (r.contains("schedule")) cfg.retrain.schedule = schedule_kind_from_string(r.at("schedule").get<std::string>());
        if (r.contains("batch_size")) cfg.retrain.batch_size = r.at("batch_size").get<uint32_t>();
    }

    if (root.contains("replicas")) {
        for (const auto& r : root.at("replicas")) {
            detail::reject_unknown_keys(r, {"seed", "weight_decay", "retrain_epochs", "schedule", "initial_lr"},
                                        "replicas[]");
            ReplicaSpec rs;
            if (r.contains("seed")) rs.seed = r.at("seed").get<uint64_t>();
            if (r.contains("weight_decay")) rs.weight_decay = r.at("weight_decay").get<float>();
            if (r.contains("retrain_epochs")) rs.retrain_epochs = r.at("retrain_epochs").get<uint32_t>();
            if (r.contains("schedule")) rs.schedule = schedule_kind_from_string(r.at("schedule").get<std::string>());
            if (r.contains("initial_lr")) rs.initial_lr = r.at("initial_lr").get<float>();
            rs.validate();
            cfg.replicas.push_back(rs);
        }
        if (!cfg.replicas.empty() && cfg.replicas.size() != cfg.m)
            throw ConfigError("config: replicas list must have exactly m entries");
    }

    if (root.contains("seeds")) {
        cfg.seeds = root.at("seeds").get<std::vector<uint64_t>>();
        if (cfg.seeds.empty()) throw ConfigError("config: seeds must be non-empty");
    }

    if (root.contains("dst")) {
        const auto& d = root.at("dst");
        detail::reject_unknown_keys(d, {"epochs", "prune_events", "final_event_frac", "bimp_pretrain_epochs",
                                        "bimp_cycles"},
                                    "dst");
        cfg.dst.epochs = detail::get_or<uint32_t>(d, "epochs", cfg.dst.epochs);
        cfg.dst.prune_events = detail::get_or<uint32_t>(d, "prune_events", cfg.dst.prune_events);
        cfg.dst.final_event_frac = detail::get_or<double>(d, "final_event_frac", cfg.dst.final_event_frac);
        cfg.dst.bimp_pretrain_epochs = detail::get_or<uint32_t>(d, "bimp_pretrain_epochs", cfg.dst.bimp_pretrain_epochs);
        cfg.dst.bimp_cycles = detail::get_or<uint32_t>(d, "bimp_cycles", cfg.dst.bimp_cycles);
    }
    const bool is_dst = cfg.method == MethodKind::bimp || cfg.method == MethodKind::gmp || cfg.method == MethodKind::dpf;
    if (is_dst && cfg.dst.epochs < 1) throw ConfigError("config: dst.epochs required for bimp/gmp/dpf");

    if (root.contains("ood")) {
        const auto& o = root.at("ood");
        detail::reject_unknown_keys(o, {"enabled", "kinds"}, "ood");
        cfg.ood.enabled = detail::get_or<bool>(o, "enabled", cfg.ood.enabled);
        if (o.contains("kinds")) {
            cfg.ood.kinds.clear();
            for (const auto& k : o.at("kinds")) cfg.ood.kinds.push_back(corruption_kind_from_string(k.get<std::string>()));
            if (cfg.ood.kinds.empty()) throw ConfigError("config: ood.kinds must be non-empty");
        }
    }

    if (root.contains("sweep")) {
        const auto& s = root.at("sweep");
        detail::reject_unknown_keys(s, {"sparsity_grid", "sparsity_m", "epoch_grid", "epoch_sparsities", "epoch_m",
                                        "hyper_variants", "hyper_sparsity", "hyper_epochs"},
                                    "sweep");
        cfg.sweep.sparsity_grid = detail::get_or<std::vector<double>>(s, "sparsity_grid", cfg.sweep.sparsity_grid);
        cfg.sweep.sparsity_m = detail::get_or<uint32_t>(s, "sparsity_m", cfg.sweep.sparsity_m);
        cfg.sweep.epoch_grid = detail::get_or<std::vector<uint32_t>>(s, "epoch_grid", cfg.sweep.epoch_grid);
        cfg.sweep.epoch_sparsities = detail::get_or<std::vector<double>>(s, "epoch_sparsities", cfg.sweep.epoch_sparsities);
        cfg.sweep.epoch_m = detail::get_or<uint32_t>(s, "epoch_m", cfg.sweep.epoch_m);
        cfg.sweep.hyper_variants = detail::get_or<uint32_t>(s, "hyper_variants", cfg.sweep.hyper_variants);
        cfg.sweep.hyper_sparsity = detail::get_or<double>(s, "hyper_sparsity", cfg.sweep.hyper_sparsity);
        cfg.sweep.hyper_epochs = detail::get_or<uint32_t>(s, "hyper_epochs", cfg.sweep.hyper_epochs);
        if (cfg.sweep.hyper_variants < 2) throw ConfigError("config: sweep.hyper_variants must be >= 2");
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    json root;
    try {
        root = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return parse_config(root);
}

// ---------------------------------------------------------------------------
// Canonical serialization and hashing
// ---------------------------------------------------------------------------

inline json config_to_json(const ExperimentConfig& c) {
    json j;
    j["name"] = c.name;
    j["output_dir"] = c.output_dir;
    j["dataset"] = {{"kind", c.dataset.kind},       {"num_classes", c.dataset.num_classes},
                    {"dim", c.dataset.dim},         {"n_per_class", c.dataset.n_per_class},
                    {"test_n_per_class", c.dataset.test_n_per_class},
                    {"spread", c.dataset.spread},   {"seed", c.dataset.seed},
                    {"train_path", c.dataset.train_path}, {"test_path", c.dataset.test_path},
                    {"val_fraction", c.dataset.val_fraction}};
    if (c.dataset.subgroup_skew) j["dataset"]["subgroup_skew"] = *c.dataset.subgroup_skew;
    j["arch"] = {{"layer_sizes", c.arch.layer_sizes}, {"batchnorm", c.arch.batchnorm}};
    j["pretrain"] = {{"epochs", c.pretrain.epochs}, {"batch_size", c.pretrain.batch_size}, {"lr", c.pretrain.lr},
                     {"final_lr", c.pretrain.final_lr}, {"weight_decay", c.pretrain.weight_decay},
                     {"momentum", c.pretrain.momentum}};
    if (!c.pretrain.pieces.empty()) j["pretrain"]["schedule_pieces"] = c.pretrain.pieces;
    j["method"] = to_string(c.method);
    j["target_sparsity"] = c.target_sparsity;
    j["phases"] = c.phases;
    j["m"] = c.m;
    j["merge"] = to_string(c.merge);
    j["pruning"] = to_string(c.pruning);
    j["retrain"] = {{"epochs", c.retrain.epochs}, {"schedule", to_string(c.retrain.schedule)}};
    if (c.retrain.batch_size) j["retrain"]["batch_size"] = *c.retrain.batch_size;
    if (!c.replicas.empty()) {
        json arr = json::array();
        for (const auto& r : c.replicas) {
            json rj = json::object();
            if (r.seed) rj["seed"] = *r.seed;
            if (r.weight_decay) rj["weight_decay"] = *r.weight_decay;
            if (r.retrain_epochs) rj["retrain_epochs"] = *r.retrain_epochs;
            if (r.schedule) rj["schedule"] = to_string(*r.schedule);
            if (r.initial_lr) rj["initial_lr"] = *r.initial_lr;
            arr.push_back(rj);
        }
        j["replicas"] = arr;
    }
    j["seeds"] = c.seeds;
    j["dst"] = {{"epochs", c.dst.epochs}, {"prune_events", c.dst.prune_events},
                {"final_event_frac", c.dst.final_event_frac}, {"bimp_pretrain_epochs", c.dst.bimp_pretrain_epochs},
                {"bimp_cycles", c.dst.bimp_cycles}};
    json kinds = json::array();
    for (auto k : c.ood.kinds) kinds.push_back(to_string(k));
    j["ood"] = {{"enabled", c.ood.enabled}, {"kinds", kinds}};
    return j;
}

/// FNV-1a over the canonical JSON dump (object keys sort on serialization).
/// Labels and storage locations (name, output_dir) are excluded: the hash
/// identifies the computation, not where its artifacts land.
inline uint64_t config_hash(const ExperimentConfig& c) {
    json j = config_to_json(c);
    j.erase("name");
    j.erase("output_dir");
    const std::string s = j.dump();
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string config_hash_hex(const ExperimentConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash(c)));
    return buf;
}

// ---------------------------------------------------------------------------
// Materialization
// ---------------------------------------------------------------------------

struct DataBundle {
    Dataset train, val, test;
};

inline DataBundle build_datasets(const ExperimentConfig& cfg) {
    DataBundle b;
    if (cfg.dataset.kind == "blobs") {
        Dataset full = gen_blobs(cfg.dataset.num_classes, cfg.dataset.dim, cfg.dataset.n_per_class, cfg.dataset.spread,
                                 cfg.dataset.seed, cfg.dataset.subgroup_skew);
        b.test = gen_blobs(cfg.dataset.num_classes, cfg.dataset.dim, cfg.dataset.test_n_per_class, cfg.dataset.spread,
                           seed_mix(cfg.dataset.seed, 0x74657374ull), cfg.dataset.subgroup_skew);
        auto [train, val] = split_train_val(full, cfg.dataset.val_fraction, seed_mix(cfg.dataset.seed, 0x76616cull));
        b.train = std::move(train);
        b.val = std::move(val);
    } else {
        Dataset full = load_csv_dataset(cfg.dataset.train_path);
        b.test = load_csv_dataset(cfg.dataset.test_path);
        auto [train, val] = split_train_val(full, cfg.dataset.val_fraction, seed_mix(full.seed, 0x76616cull));
        b.train = std::move(train);
        b.val = std::move(val);
        if (b.test.dim != b.train.dim) throw ConfigError("config: csv train/test dimension mismatch");
    }
    return b;
}

inline RunContext make_run_context(const ExperimentConfig& cfg, const DataBundle& data, uint64_t seed,
                                   unsigned parallel) {
    RunContext ctx;
    ctx.train_data = &data.train;
    ctx.val_data = &data.val;
    ctx.test_data = &data.test;
    ctx.arch = cfg.arch;
    ctx.original.eta_1 = cfg.pretrain.lr;
    ctx.original.eta_T = cfg.pretrain.final_lr;
    ctx.original.epochs = std::max(1u, cfg.pretrain.epochs);
    ctx.original.pieces = cfg.pretrain.pieces;
    ctx.pretrain_epochs = cfg.pretrain.epochs;
    ctx.batch_size = cfg.retrain.batch_size.value_or(cfg.pretrain.batch_size);
    ctx.weight_decay = cfg.pretrain.weight_decay;
    ctx.momentum = cfg.pretrain.momentum;
    ctx.retrain_epochs = cfg.retrain.epochs;
    ctx.retrain_schedule = cfg.retrain.schedule;
    ctx.base_seed = seed;
    ctx.parallel = parallel;
    if (cfg.ood.enabled) ctx.ood_kinds = cfg.ood.kinds;
    ctx.dst_epochs = cfg.dst.epochs;
    ctx.prune_events = cfg.dst.prune_events;
    ctx.final_event_frac = cfg.dst.final_event_frac;
    ctx.bimp_pretrain_epochs = cfg.dst.bimp_pretrain_epochs;
    ctx.bimp_cycles = cfg.dst.bimp_cycles;
    ctx.validate();
    return ctx;
}

}  // namespace sparsesoup

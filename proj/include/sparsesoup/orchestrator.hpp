#pragma once

// End-to-end methods: pretraining, iterative magnitude pruning and its
// budget-matched variants, the prune/fork/retrain/merge phase loop, and the
// pruning-during-training family with optional per-segment forking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sparsesoup/data.hpp"
#include "sparsesoup/errors.hpp"
#include "sparsesoup/merging.hpp"
#include "sparsesoup/metrics.hpp"
#include "sparsesoup/nn.hpp"
#include "sparsesoup/parallel.hpp"
#include "sparsesoup/pruning.hpp"
#include "sparsesoup/schedules.hpp"

namespace sparsesoup {

enum class MethodKind : uint8_t { sms, imp, imp_mx, imp_mphases, imp_reprune, bimp, gmp, dpf };

inline const char* to_string(MethodKind m) {
    switch (m) {
        case MethodKind::sms: return "sms";
        case MethodKind::imp: return "imp";
        case MethodKind::imp_mx: return "imp_mx";
        case MethodKind::imp_mphases: return "imp_mphases";
        case MethodKind::imp_reprune: return "imp_reprune";
        case MethodKind::bimp: return "bimp";
        case MethodKind::gmp: return "gmp";
        case MethodKind::dpf: return "dpf";
    }
    return "?";
}

inline MethodKind method_from_string(const std::string& s) {
    if (s == "sms") return MethodKind::sms;
    if (s == "imp") return MethodKind::imp;
    if (s == "imp_mx") return MethodKind::imp_mx;
    if (s == "imp_mphases") return MethodKind::imp_mphases;
    if (s == "imp_reprune") return MethodKind::imp_reprune;
    if (s == "bimp") return MethodKind::bimp;
    if (s == "gmp") return MethodKind::gmp;
    if (s == "dpf") return MethodKind::dpf;
    throw ConfigError("unknown method: " + s);
}

enum class ImpVariant : uint8_t { standard, m_times, m_phases };

/// Per-replica hyperparameter overrides; unset fields fall back to the run
/// defaults. `seed` replaces the base seed fed into the per-replica hash.
struct ReplicaSpec {
    std::optional<uint64_t> seed;
    std::optional<float> weight_decay;
    std::optional<uint32_t> retrain_epochs;
    std::optional<ScheduleKind> schedule;
    std::optional<float> initial_lr;

    void validate() const {
        if (retrain_epochs && *retrain_epochs < 1) throw ConfigError("replica: retrain_epochs must be >= 1");
        if (initial_lr && *initial_lr < 0.0f) throw ConfigError("replica: initial_lr must be >= 0");
    }
};

struct PhasePlan {
    SparsityPlan plan;
    std::vector<std::vector<ReplicaSpec>> replicas;  // one list per phase, each of size m_k >= 1
    MergeMethod merge = MergeMethod::uniform;
    PruningKind pruning = PruningKind::unstructured_global;

    void validate() const {
        if (replicas.size() != plan.phases) throw ConfigError("phase plan: replica lists must match phase count");
        for (const auto& phase : replicas) {
            if (phase.empty()) throw ConfigError("phase plan: every phase needs m >= 1 replicas");
            for (const auto& r : phase) r.validate();
        }
    }
};

/// Uniform phase plan: m identical default replicas per phase.
inline PhasePlan make_phase_plan(double target, uint32_t phases, uint32_t m, MergeMethod merge,
                                 PruningKind pruning = PruningKind::unstructured_global) {
    if (m < 1) throw ConfigError("phase plan: m must be >= 1");
    PhasePlan pp;
    pp.plan = make_plan(target, phases);
    pp.replicas.assign(phases, std::vector<ReplicaSpec>(m));
    pp.merge = merge;
    pp.pruning = pruning;
    return pp;
}

struct PhaseRecord {
    uint32_t phase = 0;  // 1-based
    double target_sparsity = 0.0;
    double recorded_sparsity = 0.0;  // floor-exact, from the phase mask
    uint32_t m = 1;
    uint32_t retrain_epochs_total = 0;
    std::vector<double> candidate_val, candidate_test, candidate_ood;
    double best_val = 0.0, mean_val = 0.0;
    double best_test = 0.0, mean_test = 0.0;
    double soup_val = 0.0, soup_test = 0.0, soup_ood = 0.0;
    bool has_ood = false;
    FlopsReport flops;
    std::optional<PairwiseL2> l2;
    MergeReport merge;
    std::optional<SubgroupReport> soup_subgroups;
    bool replica_masks_identical = true;  // empirical: every replica zero set == phase mask
};

struct RunRecord {
    std::vector<PhaseRecord> phases;
};

struct RunSinks {
    // replica_id >= 0 for candidates, -1 for the merged model.
    std::function<void(uint32_t phase, int32_t replica_id, const ModelState&, const Mask&)> on_model;
    // Pruning-during-training observer, fired at each prune event with the
    // persisted (dense for DPF) model and the freshly derived mask.
    std::function<void(uint32_t event_index, const ModelState&, const Mask&)> on_dst_event;
};

struct RunContext {
    const Dataset* train_data = nullptr;
    const Dataset* val_data = nullptr;
    const Dataset* test_data = nullptr;
    ArchSpec arch;
    OriginalCurve original;     // pretraining LR curve; also eta_1/eta_T/T for retrain schedules
    uint32_t pretrain_epochs = 0;
    uint32_t batch_size = 32;
    float weight_decay = 0.0f;
    float momentum = 0.9f;
    uint32_t retrain_epochs = 1;  // k, per phase
    ScheduleKind retrain_schedule = ScheduleKind::ALLR;
    uint64_t base_seed = 0;
    unsigned parallel = 1;
    uint32_t bn_batch = 256;
    std::vector<CorruptionKind> ood_kinds;  // empty -> skip OOD metrics
    RunSinks sinks;
    // pruning-during-training settings
    uint32_t dst_epochs = 0;
    uint32_t prune_events = 1;
    double final_event_frac = 1.0;  // event epochs span [0, frac * dst_epochs]
    uint32_t bimp_pretrain_epochs = 0;
    uint32_t bimp_cycles = 1;

    void validate() const {
        if (!train_data || !val_data || !test_data) throw ConfigError("run context: datasets missing");
        if (batch_size < 1) throw ConfigError("run context: batch_size must be >= 1");
        if (retrain_epochs < 1) throw ConfigError("run context: retrain_epochs must be >= 1");
        original.validate();
    }
};

namespace detail {

inline RetrainSchedule build_retrain_schedule(const RunContext& ctx, const ReplicaSpec& rs, float allr_drop) {
    RetrainSchedule s;
    s.variant = rs.schedule.value_or(ctx.retrain_schedule);
    s.eta_1 = ctx.original.at_epoch(0);
    s.eta_T = ctx.original.at_epoch(ctx.original.epochs - 1);
    s.T = ctx.original.epochs;
    s.T_rt = rs.retrain_epochs.value_or(ctx.retrain_epochs);
    s.original = ctx.original;
    s.allr_drop = allr_drop;
    s.initial_lr = rs.initial_lr;
    s.validate();
    return s;
}

inline double val_accuracy_recomputed(const ModelState& m, const RunContext& ctx) {
    return evaluate(recompute_bn(m, *ctx.train_data, ctx.bn_batch), *ctx.val_data).accuracy;
}

// Relative validation-accuracy degradation across a prune step, clamped to [0,1].
inline float pruning_drop(double acc_before, double acc_after) {
    if (acc_before <= 0.0) return 0.0f;
    return static_cast<float>(std::clamp((acc_before - acc_after) / acc_before, 0.0, 1.0));
}

struct PhaseOutcome {
    ModelState model;
    Mask mask;
    PhaseRecord record;
};

// One prune -> fork -> retrain -> merge cycle.
inline PhaseOutcome execute_phase(const ModelState& start, const Mask& prev_mask, double target,
                                  const std::vector<ReplicaSpec>& replicas, MergeMethod merge_method,
                                  PruningKind pruning, uint32_t phase_number, const RunContext& ctx) {
    const double acc_before = val_accuracy_recomputed(start, ctx);
    Mask mask = pruning == PruningKind::unstructured_global ? magnitude_mask(start, target, prev_mask)
                                                            : filter_mask(start, target);
    ModelState pruned = apply_mask(start, mask);
    const double acc_after = val_accuracy_recomputed(pruned, ctx);
    const float drop = pruning_drop(acc_before, acc_after);

    const auto m = static_cast<uint32_t>(replicas.size());
    std::vector<ModelState> trained(m);
    std::vector<double> cand_test(m), cand_ood(m, 0.0);
    try {
        parallel_for_index(m, ctx.parallel, [&](std::size_t i) {
            const auto& rs = replicas[i];
            const uint64_t seed = seed_mix(rs.seed.value_or(ctx.base_seed), phase_number, i);
            const RetrainSchedule sched = build_retrain_schedule(ctx, rs, drop);
            OptimizerState opt = make_optimizer(pruned, ctx.momentum, rs.weight_decay.value_or(ctx.weight_decay));
            trained[i] = train(pruned, mask, std::move(opt), *ctx.train_data, sched, sched.T_rt, ctx.batch_size, seed);
            const ModelState rc = recompute_bn(trained[i], *ctx.train_data, ctx.bn_batch);
            cand_test[i] = evaluate(rc, *ctx.test_data).accuracy;
            if (!ctx.ood_kinds.empty()) cand_ood[i] = ood_accuracy(rc, *ctx.test_data, ctx.ood_kinds);
        });
    } catch (const std::exception& e) {
        throw NumericError("phase " + std::to_string(phase_number) + " replica training failed: " + e.what());
    }

    PhaseOutcome out;
    out.record.phase = phase_number;
    out.record.target_sparsity = target;
    out.record.recorded_sparsity = mask.sparsity();
    out.record.m = m;
    for (const auto& rs : replicas) out.record.retrain_epochs_total += rs.retrain_epochs.value_or(ctx.retrain_epochs);

    if (merge_method == MergeMethod::greedy) {
        auto [soup, recipe, rep] = greedy_soup(trained, *ctx.val_data, *ctx.train_data, ctx.bn_batch);
        out.model = std::move(soup);
        out.record.merge = std::move(rep);
    } else {
        auto [soup, rep] = uniform_soup(trained, *ctx.train_data, *ctx.val_data, ctx.bn_batch);
        out.model = std::move(soup);
        out.record.merge = std::move(rep);
    }

    out.record.candidate_val = out.record.merge.val_accuracies;
    out.record.candidate_test = cand_test;
    if (!ctx.ood_kinds.empty()) out.record.candidate_ood = cand_ood;
    out.record.best_val = *std::max_element(out.record.candidate_val.begin(), out.record.candidate_val.end());
    out.record.best_test = *std::max_element(cand_test.begin(), cand_test.end());
    double sv = 0.0, st = 0.0;
    for (double v : out.record.candidate_val) sv += v;
    for (double v : cand_test) st += v;
    out.record.mean_val = sv / m;
    out.record.mean_test = st / m;
    out.record.soup_val = out.record.merge.soup_val_accuracy;
    out.record.soup_test = evaluate(out.model, *ctx.test_data).accuracy;
    if (!ctx.ood_kinds.empty()) {
        out.record.soup_ood = ood_accuracy(out.model, *ctx.test_data, ctx.ood_kinds);
        out.record.has_ood = true;
    }
    out.record.flops = count_flops(out.model, mask);
    if (m >= 2) out.record.l2 = pairwise_l2(trained);
    if (ctx.test_data->has_subgroups()) out.record.soup_subgroups = subgroup_recall(out.model, *ctx.test_data);
    for (uint32_t i = 0; i < m; ++i)
        if (!(mask_from_zeros(trained[i]) == mask)) out.record.replica_masks_identical = false;

    if (ctx.sinks.on_model) {
        for (uint32_t i = 0; i < m; ++i) ctx.sinks.on_model(phase_number, static_cast<int32_t>(i), trained[i], mask);
        ctx.sinks.on_model(phase_number, -1, out.model, mask);
    }
    out.mask = std::move(mask);
    return out;
}

inline std::pair<ModelState, RunRecord> run_phase_loop(ModelState model, const PhasePlan& pp, const RunContext& ctx,
                                                       uint32_t first_phase_number = 1) {
    pp.validate();
    RunRecord record;
    Mask prev = mask_from_zeros(model);
    for (uint32_t k = 0; k < pp.plan.phases; ++k) {
        auto outcome = execute_phase(model, prev, pp.plan.cumulative[k], pp.replicas[k], pp.merge, pp.pruning,
                                     first_phase_number + k, ctx);
        model = std::move(outcome.model);
        prev = std::move(outcome.mask);
        record.phases.push_back(std::move(outcome.record));
    }
    return {std::move(model), std::move(record)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

/// Dense training from a seeded initialization, following the original LR
/// curve per epoch. Deterministic in (arch, data, curve, seed).
inline ModelState pretrain(const ArchSpec& arch, const Dataset& train_data, const OriginalCurve& curve,
                           uint32_t epochs, uint32_t batch_size, float weight_decay, float momentum, uint64_t seed) {
    curve.validate();
    ModelState model = init_model(arch, seed);
    if (epochs == 0) return model;
    RetrainSchedule sched;
    sched.variant = ScheduleKind::ORIGINAL;
    sched.eta_1 = curve.at_epoch(0);
    sched.eta_T = curve.at_epoch(curve.epochs - 1);
    sched.T = curve.epochs;
    sched.T_rt = epochs;
    sched.original = curve;
    OptimizerState opt = make_optimizer(model, momentum, weight_decay);
    const Mask none = full_mask(model);
    return train(std::move(model), none, std::move(opt), train_data, sched, epochs, batch_size,
                 seed_mix(seed, 0x7072657472ull));
}

inline ModelState pretrain(const RunContext& ctx) {
    ctx.validate();
    return pretrain(ctx.arch, *ctx.train_data, ctx.original, ctx.pretrain_epochs, ctx.batch_size, ctx.weight_decay,
                    ctx.momentum, ctx.base_seed);
}

// ---------------------------------------------------------------------------
// SMS and IMP variants
// ---------------------------------------------------------------------------

/// Per phase: prune the merged model (mask monotone), fork m replicas, retrain
/// each with its hyperparameters, merge, recompute BN, record metrics.
inline std::pair<ModelState, RunRecord> sms_run(const ModelState& pretrained, const PhasePlan& phase_plan,
                                                const RunContext& ctx) {
    ctx.validate();
    return detail::run_phase_loop(pretrained, phase_plan, ctx);
}

/// standard: K phases of k epochs (SMS with m = 1). m_times: K phases of m*k
/// epochs with the schedule stretched. m_phases: m*K phases of k epochs with
/// the sparsity plan recomputed for m*K steps.
inline std::pair<ModelState, RunRecord> imp_run(const ModelState& pretrained, const SparsityPlan& plan,
                                                ImpVariant variant, uint32_t m, const RunContext& ctx,
                                                PruningKind pruning = PruningKind::unstructured_global) {
    ctx.validate();
    if (m < 1) throw ConfigError("imp_run: m must be >= 1");
    PhasePlan pp;
    pp.merge = MergeMethod::uniform;
    pp.pruning = pruning;
    switch (variant) {
        case ImpVariant::standard:
            pp.plan = plan;
            pp.replicas.assign(plan.phases, {ReplicaSpec{}});
            break;
        case ImpVariant::m_times: {
            pp.plan = plan;
            ReplicaSpec stretched;
            stretched.retrain_epochs = m * ctx.retrain_epochs;
            pp.replicas.assign(plan.phases, {stretched});
            break;
        }
        case ImpVariant::m_phases:
            pp.plan = make_plan(plan.target, m * plan.phases);
            pp.replicas.assign(pp.plan.phases, {ReplicaSpec{}});
            break;
    }
    return detail::run_phase_loop(pretrained, pp, ctx);
}

/// m independent IMP runs under different seeds, uniform-averaged, then
/// re-pruned back to the target. The merge report keeps the densified
/// (pre-reprune) sparsity; recorded_sparsity is the floor-exact final value.
inline std::pair<ModelState, RunRecord> imp_reprune_run(const ModelState& pretrained, const SparsityPlan& plan,
                                                        uint32_t m, const RunContext& ctx,
                                                        PruningKind pruning = PruningKind::unstructured_global) {
    ctx.validate();
    if (m < 2) throw ConfigError("imp_reprune_run: m must be >= 2");
    std::vector<ModelState> finals(m);
    parallel_for_index(m, ctx.parallel, [&](std::size_t r) {
        RunContext sub = ctx;
        sub.parallel = 1;
        sub.base_seed = seed_mix(ctx.base_seed, 0x7265707275ull, r);
        sub.sinks = {};
        PhasePlan pp;
        pp.plan = plan;
        pp.replicas.assign(plan.phases, {ReplicaSpec{}});
        pp.merge = MergeMethod::uniform;
        pp.pruning = pruning;
        finals[r] = detail::run_phase_loop(pretrained, pp, sub).first;
    });

    PhaseRecord rec;
    rec.phase = plan.phases;
    rec.target_sparsity = plan.target;
    rec.m = m;
    rec.retrain_epochs_total = m * plan.phases * ctx.retrain_epochs;
    for (const auto& f : finals) {
        rec.merge.pre_merge_sparsities.push_back(sparsity_of(f));
        rec.candidate_val.push_back(detail::val_accuracy_recomputed(f, ctx));
        const ModelState rc = recompute_bn(f, *ctx.train_data, ctx.bn_batch);
        rec.candidate_test.push_back(evaluate(rc, *ctx.test_data).accuracy);
        if (!ctx.ood_kinds.empty()) rec.candidate_ood.push_back(ood_accuracy(rc, *ctx.test_data, ctx.ood_kinds));
    }
    rec.best_val = *std::max_element(rec.candidate_val.begin(), rec.candidate_val.end());
    rec.best_test = *std::max_element(rec.candidate_test.begin(), rec.candidate_test.end());
    double sv = 0.0, st = 0.0;
    for (double v : rec.candidate_val) sv += v;
    for (double v : rec.candidate_test) st += v;
    rec.mean_val = sv / m;
    rec.mean_test = st / m;
    rec.merge.masks_identical = detail::zero_sets_identical(finals);

    const std::vector<double> lambdas(m, 1.0 / static_cast<double>(m));
    ModelState averaged = linear_combine(finals, lambdas);
    rec.merge.post_merge_sparsity = sparsity_of(averaged);  // densified, pre-reprune
    auto [repruned, mask] = reprune_to(averaged, plan.target);
    ModelState final_model = recompute_bn(std::move(repruned), *ctx.train_data, ctx.bn_batch);

    rec.recorded_sparsity = mask.sparsity();
    rec.merge.soup_val_accuracy = evaluate(final_model, *ctx.val_data).accuracy;
    rec.merge.val_accuracies = rec.candidate_val;
    rec.soup_val = rec.merge.soup_val_accuracy;
    rec.soup_test = evaluate(final_model, *ctx.test_data).accuracy;
    if (!ctx.ood_kinds.empty()) {
        rec.soup_ood = ood_accuracy(final_model, *ctx.test_data, ctx.ood_kinds);
        rec.has_ood = true;
    }
    rec.flops = count_flops(final_model, mask);
    rec.l2 = pairwise_l2(finals);
    if (ctx.test_data->has_subgroups()) rec.soup_subgroups = subgroup_recall(final_model, *ctx.test_data);
    for (uint32_t i = 0; i < m; ++i)
        if (!(mask_from_zeros(finals[i]) == mask)) rec.replica_masks_identical = false;

    if (ctx.sinks.on_model) {
        for (uint32_t i = 0; i < m; ++i) ctx.sinks.on_model(rec.phase, static_cast<int32_t>(i), finals[i], mask_from_zeros(finals[i]));
        ctx.sinks.on_model(rec.phase, -1, final_model, mask);
    }
    RunRecord record;
    record.phases.push_back(std::move(rec));
    return {std::move(final_model), std::move(record)};
}

// ---------------------------------------------------------------------------
// Pruning during training: BIMP / GMP / DPF
// ---------------------------------------------------------------------------

namespace detail {

// Event epochs for GMP/DPF: num_events uniformly spaced over
// [0, final_event_frac * total_epochs], excluding 0 (unless the span is 0)
// and including the final configured event epoch.
inline std::vector<uint32_t> dst_event_epochs(uint32_t total_epochs, uint32_t num_events, double frac) {
    if (num_events < 1) throw ConfigError("dst: prune_events must be >= 1");
    if (frac < 0.0 || frac > 1.0) throw ConfigError("dst: final_event_frac must be in [0,1]");
    const auto span = static_cast<uint32_t>(std::llround(frac * static_cast<double>(total_epochs)));
    std::vector<uint32_t> out(num_events);
    for (uint32_t j = 1; j <= num_events; ++j)
        out[j - 1] = static_cast<uint32_t>(std::llround(static_cast<double>(j) * span / num_events));
    return out;
}

// Trains the dense copy for `epochs` whole epochs starting at global epoch
// `epoch_offset`, forwarding/backwarding through the masked weights but
// applying gradients (and momentum) to the dense parameters.
inline ModelState dpf_train_segment(ModelState dense, const Mask& mask, const Dataset& data,
                                    const RetrainSchedule& sched, uint32_t epochs, uint32_t batch_size, uint64_t seed,
                                    uint64_t epoch_offset, float momentum, float weight_decay) {
    const auto steps_per_epoch = static_cast<uint32_t>((data.size() + batch_size - 1) / batch_size);
    OptimizerState opt = make_optimizer(dense, momentum, weight_decay);
    const Mask none = full_mask(dense);
    uint64_t step = epoch_offset * steps_per_epoch;
    for (uint32_t e = 0; e < epochs; ++e) {
        const auto batch_list = batches(data, batch_size, seed_mix(seed, 0x65706f6368ull, epoch_offset + e), false);
        for (const auto& batch : batch_list) {
            const float lr = lr_at(sched, step, steps_per_epoch);
            ModelState masked = apply_mask(dense, mask);
            const auto lg = loss_and_grad(masked, none, data, batch, Mode::train);
            // BN statistics advance inside the masked forward; mirror them.
            for (std::size_t li = 0; li < dense.layers.size(); ++li) {
                if (dense.layers[li].kind != LayerKind::batchnorm) continue;
                dense.layers[li].running_mean = masked.layers[li].running_mean;
                dense.layers[li].running_var = masked.layers[li].running_var;
            }
            sgd_step(dense, opt, lg.grads, lr, none);
            ++step;
        }
    }
    return dense;
}

}  // namespace detail

/// BIMP: dense pretraining segment inside the budget, then IMP cycles (forked
/// when sms_enabled). GMP: the mask tightens along the cubic ramp at uniformly
/// spaced events with masked training in between. DPF: the same events, but
/// gradients flow into a persistent dense copy and the mask is re-derived from
/// dense magnitudes at every event. All three follow the original LR schedule;
/// segment replicas vary only their random seed.
inline std::pair<ModelState, RunRecord> dst_run(MethodKind method, bool sms_enabled, uint32_t m,
                                                double target_sparsity, const RunContext& ctx) {
    ctx.validate();
    if (m < 1) throw ConfigError("dst_run: m must be >= 1");
    if (!(target_sparsity > 0.0 && target_sparsity < 1.0)) throw ConfigError("dst_run: target must be in (0,1)");
    const uint32_t fork_m = sms_enabled ? m : 1;

    if (method == MethodKind::bimp) {
        if (ctx.bimp_pretrain_epochs >= ctx.dst_epochs) throw ConfigError("bimp: pretrain epochs must be < total epochs");
        const uint32_t cycles = ctx.bimp_cycles;
        if (cycles < 1) throw ConfigError("bimp: cycles must be >= 1");
        if ((ctx.dst_epochs - ctx.bimp_pretrain_epochs) % cycles != 0)
            throw ConfigError("bimp: retraining budget must divide evenly into cycles");
        const uint32_t per_cycle = (ctx.dst_epochs - ctx.bimp_pretrain_epochs) / cycles;

        ModelState model = pretrain(ctx.arch, *ctx.train_data, ctx.original, ctx.bimp_pretrain_epochs, ctx.batch_size,
                                    ctx.weight_decay, ctx.momentum, ctx.base_seed);
        RunContext sub = ctx;
        sub.retrain_epochs = per_cycle;
        PhasePlan pp = make_phase_plan(target_sparsity, cycles, fork_m, MergeMethod::uniform);
        return detail::run_phase_loop(std::move(model), pp, sub);
    }

    if (method != MethodKind::gmp && method != MethodKind::dpf) throw ConfigError("dst_run: method must be bimp, gmp or dpf");
    if (ctx.dst_epochs < 1) throw ConfigError("dst: epochs must be >= 1");

    const auto events = detail::dst_event_epochs(ctx.dst_epochs, ctx.prune_events, ctx.final_event_frac);

    RetrainSchedule sched;
    sched.variant = ScheduleKind::ORIGINAL;
    sched.eta_1 = ctx.original.at_epoch(0);
    sched.eta_T = ctx.original.at_epoch(ctx.original.epochs - 1);
    sched.T = ctx.original.epochs;
    sched.T_rt = ctx.dst_epochs;
    sched.original = ctx.original;
    sched.validate();

    ModelState dense = init_model(ctx.arch, ctx.base_seed);
    Mask mask = full_mask(dense);
    RunRecord record;
    uint32_t cursor = 0;
    uint32_t next_event = 0;
    uint32_t segment_number = 0;

    auto run_segment = [&](uint32_t from_epoch, uint32_t to_epoch) {
        ++segment_number;
        const uint32_t epochs = to_epoch - from_epoch;
        std::vector<ModelState> trained(fork_m);
        parallel_for_index(fork_m, ctx.parallel, [&](std::size_t i) {
            const uint64_t seed = seed_mix(ctx.base_seed, 0x647374ull, from_epoch, i);
            if (method == MethodKind::dpf) {
                trained[i] = detail::dpf_train_segment(dense, mask, *ctx.train_data, sched, epochs, ctx.batch_size,
                                                       seed, from_epoch, ctx.momentum, ctx.weight_decay);
            } else {
                OptimizerState opt = make_optimizer(dense, ctx.momentum, ctx.weight_decay);
                ModelState masked = apply_mask(dense, mask);
                trained[i] = train(std::move(masked), mask, std::move(opt), *ctx.train_data, sched, epochs,
                                   ctx.batch_size, seed, from_epoch);
            }
        });
        auto [soup, rep] = uniform_soup(trained, *ctx.train_data, *ctx.val_data, ctx.bn_batch);
        dense = std::move(soup);

        PhaseRecord rec;
        rec.phase = segment_number;
        rec.target_sparsity = mask.sparsity();
        rec.recorded_sparsity = mask.sparsity();
        rec.m = fork_m;
        rec.retrain_epochs_total = fork_m * epochs;
        rec.candidate_val = rep.val_accuracies;
        for (const auto& t : trained) {
            // DPF candidates are dense copies; report their masked form.
            const ModelState rc = recompute_bn(method == MethodKind::dpf ? apply_mask(t, mask) : t, *ctx.train_data,
                                               ctx.bn_batch);
            rec.candidate_test.push_back(evaluate(rc, *ctx.test_data).accuracy);
            if (method == MethodKind::dpf)
                rec.candidate_val[rec.candidate_test.size() - 1] = evaluate(rc, *ctx.val_data).accuracy;
        }
        rec.best_val = *std::max_element(rec.candidate_val.begin(), rec.candidate_val.end());
        double sv = 0.0;
        for (double v : rec.candidate_val) sv += v;
        rec.mean_val = sv / fork_m;
        rec.best_test = *std::max_element(rec.candidate_test.begin(), rec.candidate_test.end());
        double st = 0.0;
        for (double v : rec.candidate_test) st += v;
        rec.mean_test = st / fork_m;
        const ModelState eval_model = method == MethodKind::dpf
            ? recompute_bn(apply_mask(dense, mask), *ctx.train_data, ctx.bn_batch)
            : dense;
        rec.merge = std::move(rep);
        rec.soup_val = evaluate(eval_model, *ctx.val_data).accuracy;
        rec.soup_test = evaluate(eval_model, *ctx.test_data).accuracy;
        if (!ctx.ood_kinds.empty()) {
            rec.soup_ood = ood_accuracy(eval_model, *ctx.test_data, ctx.ood_kinds);
            rec.has_ood = true;
        }
        rec.flops = count_flops(eval_model, mask);
        if (fork_m >= 2) rec.l2 = pairwise_l2(trained);
        if (ctx.test_data->has_subgroups()) rec.soup_subgroups = subgroup_recall(eval_model, *ctx.test_data);
        record.phases.push_back(std::move(rec));
    };

    while (next_event < events.size()) {
        const uint32_t event_epoch = events[next_event];
        if (event_epoch > cursor) {
            run_segment(cursor, event_epoch);
            cursor = event_epoch;
        }
        const double level = gmp_event_level(next_event + 1, ctx.prune_events, target_sparsity);
        if (method == MethodKind::dpf) {
            mask = magnitude_mask(dense, level, full_mask(dense));  // re-derived, may reactivate
        } else {
            mask = magnitude_mask(dense, level, mask);  // monotone tightening
            dense = apply_mask(dense, mask);
        }
        if (ctx.sinks.on_dst_event) ctx.sinks.on_dst_event(next_event + 1, dense, mask);
        ++next_event;
    }
    run_segment(cursor, ctx.dst_epochs);  // tail (possibly zero epochs)

    ModelState final_model = method == MethodKind::dpf
        ? recompute_bn(apply_mask(dense, mask), *ctx.train_data, ctx.bn_batch)
        : dense;
    if (ctx.sinks.on_model) ctx.sinks.on_model(segment_number, -1, final_model, mask);
    return {std::move(final_model), std::move(record)};
}

}  // namespace sparsesoup

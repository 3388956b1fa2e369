#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "sparsesoup/data.hpp"
#include "sparsesoup/errors.hpp"
#include "sparsesoup/nn.hpp"
#include "sparsesoup/pruning.hpp"

namespace sparsesoup {

enum class MergeMethod : uint8_t { uniform = 0, greedy = 1, custom = 2 };

inline const char* to_string(MergeMethod m) {
    switch (m) {
        case MergeMethod::uniform: return "uniform";
        case MergeMethod::greedy: return "greedy";
        case MergeMethod::custom: return "custom";
    }
    return "?";
}

inline MergeMethod merge_method_from_string(const std::string& s) {
    if (s == "uniform") return MergeMethod::uniform;
    if (s == "greedy") return MergeMethod::greedy;
    if (s == "custom") return MergeMethod::custom;
    throw ConfigError("unknown merge method: " + s);
}

struct SoupRecipe {
    MergeMethod method = MergeMethod::uniform;
    std::vector<double> lambdas;
    std::vector<uint32_t> selected;  // greedy output, indices into the candidate list
};

struct MergeReport {
    std::vector<double> pre_merge_sparsities;
    double post_merge_sparsity = 0.0;
    bool masks_identical = false;
    std::vector<double> val_accuracies;
    double soup_val_accuracy = 0.0;
};

namespace detail {

// Canonical-order summation: sorting the addends makes the result independent
// of the candidate ordering, bit for bit.
inline float weighted_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += t;
    return static_cast<float>(acc);
}

}  // namespace detail

/// Parameter-wise linear combination (weights, biases, BN affine params and
/// running stats alike). The result's BN statistics are marked stale and must
/// be recomputed before evaluation.
inline ModelState linear_combine(std::span<const ModelState> models, std::span<const double> lambdas) {
    if (models.empty()) throw ConfigError("linear_combine: no models");
    if (models.size() != lambdas.size()) throw ConfigError("linear_combine: lambda count mismatch");
    for (const auto& m : models)
        if (!(m.arch == models.front().arch)) throw ConfigError("linear_combine: architecture mismatch");

    ModelState out = models.front();
    const std::size_t m_count = models.size();
    std::vector<std::vector<const std::vector<float>*>> sources;  // per model: tensor list
    sources.reserve(m_count);
    for (const auto& m : models) {
        std::vector<const std::vector<float>*> refs;
        for_each_tensor(m, [&](const TensorInfo&, const std::vector<float>& v) { refs.push_back(&v); });
        sources.push_back(std::move(refs));
    }

    std::size_t ti = 0;
    std::vector<double> terms(m_count);
    for_each_tensor(out, [&](const TensorInfo&, std::vector<float>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            for (std::size_t k = 0; k < m_count; ++k)
                terms[k] = lambdas[k] * static_cast<double>((*sources[k][ti])[i]);
            v[i] = detail::weighted_sum(terms);
        }
        ++ti;
    });
    out.bn_stale = out.has_batchnorm();
    return out;
}

/// Resets BN running statistics and recomputes them from one pass over the
/// training data in canonical fixed batch order. Aggregation uses exact
/// dataset moments of each BN layer's input stream (unbiased variance).
/// Weights are untouched; the operation is idempotent.
inline ModelState recompute_bn(ModelState model, const Dataset& train_data, uint32_t batch_size = 256) {
    if (train_data.size() == 0) throw ConfigError("recompute_bn: empty data");
    if (!model.has_batchnorm()) {
        model.bn_stale = false;
        return model;
    }
    // Reset so the pass is independent of previous statistics. Normalization
    // inside the pass uses per-batch statistics, not the running buffers.
    for (auto& l : model.layers) {
        if (l.kind != LayerKind::batchnorm) continue;
        std::fill(l.running_mean.begin(), l.running_mean.end(), 0.0f);
        std::fill(l.running_var.begin(), l.running_var.end(), 1.0f);
    }
    detail::BnAccumulator accum;
    detail::FwdCtx ctx;
    for (const auto& batch : batches(train_data, batch_size, 0, true))
        detail::run_forward(model, train_data, batch, Mode::train, false, &accum, ctx);

    const double n = static_cast<double>(accum.samples);
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        auto& l = model.layers[li];
        if (l.kind != LayerKind::batchnorm) continue;
        const auto& slot = accum.layers[li];
        for (std::size_t k = 0; k < l.running_mean.size(); ++k) {
            const double mean = slot.sum[k] / n;
            double var = 0.0;
            if (accum.samples > 1) var = std::max(0.0, (slot.sum_sq[k] - n * mean * mean) / (n - 1.0));
            l.running_mean[k] = static_cast<float>(mean);
            l.running_var[k] = static_cast<float>(var);
        }
    }
    model.bn_stale = false;
    return model;
}

namespace detail {

inline bool zero_sets_identical(std::span<const ModelState> models) {
    const Mask first = mask_from_zeros(models.front());
    for (std::size_t k = 1; k < models.size(); ++k)
        if (!(mask_from_zeros(models[k]) == first)) return false;
    return true;
}

}  // namespace detail

/// Equal-weight average of all candidates followed by a BN recompute.
inline std::pair<ModelState, MergeReport> uniform_soup(std::span<const ModelState> models, const Dataset& bn_data,
                                                       const Dataset& val_data, uint32_t bn_batch = 256) {
    if (models.empty()) throw ConfigError("uniform_soup: no models");
    MergeReport report;
    report.masks_identical = detail::zero_sets_identical(models);
    for (const auto& m : models) {
        report.pre_merge_sparsities.push_back(sparsity_of(m));
        report.val_accuracies.push_back(evaluate(recompute_bn(m, bn_data, bn_batch), val_data).accuracy);
    }
    const std::vector<double> lambdas(models.size(), 1.0 / static_cast<double>(models.size()));
    ModelState soup = recompute_bn(linear_combine(models, lambdas), bn_data, bn_batch);
    report.post_merge_sparsity = sparsity_of(soup);
    report.soup_val_accuracy = evaluate(soup, val_data).accuracy;
    return {std::move(soup), std::move(report)};
}

/// GreedySoup: candidates sorted by descending validation accuracy (ties by
/// index), included only when the tentative average's validation accuracy does
/// not drop below the best subset so far. Every evaluation happens after a BN
/// recompute on bn_data in fixed order.
inline std::tuple<ModelState, SoupRecipe, MergeReport> greedy_soup(std::span<const ModelState> models,
                                                                   const Dataset& val_data, const Dataset& bn_data,
                                                                   uint32_t bn_batch = 256) {
    if (models.empty()) throw ConfigError("greedy_soup: no models");
    if (val_data.size() == 0) throw ConfigError("greedy_soup: empty validation data");

    MergeReport report;
    report.masks_identical = detail::zero_sets_identical(models);
    std::vector<double> val_acc(models.size());
    for (std::size_t k = 0; k < models.size(); ++k) {
        report.pre_merge_sparsities.push_back(sparsity_of(models[k]));
        val_acc[k] = evaluate(recompute_bn(models[k], bn_data, bn_batch), val_data).accuracy;
        report.val_accuracies.push_back(val_acc[k]);
    }
    std::vector<uint32_t> order(models.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) { return val_acc[a] > val_acc[b]; });

    auto subset_soup = [&](const std::vector<uint32_t>& subset) {
        std::vector<ModelState> members;
        members.reserve(subset.size());
        for (uint32_t s : subset) members.push_back(models[s]);
        const std::vector<double> lambdas(subset.size(), 1.0 / static_cast<double>(subset.size()));
        return recompute_bn(linear_combine(members, lambdas), bn_data, bn_batch);
    };

    std::vector<uint32_t> selected;
    double best = -std::numeric_limits<double>::infinity();
    for (uint32_t cand : order) {
        std::vector<uint32_t> tentative = selected;
        tentative.push_back(cand);
        const double acc = evaluate(subset_soup(tentative), val_data).accuracy;
        if (acc >= best) {
            selected = std::move(tentative);
            best = acc;
        }
    }
    std::sort(selected.begin(), selected.end());

    ModelState soup = subset_soup(selected);
    report.post_merge_sparsity = sparsity_of(soup);
    report.soup_val_accuracy = evaluate(soup, val_data).accuracy;

    SoupRecipe recipe;
    recipe.method = MergeMethod::greedy;
    recipe.selected = selected;
    recipe.lambdas.assign(models.size(), 0.0);
    for (uint32_t s : selected) recipe.lambdas[s] = 1.0 / static_cast<double>(selected.size());
    return {std::move(soup), std::move(recipe), std::move(report)};
}

/// Magnitude-prunes the model back to the target sparsity (used after
/// averaging models whose masks diverged).
inline std::pair<ModelState, Mask> reprune_to(const ModelState& model, double target_sparsity) {
    const Mask current = mask_from_zeros(model);
    if (target_sparsity + 1e-12 < current.sparsity())
        throw ConfigError("reprune_to: target below current sparsity");
    Mask mask = magnitude_mask(model, target_sparsity, current);
    ModelState out = apply_mask(model, mask);
    return {std::move(out), std::move(mask)};
}

struct PairwiseL2 {
    double mean = 0.0;
    double max = 0.0;
};

/// Mean and max Euclidean distance between all unordered pairs, taken over the
/// concatenated trainable parameters (running stats excluded).
inline PairwiseL2 pairwise_l2(std::span<const ModelState> models) {
    if (models.size() < 2) throw ConfigError("pairwise_l2: need at least 2 models");
    auto flat = [](const ModelState& m) {
        std::vector<double> v;
        for_each_tensor(m, [&](const TensorInfo& info, const std::vector<float>& t) {
            if (!info.trainable) return;
            for (float x : t) v.push_back(static_cast<double>(x));
        });
        return v;
    };
    std::vector<std::vector<double>> vecs;
    vecs.reserve(models.size());
    for (const auto& m : models) vecs.push_back(flat(m));

    PairwiseL2 out;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < vecs.size(); ++a)
        for (std::size_t b = a + 1; b < vecs.size(); ++b) {
            double sq = 0.0;
            for (std::size_t i = 0; i < vecs[a].size(); ++i) {
                const double diff = vecs[a][i] - vecs[b][i];
                sq += diff * diff;
            }
            const double dist = std::sqrt(sq);
            out.mean += dist;
            out.max = std::max(out.max, dist);
            ++pairs;
        }
    out.mean /= static_cast<double>(pairs);
    return out;
}

}  // namespace sparsesoup

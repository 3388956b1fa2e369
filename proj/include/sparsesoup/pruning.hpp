#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "sparsesoup/errors.hpp"
#include "sparsesoup/mask.hpp"
#include "sparsesoup/nn.hpp"

namespace sparsesoup {

enum class PruningKind : uint8_t { unstructured_global = 0, structured_row = 1 };

inline const char* to_string(PruningKind k) {
    return k == PruningKind::unstructured_global ? "unstructured_global" : "structured_row";
}

inline PruningKind pruning_kind_from_string(const std::string& s) {
    if (s == "unstructured_global") return PruningKind::unstructured_global;
    if (s == "structured_row") return PruningKind::structured_row;
    throw ConfigError("unknown pruning kind: " + s);
}

/// Target sparsity reached over K phases following the geometric law
/// 1 - s_k = (1 - s)^(k/K).
struct SparsityPlan {
    double target = 0.0;
    uint32_t phases = 1;
    std::vector<double> cumulative;  // s_1 .. s_K
};

/// s_k = 1 - (1 - target)^(k/K) for k = 1..K.
inline std::vector<double> phase_sparsities(double target, uint32_t K) {
    if (!(target > 0.0 && target < 1.0)) throw ConfigError("phase_sparsities: target must be in (0,1)");
    if (K < 1) throw ConfigError("phase_sparsities: K must be >= 1");
    std::vector<double> out(K);
    for (uint32_t k = 1; k <= K; ++k)
        out[k - 1] = 1.0 - std::pow(1.0 - target, static_cast<double>(k) / static_cast<double>(K));
    out[K - 1] = target;  // pin the endpoint exactly
    return out;
}

inline SparsityPlan make_plan(double target, uint32_t K) {
    return SparsityPlan{target, K, phase_sparsities(target, K)};
}

/// Global unstructured magnitude mask: prunes exactly
/// floor(cumulative_sparsity * total) coordinates with the smallest |w| over
/// all prunable tensors jointly. Previously pruned coordinates sort first, so
/// the pruned set can only grow. Ties break by (tensor order, flat index).
inline Mask magnitude_mask(const ModelState& model, double cumulative_sparsity, const Mask& prev) {
    check_congruent(model, prev, "magnitude_mask");
    if (cumulative_sparsity < 0.0 || cumulative_sparsity >= 1.0)
        throw ConfigError("magnitude_mask: sparsity must be in [0,1)");
    if (cumulative_sparsity + 1e-12 < prev.sparsity())
        throw ConfigError("magnitude_mask: requested sparsity below previous mask sparsity");

    const auto tensors = prunable_tensors(model);
    const uint64_t total = prev.total;
    const auto prune_count = static_cast<uint64_t>(cumulative_sparsity * static_cast<double>(total));

    // (magnitude, tensor, index); previously pruned coordinates get -1 so they
    // are always re-selected first.
    std::vector<std::tuple<double, uint32_t, uint32_t>> order;
    order.reserve(total);
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        const auto& w = *tensors[ti];
        const auto& bits = prev.tensors[ti];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double mag = bits[i] ? std::abs(static_cast<double>(w[i])) : -1.0;
            order.emplace_back(mag, static_cast<uint32_t>(ti), static_cast<uint32_t>(i));
        }
    }
    std::sort(order.begin(), order.end());

    Mask mask;
    mask.tensors.reserve(tensors.size());
    for (const auto* t : tensors) mask.tensors.emplace_back(t->size(), uint8_t{1});
    for (uint64_t r = 0; r < prune_count; ++r) {
        const auto& [mag, ti, i] = order[r];
        mask.tensors[ti][i] = 0;
    }
    mask.recount();
    return mask;
}

/// Structured pruning: in each prunable dense layer independently, the
/// floor(sparsity * rows) output rows with the smallest L2 norm are masked
/// entirely. Ties break toward the lower row index.
inline Mask filter_mask(const ModelState& model, double sparsity) {
    if (sparsity < 0.0 || sparsity >= 1.0) throw ConfigError("filter_mask: sparsity must be in [0,1)");
    Mask mask;
    for (const auto& l : model.layers) {
        if (l.kind != LayerKind::dense || !l.prunable) continue;
        if (l.out < 1) throw ConfigError("filter_mask: dense layer without rows");
        std::vector<std::pair<double, int32_t>> norms;
        norms.reserve(static_cast<std::size_t>(l.out));
        for (int32_t o = 0; o < l.out; ++o) {
            double sq = 0.0;
            const float* w = l.weight.data() + static_cast<std::size_t>(o) * l.in;
            for (int32_t i = 0; i < l.in; ++i) sq += static_cast<double>(w[i]) * static_cast<double>(w[i]);
            norms.emplace_back(sq, o);
        }
        std::sort(norms.begin(), norms.end());
        const auto prune_rows = static_cast<std::size_t>(sparsity * static_cast<double>(l.out));
        std::vector<uint8_t> bits(l.weight.size(), 1);
        for (std::size_t r = 0; r < prune_rows; ++r) {
            const int32_t o = norms[r].second;
            std::fill(bits.begin() + static_cast<std::size_t>(o) * l.in,
                      bits.begin() + static_cast<std::size_t>(o + 1) * l.in, uint8_t{0});
        }
        mask.tensors.push_back(std::move(bits));
    }
    mask.recount();
    return mask;
}

/// Sets masked coordinates to exactly 0.0. Idempotent.
inline ModelState apply_mask(ModelState model, const Mask& mask) {
    check_congruent(model, mask, "apply_mask");
    auto tensors = prunable_tensors(model);
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        auto& w = *tensors[ti];
        const auto& bits = mask.tensors[ti];
        for (std::size_t i = 0; i < w.size(); ++i)
            if (!bits[i]) w[i] = 0.0f;
    }
    return model;
}

inline double sparsity_of(const Mask& mask) { return mask.sparsity(); }

/// Fraction of exact zeros among prunable coordinates.
inline double sparsity_of(const ModelState& model) {
    uint64_t zeros = 0, total = 0;
    for (const auto* t : prunable_tensors(model)) {
        total += t->size();
        for (float w : *t)
            if (w == 0.0f) ++zeros;
    }
    return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

/// Extracts the zero pattern of a model as a mask (kept = nonzero).
inline Mask mask_from_zeros(const ModelState& model) {
    Mask mask;
    for (const auto* t : prunable_tensors(model)) {
        std::vector<uint8_t> bits(t->size());
        for (std::size_t i = 0; i < t->size(); ++i) bits[i] = (*t)[i] != 0.0f ? 1 : 0;
        mask.tensors.push_back(std::move(bits));
    }
    mask.recount();
    return mask;
}

/// Cumulative sparsity level of the gradual (cubic-ramp) schedule after the
/// events that fall at or before `step`, with num_prune_events uniformly
/// spaced events over total_steps (step 0 excluded, final step included).
inline double gmp_event_level(uint32_t event_index, uint32_t num_prune_events, double s_final) {
    const double frac = static_cast<double>(event_index) / static_cast<double>(num_prune_events);
    return s_final * (1.0 - std::pow(1.0 - frac, 3.0));
}

inline double gmp_target_at(uint64_t step, uint64_t total_steps, double s_final, uint32_t num_prune_events) {
    if (num_prune_events < 1) throw ConfigError("gmp_target_at: num_prune_events must be >= 1");
    if (step > total_steps) throw ConfigError("gmp_target_at: step outside range");
    uint32_t passed = 0;
    for (uint32_t j = 1; j <= num_prune_events; ++j) {
        const auto event_step = static_cast<uint64_t>(
            std::llround(static_cast<double>(j) * static_cast<double>(total_steps) / num_prune_events));
        if (event_step <= step) passed = j;
    }
    return gmp_event_level(passed, num_prune_events, s_final);
}

}  // namespace sparsesoup

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "sparsesoup/data.hpp"
#include "sparsesoup/errors.hpp"
#include "sparsesoup/nn.hpp"

namespace sparsesoup {

struct SubgroupReport {
    std::map<int32_t, double> recall;  // per subgroup id
    double balanced_accuracy = 0.0;    // mean of per-class recalls
};

/// Recall per disjoint subgroup plus balanced accuracy over classes.
inline SubgroupReport subgroup_recall(const ModelState& model, const Dataset& data) {
    if (!data.has_subgroups()) throw ConfigError("subgroup_recall: dataset has no subgroup labels");
    if (data.size() == 0) throw ConfigError("subgroup_recall: empty dataset");

    std::vector<uint32_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0u);
    detail::FwdCtx ctx;
    detail::run_forward(const_cast<ModelState&>(model), data, idx, Mode::eval, false, nullptr, ctx);
    const auto C = static_cast<std::size_t>(model.output_dim());

    std::map<int32_t, std::pair<uint64_t, uint64_t>> group_counts;  // id -> (correct, total)
    std::vector<uint64_t> class_correct(static_cast<std::size_t>(data.num_classes), 0);
    std::vector<uint64_t> class_total(static_cast<std::size_t>(data.num_classes), 0);
    for (std::size_t b = 0; b < data.size(); ++b) {
        const double* z = ctx.logits.data() + b * C;
        std::size_t arg = 0;
        double best = z[0];
        for (std::size_t c = 1; c < C; ++c)
            if (z[c] > best) {
                best = z[c];
                arg = c;
            }
        const bool correct = static_cast<int32_t>(arg) == data.labels[b];
        auto& gc = group_counts[data.subgroup[b]];
        gc.first += correct ? 1 : 0;
        gc.second += 1;
        class_correct[static_cast<std::size_t>(data.labels[b])] += correct ? 1 : 0;
        class_total[static_cast<std::size_t>(data.labels[b])] += 1;
    }

    SubgroupReport rep;
    for (const auto& [gid, counts] : group_counts) {
        if (counts.second == 0) throw ConfigError("subgroup_recall: empty subgroup");
        rep.recall[gid] = static_cast<double>(counts.first) / static_cast<double>(counts.second);
    }
    double acc_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < class_total.size(); ++c) {
        if (class_total[c] == 0) continue;
        acc_sum += static_cast<double>(class_correct[c]) / static_cast<double>(class_total[c]);
        ++present;
    }
    rep.balanced_accuracy = present == 0 ? 0.0 : acc_sum / static_cast<double>(present);
    return rep;
}

/// Mean accuracy over the Cartesian product of corruption kinds and severities
/// 1..5, each corruption applied to the full clean set. The kind list is
/// canonicalized internally so iteration order cannot matter.
inline double ood_accuracy(const ModelState& model, const Dataset& clean_data, std::vector<CorruptionKind> kinds,
                           uint8_t min_severity = 1, uint8_t max_severity = 5, float magnitude_scale = 1.0f) {
    if (kinds.empty()) throw ConfigError("ood_accuracy: need at least one corruption kind");
    if (min_severity < 1 || max_severity > 5 || min_severity > max_severity)
        throw ConfigError("ood_accuracy: severities must satisfy 1 <= min <= max <= 5");
    std::sort(kinds.begin(), kinds.end());
    kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());

    double acc_sum = 0.0;
    std::size_t count = 0;
    for (CorruptionKind kind : kinds)
        for (uint8_t s = min_severity; s <= max_severity; ++s) {
            const CorruptionSpec spec{kind, s, magnitude_scale};
            acc_sum += evaluate(model, corrupt(clean_data, spec)).accuracy;
            ++count;
        }
    return acc_sum / static_cast<double>(count);
}

}  // namespace sparsesoup

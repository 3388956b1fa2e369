#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sparsesoup/errors.hpp"
#include "sparsesoup/rng.hpp"

namespace sparsesoup {

struct Dataset {
    std::vector<float> inputs;     // row-major [n, dim]
    std::vector<int32_t> labels;   // [n], values in [0, num_classes)
    std::vector<int32_t> subgroup; // [n] when present, else empty
    int32_t num_classes = 0;
    int32_t dim = 0;
    std::string name;
    uint64_t seed = 0;

    std::size_t size() const { return labels.size(); }
    bool has_subgroups() const { return !subgroup.empty(); }
    const float* row(std::size_t i) const { return inputs.data() + i * static_cast<std::size_t>(dim); }
};

enum class CorruptionKind : uint8_t { gaussian_noise = 0, uniform_noise = 1, feature_dropout = 2, affine_shift = 3 };

inline const char* to_string(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::gaussian_noise: return "gaussian_noise";
        case CorruptionKind::uniform_noise: return "uniform_noise";
        case CorruptionKind::feature_dropout: return "feature_dropout";
        case CorruptionKind::affine_shift: return "affine_shift";
    }
    return "?";
}

inline CorruptionKind corruption_kind_from_string(const std::string& s) {
    if (s == "gaussian_noise") return CorruptionKind::gaussian_noise;
    if (s == "uniform_noise") return CorruptionKind::uniform_noise;
    if (s == "feature_dropout") return CorruptionKind::feature_dropout;
    if (s == "affine_shift") return CorruptionKind::affine_shift;
    throw ConfigError("unknown corruption kind: " + s);
}

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::gaussian_noise;
    uint8_t severity = 1;      // 1..5
    float magnitude_scale = 1.0f;  // global multiplier; 0 disables the perturbation

    void validate() const {
        if (severity < 1 || severity > 5) throw ConfigError("corruption severity must be in 1..5");
        if (magnitude_scale < 0.0f) throw ConfigError("corruption magnitude_scale must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Synthetic blobs
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> class_mean(int32_t cls, int32_t num_classes, int32_t dim) {
    std::vector<double> mu(static_cast<std::size_t>(dim), 0.0);
    const double radius = 3.0;
    if (dim >= 2) {
        const double angle = 2.0 * std::numbers::pi * cls / num_classes;
        mu[0] = radius * std::cos(angle);
        mu[1] = radius * std::sin(angle);
    } else {
        mu[0] = radius * (cls - (num_classes - 1) / 2.0);
    }
    return mu;
}

}  // namespace detail

/// Gaussian clusters with class-dependent means on a circle of radius 3 (axis
/// spaced for dim == 1). With subgroup_skew set, the trailing
/// round(skew * n_per_class) samples of each class form a minority subgroup
/// shifted by a fixed unit offset; subgroup id = 2*class + minority.
inline Dataset gen_blobs(uint32_t num_classes, uint32_t dim, uint32_t n_per_class, float spread, uint64_t seed,
                         std::optional<float> subgroup_skew = std::nullopt) {
    if (num_classes < 2) throw ConfigError("gen_blobs: num_classes must be >= 2");
    if (dim < 1 || n_per_class < 1) throw ConfigError("gen_blobs: dim and n_per_class must be >= 1");
    if (subgroup_skew && (*subgroup_skew < 0.0f || *subgroup_skew > 1.0f))
        throw ConfigError("gen_blobs: subgroup_skew must be in [0,1]");

    Dataset d;
    d.num_classes = static_cast<int32_t>(num_classes);
    d.dim = static_cast<int32_t>(dim);
    d.seed = seed;
    d.name = "blobs";
    const std::size_t n = static_cast<std::size_t>(num_classes) * n_per_class;
    d.inputs.reserve(n * dim);
    d.labels.reserve(n);
    if (subgroup_skew) d.subgroup.reserve(n);

    for (uint32_t c = 0; c < num_classes; ++c) {
        Rng rng(seed_mix(seed, 0x626c6f62ull, c));
        const auto mu = detail::class_mean(static_cast<int32_t>(c), d.num_classes, d.dim);
        // Minority offset: unit vector rotated half a class sector, fixed magnitude.
        std::vector<double> offset(dim, 0.0);
        if (dim >= 2) {
            const double angle = 2.0 * std::numbers::pi * (c + 0.5) / num_classes;
            offset[0] = std::cos(angle);
            offset[1] = std::sin(angle);
        } else {
            offset[0] = 1.0;
        }
        const uint32_t minority = subgroup_skew
            ? static_cast<uint32_t>(std::llround(static_cast<double>(*subgroup_skew) * n_per_class))
            : 0;
        for (uint32_t i = 0; i < n_per_class; ++i) {
            const bool is_minority = i >= n_per_class - minority;
            for (uint32_t k = 0; k < dim; ++k) {
                double x = mu[k] + static_cast<double>(spread) * rng.gaussian();
                if (is_minority) x += offset[k];
                d.inputs.push_back(static_cast<float>(x));
            }
            d.labels.push_back(static_cast<int32_t>(c));
            if (subgroup_skew) d.subgroup.push_back(static_cast<int32_t>(2 * c + (is_minority ? 1 : 0)));
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Train/val split
// ---------------------------------------------------------------------------

namespace detail {

inline Dataset take(const Dataset& src, const std::vector<uint32_t>& idx, const std::string& suffix) {
    Dataset out;
    out.num_classes = src.num_classes;
    out.dim = src.dim;
    out.seed = src.seed;
    out.name = src.name + suffix;
    out.inputs.reserve(idx.size() * src.dim);
    out.labels.reserve(idx.size());
    if (src.has_subgroups()) out.subgroup.reserve(idx.size());
    for (uint32_t i : idx) {
        const float* r = src.row(i);
        out.inputs.insert(out.inputs.end(), r, r + src.dim);
        out.labels.push_back(src.labels[i]);
        if (src.has_subgroups()) out.subgroup.push_back(src.subgroup[i]);
    }
    return out;
}

}  // namespace detail

/// Deterministic stratified split. |val| = round(val_fraction * n), apportioned
/// over classes by largest remainder so per-class proportions hold to +-1.
inline std::pair<Dataset, Dataset> split_train_val(const Dataset& data, float val_fraction, uint64_t seed) {
    if (!(val_fraction > 0.0f && val_fraction < 1.0f)) throw ConfigError("split_train_val: val_fraction must be in (0,1)");
    const std::size_t n = data.size();
    if (n == 0) throw ConfigError("split_train_val: empty dataset");

    std::vector<std::vector<uint32_t>> by_class(static_cast<std::size_t>(data.num_classes));
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(static_cast<uint32_t>(i));
    for (std::size_t c = 0; c < by_class.size(); ++c)
        if (!by_class[c].empty() && by_class[c].size() < 2)
            throw ConfigError("split_train_val: class " + std::to_string(c) + " has fewer than 2 samples");

    const auto total_val = static_cast<std::size_t>(std::llround(static_cast<double>(val_fraction) * static_cast<double>(n)));
    // Largest-remainder apportionment, clamped to [1, n_c - 1] per class.
    std::vector<std::size_t> val_count(by_class.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;  // (-frac, class)
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].empty()) continue;
        const double quota = static_cast<double>(val_fraction) * static_cast<double>(by_class[c].size());
        val_count[c] = static_cast<std::size_t>(quota);
        remainders.emplace_back(-(quota - static_cast<double>(val_count[c])), c);
        assigned += val_count[c];
    }
    std::sort(remainders.begin(), remainders.end());
    for (const auto& [negfrac, c] : remainders) {
        if (assigned >= total_val) break;
        if (val_count[c] < by_class[c].size() - 1) {
            ++val_count[c];
            ++assigned;
        }
    }
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].empty()) continue;
        if (val_count[c] == 0) val_count[c] = 1;
        if (val_count[c] > by_class[c].size() - 1) val_count[c] = by_class[c].size() - 1;
    }

    std::vector<uint32_t> val_idx, train_idx;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].empty()) continue;
        Rng rng(seed_mix(seed, 0x73706c6974ull, c));
        const auto perm = rng.permutation(static_cast<uint32_t>(by_class[c].size()));
        for (std::size_t k = 0; k < perm.size(); ++k) {
            const uint32_t idx = by_class[c][perm[k]];
            (k < val_count[c] ? val_idx : train_idx).push_back(idx);
        }
    }
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    return {detail::take(data, train_idx, "/train"), detail::take(data, val_idx, "/val")};
}

// ---------------------------------------------------------------------------
// Corruptions
// ---------------------------------------------------------------------------

/// Severity-scaled input perturbation; labels, subgroups and shapes unchanged.
/// Deterministic in (data.seed, kind, severity).
inline Dataset corrupt(const Dataset& data, const CorruptionSpec& spec) {
    spec.validate();
    Dataset out = data;
    out.name = data.name + "+" + to_string(spec.kind) + std::to_string(static_cast<int>(spec.severity));
    Rng rng(seed_mix(data.seed, 0x636f7272ull, static_cast<uint64_t>(spec.kind), spec.severity));
    const double s = static_cast<double>(spec.severity) * static_cast<double>(spec.magnitude_scale);
    switch (spec.kind) {
        case CorruptionKind::gaussian_noise: {
            const double sigma = 0.08 * s;
            for (auto& x : out.inputs) x = static_cast<float>(x + sigma * rng.gaussian());
            break;
        }
        case CorruptionKind::uniform_noise: {
            const double amp = 0.15 * s;
            for (auto& x : out.inputs) x = static_cast<float>(x + rng.uniform(-amp, amp));
            break;
        }
        case CorruptionKind::feature_dropout: {
            const double p = std::min(1.0, 0.05 * s);
            for (auto& x : out.inputs)
                if (rng.unit() < p) x = 0.0f;
            break;
        }
        case CorruptionKind::affine_shift: {
            const double gain = 1.0 + 0.03 * s;
            const double shift = 0.05 * s;
            for (auto& x : out.inputs) x = static_cast<float>(gain * x + shift);
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Index batches over the dataset. fixed_order = true yields canonical order
/// (independent of seed); otherwise one seed-derived permutation. The last
/// partial batch is kept.
inline std::vector<std::vector<uint32_t>> batches(const Dataset& data, uint32_t batch_size, uint64_t seed,
                                                  bool fixed_order) {
    if (batch_size < 1) throw ConfigError("batches: batch_size must be >= 1");
    const auto n = static_cast<uint32_t>(data.size());
    std::vector<uint32_t> order;
    if (fixed_order) {
        order.resize(n);
        for (uint32_t i = 0; i < n; ++i) order[i] = i;
    } else {
        order = Rng(seed_mix(seed, 0x6261746368ull)).permutation(n);
    }
    std::vector<std::vector<uint32_t>> out;
    out.reserve((n + batch_size - 1) / batch_size);
    for (uint32_t start = 0; start < n; start += batch_size) {
        const uint32_t end = std::min(n, start + batch_size);
        out.emplace_back(order.begin() + start, order.begin() + end);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV import
// ---------------------------------------------------------------------------

/// Loads a dataset from CSV: feature columns in file order, one column named
/// "label", optional "subgroup".
inline Dataset load_csv_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty dataset csv: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    int label_col = -1, subgroup_col = -1;
    std::vector<int> feature_cols;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "label") label_col = static_cast<int>(i);
        else if (header[i] == "subgroup") subgroup_col = static_cast<int>(i);
        else feature_cols.push_back(static_cast<int>(i));
    }
    if (label_col < 0) throw IoError("dataset csv missing 'label' column: " + path);
    if (feature_cols.empty()) throw IoError("dataset csv has no feature columns: " + path);

    Dataset d;
    d.dim = static_cast<int32_t>(feature_cols.size());
    d.name = path;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != header.size())
            throw IoError("dataset csv row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                          " cells, expected " + std::to_string(header.size()));
        try {
            for (int c : feature_cols) {
                const float v = std::stof(cells[static_cast<std::size_t>(c)]);
                if (!std::isfinite(v)) throw std::invalid_argument("non-finite");
                d.inputs.push_back(v);
            }
            d.labels.push_back(static_cast<int32_t>(std::stol(cells[static_cast<std::size_t>(label_col)])));
            if (subgroup_col >= 0) d.subgroup.push_back(static_cast<int32_t>(std::stol(cells[static_cast<std::size_t>(subgroup_col)])));
        } catch (const std::exception&) {
            throw IoError("dataset csv row " + std::to_string(line_no) + ": bad numeric value");
        }
    }
    if (d.labels.empty()) throw IoError("dataset csv has no data rows: " + path);
    int32_t max_label = 0;
    for (int32_t l : d.labels) {
        if (l < 0) throw IoError("dataset csv: negative label");
        max_label = std::max(max_label, l);
    }
    d.num_classes = max_label + 1;
    d.seed = splitmix64(std::hash<std::string>{}(path));
    return d;
}

}  // namespace sparsesoup

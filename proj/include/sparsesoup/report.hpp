#pragma once

// Experiment CSV emission and Table-shaped aggregation. Fixed column set:
//   run_id,method,phase,sparsity,m,entity,val_acc,test_acc,ood_acc,speedup,
//   l2_mean,l2_max,seed,timestamp
// entity is one of replica_<i> | soup | best | mean. Non-applicable cells stay
// empty. The timestamp is isolated in the final column so determinism checks
// can strip it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sparsesoup/errors.hpp"
#include "sparsesoup/orchestrator.hpp"

namespace sparsesoup {

struct MetricRow {
    std::string run_id;
    std::string method;
    uint32_t phase = 0;
    double sparsity = 0.0;
    uint32_t m = 1;
    std::string entity;
    std::optional<double> val_acc, test_acc, ood_acc, speedup, l2_mean, l2_max;
    uint64_t seed = 0;
    std::string timestamp;
};

inline const char* metric_csv_header() {
    return "run_id,method,phase,sparsity,m,entity,val_acc,test_acc,ood_acc,speedup,l2_mean,l2_max,seed,timestamp";
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

}  // namespace detail

inline std::string to_csv_line(const MetricRow& r) {
    std::ostringstream out;
    out << r.run_id << ',' << r.method << ',' << r.phase << ',' << detail::fmt_double(r.sparsity) << ',' << r.m << ','
        << r.entity << ',' << detail::fmt_opt(r.val_acc) << ',' << detail::fmt_opt(r.test_acc) << ','
        << detail::fmt_opt(r.ood_acc) << ',' << detail::fmt_opt(r.speedup) << ',' << detail::fmt_opt(r.l2_mean) << ','
        << detail::fmt_opt(r.l2_max) << ',' << r.seed << ',' << r.timestamp;
    return out.str();
}

/// Per phase: one row per replica, then soup / best / mean aggregate rows.
inline std::vector<MetricRow> rows_from_record(const RunRecord& record, const std::string& run_id,
                                               const std::string& method, uint64_t seed,
                                               const std::string& timestamp) {
    std::vector<MetricRow> rows;
    for (const auto& p : record.phases) {
        MetricRow base;
        base.run_id = run_id;
        base.method = method;
        base.phase = p.phase;
        base.sparsity = p.recorded_sparsity;
        base.m = p.m;
        base.seed = seed;
        base.timestamp = timestamp;
        base.speedup = p.flops.speedup();

        for (std::size_t i = 0; i < p.candidate_val.size(); ++i) {
            MetricRow r = base;
            r.entity = "replica_" + std::to_string(i);
            r.val_acc = p.candidate_val[i];
            r.test_acc = p.candidate_test[i];
            if (!p.candidate_ood.empty()) r.ood_acc = p.candidate_ood[i];
            rows.push_back(std::move(r));
        }
        MetricRow soup = base;
        soup.entity = "soup";
        soup.val_acc = p.soup_val;
        soup.test_acc = p.soup_test;
        if (p.has_ood) soup.ood_acc = p.soup_ood;
        if (p.l2) {
            soup.l2_mean = p.l2->mean;
            soup.l2_max = p.l2->max;
        }
        rows.push_back(std::move(soup));

        MetricRow best = base;
        best.entity = "best";
        best.val_acc = p.best_val;
        best.test_acc = p.best_test;
        if (!p.candidate_ood.empty())
            best.ood_acc = *std::max_element(p.candidate_ood.begin(), p.candidate_ood.end());
        rows.push_back(std::move(best));

        MetricRow mean = base;
        mean.entity = "mean";
        mean.val_acc = p.mean_val;
        mean.test_acc = p.mean_test;
        if (!p.candidate_ood.empty()) {
            double s = 0.0;
            for (double v : p.candidate_ood) s += v;
            mean.ood_acc = s / static_cast<double>(p.candidate_ood.size());
        }
        rows.push_back(std::move(mean));
    }
    return rows;
}

inline void write_metric_csv(const std::string& path, const std::vector<MetricRow>& rows, bool append = false) {
    const bool exists = std::filesystem::exists(path);
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw IoError("cannot open csv for writing: " + path);
    if (!append || !exists) out << metric_csv_header() << '\n';
    for (const auto& r : rows) out << to_csv_line(r) << '\n';
}

// ---------------------------------------------------------------------------
// Parsing and aggregation
// ---------------------------------------------------------------------------

inline std::vector<MetricRow> read_metric_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty csv: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != metric_csv_header()) throw IoError("unexpected csv header in " + path);

    auto opt_field = [](const std::string& s) -> std::optional<double> {
        if (s.empty()) return std::nullopt;
        return std::stod(s);
    };
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        cells.resize(14);
        MetricRow r;
        r.run_id = cells[0];
        r.method = cells[1];
        r.phase = static_cast<uint32_t>(std::stoul(cells[2]));
        r.sparsity = std::stod(cells[3]);
        r.m = static_cast<uint32_t>(std::stoul(cells[4]));
        r.entity = cells[5];
        r.val_acc = opt_field(cells[6]);
        r.test_acc = opt_field(cells[7]);
        r.ood_acc = opt_field(cells[8]);
        r.speedup = opt_field(cells[9]);
        r.l2_mean = opt_field(cells[10]);
        r.l2_max = opt_field(cells[11]);
        r.seed = std::stoull(cells[12]);
        r.timestamp = cells[13];
        rows.push_back(std::move(r));
    }
    return rows;
}

/// Aggregated summary: per (method, phase, entity in {soup, best, mean}),
/// mean and sample standard deviation over seeds. Output schema:
///   method,phase,sparsity,m,entity,n_seeds,val_mean,val_std,test_mean,
///   test_std,ood_mean,ood_std
inline std::string summarize_rows(std::vector<MetricRow> rows) {
    const auto entity_rank = [](const std::string& e) { return e == "soup" ? 0 : e == "best" ? 1 : 2; };
    rows.erase(std::remove_if(rows.begin(), rows.end(),
                              [](const MetricRow& r) {
                                  return r.entity != "soup" && r.entity != "best" && r.entity != "mean";
                              }),
               rows.end());

    struct Key {
        std::string method;
        uint32_t phase;
        std::string entity;
        bool operator<(const Key& o) const {
            if (method != o.method) return method < o.method;
            if (phase != o.phase) return phase < o.phase;
            return entity < o.entity;
        }
    };
    struct Acc {
        std::vector<double> val, test, ood;
        double sparsity = 0.0;
        uint32_t m = 1;
        int rank = 0;
    };
    std::map<Key, Acc> groups;
    for (const auto& r : rows) {
        auto& g = groups[{r.method, r.phase, r.entity}];
        if (r.val_acc) g.val.push_back(*r.val_acc);
        if (r.test_acc) g.test.push_back(*r.test_acc);
        if (r.ood_acc) g.ood.push_back(*r.ood_acc);
        g.sparsity = r.sparsity;
        g.m = r.m;
        g.rank = entity_rank(r.entity);
    }

    auto mean_std = [](const std::vector<double>& v) -> std::pair<std::string, std::string> {
        if (v.empty()) return {"", ""};
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        return {detail::fmt_double(mean), detail::fmt_double(sd)};
    };

    std::vector<std::pair<Key, const Acc*>> ordered;
    for (const auto& [k, a] : groups) ordered.emplace_back(k, &a);
    std::sort(ordered.begin(), ordered.end(), [&](const auto& a, const auto& b) {
        if (a.first.method != b.first.method) return a.first.method < b.first.method;
        if (a.first.phase != b.first.phase) return a.first.phase < b.first.phase;
        return a.second->rank < b.second->rank;
    });

    std::ostringstream out;
    out << "method,phase,sparsity,m,entity,n_seeds,val_mean,val_std,test_mean,test_std,ood_mean,ood_std\n";
    for (const auto& [k, a] : ordered) {
        const auto [vm, vs] = mean_std(a->val);
        const auto [tm, ts] = mean_std(a->test);
        const auto [om, os] = mean_std(a->ood);
        out << k.method << ',' << k.phase << ',' << detail::fmt_double(a->sparsity) << ',' << a->m << ',' << k.entity
            << ',' << a->test.size() << ',' << vm << ',' << vs << ',' << tm << ',' << ts << ',' << om << ',' << os
            << '\n';
    }
    return out.str();
}

}  // namespace sparsesoup

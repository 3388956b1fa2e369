#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "sparsesoup/errors.hpp"

namespace sparsesoup {

enum class ScheduleKind : uint8_t {
    FT,        // constant at the original final learning rate
    LRW,       // replay the last T - T_rt epochs of the original curve
    SLR,       // original curve time-compressed into the retrain window, short warm-up
    CLR,       // cosine decay from eta_1, short warm-up
    LLR,       // linear decay eta_1 -> 0
    ALLR,      // LLR with initial LR adapted to pruning damage and budget
    ORIGINAL,  // follow the original curve by global epoch (pretraining, GMP/DPF)
};

inline const char* to_string(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::FT: return "FT";
        case ScheduleKind::LRW: return "LRW";
        case ScheduleKind::SLR: return "SLR";
        case ScheduleKind::CLR: return "CLR";
        case ScheduleKind::LLR: return "LLR";
        case ScheduleKind::ALLR: return "ALLR";
        case ScheduleKind::ORIGINAL: return "ORIGINAL";
    }
    return "?";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "FT") return ScheduleKind::FT;
    if (s == "LRW") return ScheduleKind::LRW;
    if (s == "SLR") return ScheduleKind::SLR;
    if (s == "CLR") return ScheduleKind::CLR;
    if (s == "LLR") return ScheduleKind::LLR;
    if (s == "ALLR") return ScheduleKind::ALLR;
    throw ConfigError("unknown retrain schedule: " + s);
}

/// The learning-rate curve of the original (pre-pruning) training run,
/// resolved per epoch. Either linear from eta_1 to eta_T over T epochs, or
/// piecewise constant given as (last_epoch_1based, lr) segments.
struct OriginalCurve {
    float eta_1 = 0.1f;
    float eta_T = 0.0f;
    uint32_t epochs = 1;
    std::vector<std::pair<uint32_t, float>> pieces;  // ascending last-epoch bounds; empty => linear

    /// LR for 0-based epoch index e (epoch e corresponds to t = e + 1).
    float at_epoch(uint32_t e) const {
        if (e >= epochs) e = epochs - 1;
        if (pieces.empty()) {
            if (epochs <= 1) return eta_1;
            const double u = static_cast<double>(e) / static_cast<double>(epochs - 1);
            return static_cast<float>(eta_1 + (static_cast<double>(eta_T) - eta_1) * u);
        }
        const uint32_t t = e + 1;
        for (const auto& [last, lr] : pieces)
            if (t <= last) return lr;
        return pieces.back().second;
    }

    void validate() const {
        if (epochs < 1) throw ConfigError("original curve: epochs must be >= 1");
        if (!pieces.empty()) {
            uint32_t prev = 0;
            for (const auto& [last, lr] : pieces) {
                if (last <= prev) throw ConfigError("original curve: piecewise bounds must be strictly increasing");
                if (lr < 0.0f) throw ConfigError("original curve: negative learning rate");
                prev = last;
            }
            if (pieces.back().first != epochs) throw ConfigError("original curve: last piece must end at final epoch");
        }
    }
};

/// eta_init = min(eta_1, max(eta_T, eta_1 * drop * min(1, T_rt / (0.1 T)))).
/// drop is the relative validation-accuracy degradation caused by the pruning
/// step, clamped to [0, 1].
inline float allr_init(float eta_1, float eta_T, uint32_t T, uint32_t T_rt, float drop) {
    drop = std::clamp(drop, 0.0f, 1.0f);
    const double budget = std::min(1.0, static_cast<double>(T_rt) / (0.1 * static_cast<double>(T)));
    const double raw = static_cast<double>(eta_1) * drop * budget;
    return static_cast<float>(std::min(static_cast<double>(eta_1), std::max(static_cast<double>(eta_T), raw)));
}

struct RetrainSchedule {
    ScheduleKind variant = ScheduleKind::LLR;
    float eta_1 = 0.1f;   // original initial LR
    float eta_T = 0.0f;   // original final LR
    uint32_t T = 1;       // original training epochs
    uint32_t T_rt = 1;    // retraining epochs
    OriginalCurve original;
    std::optional<float> allr_drop;    // ALLR only
    std::optional<float> initial_lr;   // optional override of the LLR/ALLR starting LR

    void validate() const {
        if (T_rt < 1) throw ConfigError("retrain schedule: T_rt must be >= 1");
        if (eta_1 < eta_T || eta_T < 0.0f) throw ConfigError("retrain schedule: need eta_1 >= eta_T >= 0");
        if (variant == ScheduleKind::LRW && T_rt > T) throw ConfigError("LRW: T_rt must be <= T");
        if (allr_drop && (*allr_drop < 0.0f || *allr_drop > 1.0f)) throw ConfigError("allr_drop must be in [0,1]");
    }
};

namespace detail {

// Warm-up spans the first 5% of retraining steps (at least one step).
inline uint64_t warmup_steps(uint64_t total) { return std::max<uint64_t>(1, total / 20); }

}  // namespace detail

/// LR for a global retraining step in [0, T_rt * steps_per_epoch).
inline float lr_at(const RetrainSchedule& s, uint64_t step, uint32_t steps_per_epoch) {
    if (steps_per_epoch < 1) throw ConfigError("lr_at: steps_per_epoch must be >= 1");
    const uint64_t total = static_cast<uint64_t>(s.T_rt) * steps_per_epoch;
    if (step >= total) throw ConfigError("lr_at: step out of range");

    switch (s.variant) {
        case ScheduleKind::FT:
            return s.eta_T;
        case ScheduleKind::ORIGINAL:
            return s.original.at_epoch(static_cast<uint32_t>(step / steps_per_epoch));
        case ScheduleKind::LRW: {
            const auto epoch = static_cast<uint32_t>(step / steps_per_epoch);
            return s.original.at_epoch(s.T - s.T_rt + epoch);
        }
        case ScheduleKind::SLR: {
            const uint64_t warm = detail::warmup_steps(total);
            const float peak = s.original.at_epoch(0);
            if (step < warm) return static_cast<float>(peak * static_cast<double>(step + 1) / static_cast<double>(warm));
            if (total == warm) return peak;
            const double u = static_cast<double>(step - warm) / static_cast<double>(total - warm);
            const auto epoch = static_cast<uint32_t>(std::min<double>(s.T - 1, std::floor(u * s.T)));
            return s.original.at_epoch(epoch);
        }
        case ScheduleKind::CLR: {
            const uint64_t warm = detail::warmup_steps(total);
            if (step < warm) return static_cast<float>(s.eta_1 * static_cast<double>(step + 1) / static_cast<double>(warm));
            if (total == warm) return s.eta_1;
            const double u = static_cast<double>(step - warm) / static_cast<double>(total - warm);
            return static_cast<float>(s.eta_1 * 0.5 * (1.0 + std::cos(std::numbers::pi * u)));
        }
        case ScheduleKind::LLR:
        case ScheduleKind::ALLR: {
            double eta_init = s.eta_1;
            if (s.variant == ScheduleKind::ALLR) {
                if (!s.allr_drop) throw ConfigError("ALLR schedule requires allr_drop");
                eta_init = allr_init(s.eta_1, s.eta_T, s.T, s.T_rt, *s.allr_drop);
            }
            if (s.initial_lr) eta_init = *s.initial_lr;
            return static_cast<float>(eta_init * (1.0 - static_cast<double>(step) / static_cast<double>(total)));
        }
    }
    throw ConfigError("lr_at: unhandled schedule variant");
}

}  // namespace sparsesoup

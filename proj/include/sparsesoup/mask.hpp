#pragma once

#include <cstdint>
#include <vector>

namespace sparsesoup {

/// Boolean keep/prune pattern over a model's prunable tensors (dense weight
/// matrices, in layer order). 1 = kept, 0 = pruned (permanently zero).
struct Mask {
    std::vector<std::vector<uint8_t>> tensors;
    uint64_t kept = 0;
    uint64_t total = 0;

    double sparsity() const { return total == 0 ? 0.0 : static_cast<double>(total - kept) / static_cast<double>(total); }

    void recount() {
        kept = 0;
        total = 0;
        for (const auto& t : tensors) {
            total += t.size();
            for (uint8_t b : t) kept += b;
        }
    }

    bool operator==(const Mask& other) const { return tensors == other.tensors; }
};

}  // namespace sparsesoup

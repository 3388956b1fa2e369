#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <string>

#include "sparsesoup/checkpoint.hpp"
#include "sparsesoup/nn.hpp"
#include "sparsesoup/pruning.hpp"

using namespace sparsesoup;

namespace {

std::pair<ModelState, Mask> masked_model(uint64_t seed) {
    ModelState m = init_model(ArchSpec{{3, 6, 4}, true}, seed);
    const Mask mask = magnitude_mask(m, 0.4, full_mask(m));
    return {apply_mask(m, mask), mask};
}

}  // namespace

TEST_CASE("checkpoint round trip is byte-identical") {
    auto [m, mask] = masked_model(1);
    m.bn_stale = false;
    const CheckpointMeta meta{"deadbeefcafef00d", 2, 1, 42};
    const std::string bytes = serialize_checkpoint(m, mask, meta);
    const LoadedCheckpoint loaded = deserialize_checkpoint(bytes);
    REQUIRE(loaded.meta == meta);
    REQUIRE(loaded.mask == mask);
    REQUIRE(loaded.model.arch == m.arch);
    const std::string again = serialize_checkpoint(loaded.model, loaded.mask, loaded.meta);
    REQUIRE(again == bytes);
}

TEST_CASE("checkpoint file save/load") {
    namespace fs = std::filesystem;
    auto [m, mask] = masked_model(2);
    const auto path = (fs::temp_directory_path() / "sparsesoup_ckpt_test.ckpt").string();
    save_checkpoint(m, mask, CheckpointMeta{"00", 1, -1, 7}, path);
    const auto loaded = load_checkpoint(path);
    REQUIRE(serialize_checkpoint(loaded.model, loaded.mask, loaded.meta) ==
            serialize_checkpoint(m, mask, CheckpointMeta{"00", 1, -1, 7}));
    fs::remove(path);
    REQUIRE_THROWS_AS(load_checkpoint(path), IoError);
}

TEST_CASE("checkpoint rejects corruption") {
    auto [m, mask] = masked_model(3);
    const CheckpointMeta meta{"aa", 1, 0, 1};
    const std::string bytes = serialize_checkpoint(m, mask, meta);

    SECTION("truncation at any boundary") {
        for (const std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{7}, bytes.size() / 2,
                                       bytes.size() - 1}) {
            REQUIRE_THROWS_AS(deserialize_checkpoint(bytes.substr(0, keep)), IoError);
        }
    }
    SECTION("trailing garbage") { REQUIRE_THROWS_AS(deserialize_checkpoint(bytes + "x"), IoError); }
    SECTION("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        REQUIRE_THROWS_AS(deserialize_checkpoint(bad), IoError);
    }
    SECTION("unsupported version") {
        std::string bad = bytes;
        bad[4] = 99;
        REQUIRE_THROWS_AS(deserialize_checkpoint(bad), IoError);
    }
    SECTION("masked coordinate with a nonzero stored weight") {
        ModelState inconsistent = m;
        std::size_t flipped = 0;
        auto tensors = prunable_tensors(inconsistent);
        for (std::size_t i = 0; i < mask.tensors[0].size(); ++i)
            if (!mask.tensors[0][i] && flipped == 0) {
                (*tensors[0])[i] = 0.125f;
                flipped = 1;
            }
        REQUIRE(flipped == 1);
        const std::string poisoned = serialize_checkpoint(inconsistent, mask, meta);
        REQUIRE_THROWS_AS(deserialize_checkpoint(poisoned), IoError);
    }
}

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "sparsesoup/data.hpp"
#include "sparsesoup/rng.hpp"

using namespace sparsesoup;

TEST_CASE("rng streams are deterministic and seed-sensitive") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const uint64_t x = a.next_u64();
        REQUIRE(x == b.next_u64());
    }
    bool differs = false;
    Rng a2(42);
    for (int i = 0; i < 100; ++i) differs |= a2.next_u64() != c.next_u64();
    REQUIRE(differs);
}

TEST_CASE("rng permutation is a permutation") {
    Rng rng(7);
    const auto p = rng.permutation(257);
    std::set<uint32_t> seen(p.begin(), p.end());
    REQUIRE(seen.size() == 257);
    REQUIRE(*seen.begin() == 0);
    REQUIRE(*seen.rbegin() == 256);
}

TEST_CASE("seed_mix separates streams") {
    REQUIRE(seed_mix(1, 2, 3) != seed_mix(1, 3, 2));
    REQUIRE(seed_mix(1, 2) != seed_mix(2, 1));
}

TEST_CASE("gen_blobs determinism and spread=0 degeneracy") {
    const Dataset a = gen_blobs(3, 2, 10, 0.5f, 7);
    const Dataset b = gen_blobs(3, 2, 10, 0.5f, 7);
    REQUIRE(a.inputs == b.inputs);
    REQUIRE(a.labels == b.labels);

    const Dataset z = gen_blobs(3, 2, 10, 0.0f, 7);
    for (std::size_t i = 0; i < z.size(); ++i) {
        const std::size_t first = static_cast<std::size_t>(z.labels[i]) * 10;  // class-major layout
        REQUIRE(z.row(i)[0] == z.row(first)[0]);
        REQUIRE(z.row(i)[1] == z.row(first)[1]);
    }
    // distinct classes sit at distinct means
    REQUIRE((z.row(0)[0] != z.row(10)[0] || z.row(0)[1] != z.row(10)[1]));
}

TEST_CASE("gen_blobs minority subgroup sizing") {
    const uint32_t n_per_class = 200;
    const Dataset d = gen_blobs(4, 2, n_per_class, 1.0f, 11, 0.05f);
    REQUIRE(d.has_subgroups());
    std::map<int32_t, int> group_count;
    for (int32_t g : d.subgroup) ++group_count[g];
    for (uint32_t c = 0; c < 4; ++c) {
        const int minority = group_count[static_cast<int32_t>(2 * c + 1)];
        REQUIRE(std::abs(minority - 0.05 * n_per_class) <= 1.0);
        REQUIRE(group_count[static_cast<int32_t>(2 * c)] + minority == static_cast<int>(n_per_class));
    }
}

TEST_CASE("split_train_val sizes, partition and stratification") {
    const Dataset d = gen_blobs(10, 2, 100, 1.0f, 3);  // n = 1000
    const auto [train, val] = split_train_val(d, 0.1f, 5);
    REQUIRE(val.size() == 100);
    REQUIRE(train.size() + val.size() == d.size());

    // partition: multiset of (x0, x1, label) rows must match exactly
    auto key = [](const Dataset& ds, std::size_t i) {
        return std::tuple<float, float, int32_t>(ds.row(i)[0], ds.row(i)[1], ds.labels[i]);
    };
    std::multiset<std::tuple<float, float, int32_t>> orig, parts;
    for (std::size_t i = 0; i < d.size(); ++i) orig.insert(key(d, i));
    for (std::size_t i = 0; i < train.size(); ++i) parts.insert(key(train, i));
    for (std::size_t i = 0; i < val.size(); ++i) parts.insert(key(val, i));
    REQUIRE(orig == parts);

    // per-class proportions within +-1 sample
    std::map<int32_t, int> val_count;
    for (int32_t l : val.labels) ++val_count[l];
    for (const auto& [cls, count] : val_count) REQUIRE(std::abs(count - 10) <= 1);
    REQUIRE(val_count.size() == 10);
}

TEST_CASE("split_train_val rejects tiny classes and bad fractions") {
    Dataset d = gen_blobs(2, 2, 5, 1.0f, 1);
    d.labels[0] = 1;
    d.labels[5] = 1;  // leave class 0 with 4, class 1 with 6 -> fine
    REQUIRE_NOTHROW(split_train_val(d, 0.2f, 1));
    Dataset single = gen_blobs(2, 2, 1, 1.0f, 1);  // one sample per class
    REQUIRE_THROWS_AS(split_train_val(single, 0.5f, 1), ConfigError);
    REQUIRE_THROWS_AS(split_train_val(d, 0.0f, 1), ConfigError);
    REQUIRE_THROWS_AS(split_train_val(d, 1.0f, 1), ConfigError);
}

TEST_CASE("corrupt keeps labels and shapes, scales with severity, deterministic") {
    const Dataset d = gen_blobs(3, 4, 50, 1.0f, 21);
    for (auto kind : {CorruptionKind::gaussian_noise, CorruptionKind::uniform_noise, CorruptionKind::feature_dropout,
                      CorruptionKind::affine_shift}) {
        const Dataset c1 = corrupt(d, {kind, 1});
        const Dataset c1b = corrupt(d, {kind, 1});
        REQUIRE(c1.labels == d.labels);
        REQUIRE(c1.inputs.size() == d.inputs.size());
        REQUIRE(c1.inputs == c1b.inputs);
    }
    // gaussian perturbation spread strictly increases with severity
    auto perturbation_sd = [&](uint8_t sev) {
        const Dataset c = corrupt(d, {CorruptionKind::gaussian_noise, sev});
        double sq = 0.0;
        for (std::size_t i = 0; i < d.inputs.size(); ++i) {
            const double diff = static_cast<double>(c.inputs[i]) - d.inputs[i];
            sq += diff * diff;
        }
        return std::sqrt(sq / static_cast<double>(d.inputs.size()));
    };
    double prev = 0.0;
    for (uint8_t s = 1; s <= 5; ++s) {
        const double sd = perturbation_sd(s);
        REQUIRE(sd > prev);
        prev = sd;
    }
    // zero magnitude scale leaves inputs untouched
    const Dataset c0 = corrupt(d, {CorruptionKind::gaussian_noise, 3, 0.0f});
    REQUIRE(c0.inputs == d.inputs);
}

TEST_CASE("batches: sizes, fixed order, reproducible permutations") {
    const Dataset d = gen_blobs(2, 2, 5, 1.0f, 9);  // n = 10
    const auto b = batches(d, 4, 123, false);
    REQUIRE(b.size() == 3);
    REQUIRE(b[0].size() == 4);
    REQUIRE(b[1].size() == 4);
    REQUIRE(b[2].size() == 2);

    const auto fixed1 = batches(d, 3, 1, true);
    const auto fixed2 = batches(d, 3, 999, true);
    REQUIRE(fixed1 == fixed2);
    REQUIRE(fixed1[0] == std::vector<uint32_t>{0, 1, 2});

    REQUIRE(batches(d, 4, 55, false) == batches(d, 4, 55, false));
    REQUIRE(batches(d, 4, 55, false) != batches(d, 4, 56, false));

    // every index appears exactly once
    std::set<uint32_t> seen;
    for (const auto& batch : b)
        for (uint32_t i : batch) REQUIRE(seen.insert(i).second);
    REQUIRE(seen.size() == d.size());
}

TEST_CASE("csv dataset import") {
    namespace fs = std::filesystem;
    const auto path = fs::temp_directory_path() / "sparsesoup_test_data.csv";
    {
        std::ofstream out(path);
        out << "f0,f1,label,subgroup\n";
        out << "0.5,-1.25,0,1\n";
        out << "1.5,2.0,1,0\n";
        out << "0.25,0.75,1,3\n";
    }
    const Dataset d = load_csv_dataset(path.string());
    REQUIRE(d.size() == 3);
    REQUIRE(d.dim == 2);
    REQUIRE(d.num_classes == 2);
    REQUIRE(d.row(0)[1] == -1.25f);
    REQUIRE(d.subgroup == std::vector<int32_t>{1, 0, 3});

    {
        std::ofstream out(path);
        out << "f0,f1\n0.5,1.0\n";
    }
    REQUIRE_THROWS_AS(load_csv_dataset(path.string()), IoError);
    {
        std::ofstream out(path);
        out << "f0,label\n0.5,0\nnot_a_number,1\n";
    }
    REQUIRE_THROWS_AS(load_csv_dataset(path.string()), IoError);
    fs::remove(path);
}

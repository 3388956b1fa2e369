#pragma once

// Checkpoint container: fixed little-endian binary layout so that
// load(save(x)) round-trips byte-identically on any platform.
//
//   magic   "SSCP"            4 bytes
//   version u32               currently 1
//   meta    u32 len + bytes   canonical JSON (arch, provenance)
//   tensors u32 count, then per tensor:
//           u32 name_len + name, u64 numel, numel * f32 (LE)
//   masks   u32 count, then per prunable tensor:
//           u32 name_len + name, u64 numel, ceil(numel/8) bitmap bytes (LSB first)

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsesoup/errors.hpp"
#include "sparsesoup/mask.hpp"
#include "sparsesoup/nn.hpp"

namespace sparsesoup {

constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'S', 'S', 'C', 'P'};

struct CheckpointMeta {
    std::string config_hash;  // hex of the experiment config hash
    uint32_t phase = 0;
    int32_t replica_id = -1;  // -1 = soup / standalone model
    uint64_t seed = 0;

    bool operator==(const CheckpointMeta&) const = default;
};

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

inline void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.append(s);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("checkpoint truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        const uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

/// Serializes model + mask + provenance to a byte string.
inline std::string serialize_checkpoint(const ModelState& model, const Mask& mask, const CheckpointMeta& meta) {
    check_congruent(model, mask, "serialize_checkpoint");
    std::string out;
    out.append(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);

    nlohmann::json j;  // object keys serialize sorted -> canonical bytes
    j["arch"] = {{"layer_sizes", model.arch.layer_sizes}, {"batchnorm", model.arch.batchnorm}};
    j["config_hash"] = meta.config_hash;
    j["phase"] = meta.phase;
    j["replica_id"] = meta.replica_id;
    j["seed"] = meta.seed;
    j["rng_seed"] = model.rng_seed;
    j["bn_stale"] = model.bn_stale;
    detail::put_str(out, j.dump());

    uint32_t tensor_count = 0;
    for_each_tensor(model, [&](const TensorInfo&, const std::vector<float>&) { ++tensor_count; });
    detail::put_u32(out, tensor_count);
    for_each_tensor(model, [&](const TensorInfo& info, const std::vector<float>& v) {
        detail::put_str(out, info.name);
        detail::put_u64(out, v.size());
        for (float f : v) detail::put_f32(out, f);
    });

    detail::put_u32(out, static_cast<uint32_t>(mask.tensors.size()));
    std::size_t ti = 0;
    for_each_tensor(model, [&](const TensorInfo& info, const std::vector<float>&) {
        if (!info.prunable) return;
        const auto& bits = mask.tensors[ti++];
        detail::put_str(out, info.name);
        detail::put_u64(out, bits.size());
        std::string packed((bits.size() + 7) / 8, '\0');
        for (std::size_t i = 0; i < bits.size(); ++i)
            if (bits[i]) packed[i / 8] = static_cast<char>(packed[i / 8] | (1u << (i % 8)));
        out.append(packed);
    });
    return out;
}

struct LoadedCheckpoint {
    ModelState model;
    Mask mask;
    CheckpointMeta meta;
};

/// Parses and validates checkpoint bytes. Rejects bad magic/version,
/// truncation, unknown tensor names and masked coordinates that are not
/// exactly zero in the stored weights.
inline LoadedCheckpoint deserialize_checkpoint(const std::string& bytes) {
    detail::Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw IoError("checkpoint: bad magic");
    r.pos = 4;
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: bad meta: ") + e.what());
    }

    LoadedCheckpoint out;
    try {
        ArchSpec arch;
        arch.layer_sizes = j.at("arch").at("layer_sizes").get<std::vector<uint32_t>>();
        arch.batchnorm = j.at("arch").at("batchnorm").get<bool>();
        out.model = init_model(arch, j.at("rng_seed").get<uint64_t>());
        out.model.bn_stale = j.at("bn_stale").get<bool>();
        out.meta.config_hash = j.at("config_hash").get<std::string>();
        out.meta.phase = j.at("phase").get<uint32_t>();
        out.meta.replica_id = j.at("replica_id").get<int32_t>();
        out.meta.seed = j.at("seed").get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: bad meta: ") + e.what());
    }

    const uint32_t tensor_count = r.u32();
    uint32_t seen = 0;
    for_each_tensor(out.model, [&](const TensorInfo& info, std::vector<float>& v) {
        if (seen >= tensor_count) throw IoError("checkpoint: missing tensor " + info.name);
        const std::string name = r.str();
        if (name != info.name) throw IoError("checkpoint: unexpected tensor '" + name + "', wanted '" + info.name + "'");
        const uint64_t numel = r.u64();
        if (numel != v.size()) throw IoError("checkpoint: tensor size mismatch for " + name);
        for (auto& f : v) f = r.f32();
        ++seen;
    });
    if (seen != tensor_count) throw IoError("checkpoint: extra tensors present");

    const uint32_t mask_count = r.u32();
    uint32_t mask_seen = 0;
    for_each_tensor(out.model, [&](const TensorInfo& info, std::vector<float>& v) {
        if (!info.prunable) return;
        if (mask_seen >= mask_count) throw IoError("checkpoint: missing mask for " + info.name);
        const std::string name = r.str();
        if (name != info.name) throw IoError("checkpoint: unexpected mask '" + name + "'");
        const uint64_t numel = r.u64();
        if (numel != v.size()) throw IoError("checkpoint: mask size mismatch for " + name);
        const std::size_t packed_len = (numel + 7) / 8;
        r.need(packed_len);
        std::vector<uint8_t> bits(numel);
        for (std::size_t i = 0; i < numel; ++i)
            bits[i] = (static_cast<uint8_t>(bytes[r.pos + i / 8]) >> (i % 8)) & 1u;
        r.pos += packed_len;
        for (std::size_t i = 0; i < numel; ++i)
            if (!bits[i] && v[i] != 0.0f)
                throw IoError("checkpoint: masked coordinate with nonzero weight in " + name);
        out.mask.tensors.push_back(std::move(bits));
        ++mask_seen;
    });
    if (mask_seen != mask_count) throw IoError("checkpoint: extra masks present");
    if (r.pos != bytes.size()) throw IoError("checkpoint: trailing bytes");
    out.mask.recount();
    return out;
}

inline void save_checkpoint(const ModelState& model, const Mask& mask, const CheckpointMeta& meta,
                            const std::string& path) {
    const std::string bytes = serialize_checkpoint(model, mask, meta);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace sparsesoup

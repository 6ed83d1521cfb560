#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/lora.hpp"
#include "tinyadapt/model.hpp"
#include "tinyadapt/nf4.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace tinyadapt {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Lowercase hex SHA-256.
inline std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, size, md, &len, EVP_sha256(), nullptr) != 1) throw IntegrityError("SHA-256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xF];
    }
    return out;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string file_digest(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return sha256_hex(bytes.data(), bytes.size());
}

struct StageRecord {
    std::string stage;
    std::string dataset_digest;

    bool operator==(const StageRecord&) const = default;
};

struct Checkpoint {
    AdaptedModel model;
    std::vector<StageRecord> provenance;

    bool has_stage(const std::string& stage) const {
        for (const auto& p : provenance)
            if (p.stage == stage) return true;
        return false;
    }
};

inline nlohmann::json model_config_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers},     {"d_model", c.d_model},         {"n_heads", c.n_heads},
            {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
            {"rope_theta", c.rope_theta}, {"norm_eps", c.norm_eps}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.rope_theta = j.at("rope_theta").get<double>();
    c.norm_eps = j.at("norm_eps").get<double>();
    return c;
}

namespace checkpoint_detail {

using json = nlohmann::json;

struct Blob {
    std::string dtype;  // "f32" or "u4"
    Shape shape;
    const void* data;
    std::size_t length;
};

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const std::string& in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
    return v;
}

inline std::map<std::string, Blob> collect(const AdaptedModel& m) {
    std::map<std::string, Blob> blobs;
    auto f32 = [](const Tensor& t) {
        return Blob{"f32", t.shape(), t.data().data(), t.numel() * sizeof(float)};
    };
    for (const auto& [name, t] : m.base.params) {
        const auto q = m.quantized.find(name);
        if (q == m.quantized.end()) {
            blobs.emplace("base." + name, f32(t));
        } else {
            blobs.emplace("base." + name + ".codes", Blob{"u4", q->second.shape, q->second.codes.data(), q->second.codes.size()});
            blobs.emplace("base." + name + ".scales", Blob{"f32", {q->second.scales.size()}, q->second.scales.data(),
                                                           q->second.scales.size() * sizeof(float)});
        }
    }
    for (const auto& [name, p] : m.adapters.pairs) {
        blobs.emplace("lora." + name + ".A", f32(p.a));
        blobs.emplace("lora." + name + ".B", f32(p.b));
    }
    return blobs;
}

inline std::vector<float> floats_at(const std::string& body, std::size_t offset, std::size_t length) {
    std::vector<float> v(length / sizeof(float));
    std::memcpy(v.data(), body.data() + offset, length);
    return v;
}

}  // namespace checkpoint_detail

/// Container bytes: u64 little-endian header length, JSON header, then the
/// tensor payloads packed in index order.
inline std::string serialize_checkpoint(const Checkpoint& ck) {
    using checkpoint_detail::json;
    const auto& m = ck.model;
    const auto blobs = checkpoint_detail::collect(m);

    json tensors = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, b] : blobs) {
        tensors[name] = {{"dtype", b.dtype}, {"shape", b.shape}, {"offset", offset}, {"length", b.length}};
        offset += b.length;
    }
    json quantized = json::object();
    for (const auto& [name, q] : m.quantized) {
        quantized[name] = {{"block_size", q.block_size}, {"codebook", q.codebook}};
    }
    json lora = nullptr;
    if (m.lora) {
        lora = {{"rank", m.lora->rank}, {"alpha", m.lora->alpha}, {"targets", m.lora->targets}, {"dropout", m.lora->dropout}};
    }
    json provenance = json::array();
    for (const auto& p : ck.provenance) provenance.push_back({{"stage", p.stage}, {"dataset_digest", p.dataset_digest}});

    const json header = {{"format_version", kCheckpointFormatVersion},
                         {"model_config", model_config_json(m.config())},
                         {"lora", lora},
                         {"quantized", quantized},
                         {"tensors", tensors},
                         {"provenance", provenance}};
    const std::string head = header.dump();
    std::string out;
    out.reserve(8 + head.size() + offset);
    checkpoint_detail::put_u64(out, head.size());
    out += head;
    for (const auto& [_, b] : blobs) out.append(static_cast<const char*>(b.data), b.length);
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
    using checkpoint_detail::json;
    if (bytes.size() < 8) throw IntegrityError("checkpoint is shorter than its length prefix");
    const std::uint64_t head_len = checkpoint_detail::get_u64(bytes);
    if (head_len > bytes.size() - 8) throw IntegrityError("checkpoint header is truncated");
    json header;
    try {
        header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(head_len));
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    const std::string body = bytes.substr(8 + head_len);

    try {
        const auto version = header.at("format_version").get<std::uint32_t>();
        if (version != kCheckpointFormatVersion) {
            throw FormatError("checkpoint format_version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointFormatVersion));
        }
        Checkpoint ck;
        auto& m = ck.model;
        m.base.config = model_config_from_json(header.at("model_config"));
        m.base.config.validate();
        const auto expected = parameter_shapes(m.base.config);

        struct Entry {
            std::string dtype;
            Shape shape;
            std::uint64_t offset, length;
        };
        std::map<std::string, Entry> index;
        std::uint64_t cursor = 0;
        for (const auto& [name, e] : header.at("tensors").items()) {
            Entry en{e.at("dtype").get<std::string>(), e.at("shape").get<Shape>(), e.at("offset").get<std::uint64_t>(),
                     e.at("length").get<std::uint64_t>()};
            if (en.dtype != "f32" && en.dtype != "u4") throw FormatError("tensor '" + name + "' has dtype " + en.dtype);
            if (en.offset != cursor) throw FormatError("tensor '" + name + "' offset is not contiguous");
            const std::size_t n = shape_numel(en.shape);
            const std::uint64_t want = en.dtype == "f32" ? n * sizeof(float) : (n + 1) / 2;
            if (en.length != want) throw FormatError("tensor '" + name + "' length does not match its shape");
            cursor += en.length;
            index.emplace(name, std::move(en));
        }
        if (cursor > body.size()) throw IntegrityError("checkpoint payload is truncated");
        if (cursor < body.size()) throw IntegrityError("checkpoint has trailing bytes");

        auto take = [&](const std::string& key) -> const Entry& {
            const auto it = index.find(key);
            if (it == index.end()) throw FormatError("checkpoint is missing tensor '" + key + "'");
            return it->second;
        };

        std::map<std::string, std::size_t> qblocks;
        for (const auto& [name, q] : header.at("quantized").items()) {
            if (q.at("codebook").get<std::string>() != kNf4CodebookId) throw FormatError("unknown codebook for '" + name + "'");
            qblocks[name] = q.at("block_size").get<std::size_t>();
        }

        std::size_t used = 0;
        for (const auto& [name, shape] : expected) {
            const auto qb = qblocks.find(name);
            if (qb == qblocks.end()) {
                const auto& e = take("base." + name);
                if (e.dtype != "f32" || e.shape != shape) throw FormatError("tensor 'base." + name + "' has the wrong shape");
                m.base.params.emplace(name, Tensor(shape, checkpoint_detail::floats_at(body, e.offset, e.length)));
                ++used;
            } else {
                const auto& codes = take("base." + name + ".codes");
                const auto& scales = take("base." + name + ".scales");
                if (codes.dtype != "u4" || codes.shape != shape || scales.dtype != "f32") {
                    throw FormatError("quantized tensor '" + name + "' is malformed");
                }
                QuantizedMatrix q;
                q.shape = shape;
                q.block_size = qb->second;
                q.scales = checkpoint_detail::floats_at(body, scales.offset, scales.length);
                q.codes.assign(body.begin() + static_cast<std::ptrdiff_t>(codes.offset),
                               body.begin() + static_cast<std::ptrdiff_t>(codes.offset + codes.length));
                m.base.params.emplace(name, dequantize_nf4(q));
                m.quantized.emplace(name, std::move(q));
                used += 2;
            }
        }
        const auto& lj = header.at("lora");
        if (!lj.is_null()) {
            LoraConfig lc;
            lc.rank = lj.at("rank").get<std::size_t>();
            lc.alpha = lj.at("alpha").get<double>();
            lc.targets = lj.at("targets").get<std::vector<std::string>>();
            lc.dropout = lj.at("dropout").get<double>();
            lc.validate();
            m.lora = lc;
            m.adapters.scale = static_cast<float>(lc.scale());
            m.adapters.dropout = lc.dropout;
            for (const auto& name : lora_target_params(m.base.config, lc)) {
                const auto& a = take("lora." + name + ".A");
                const auto& b = take("lora." + name + ".B");
                const auto& w = expected.at(name);
                if (a.shape != Shape{lc.rank, w[1]} || b.shape != Shape{w[0], lc.rank} || a.dtype != "f32" ||
                    b.dtype != "f32") {
                    throw FormatError("adapter tensors for '" + name + "' have the wrong shape");
                }
                m.adapters.pairs.emplace(name, LoraPair{Tensor(a.shape, checkpoint_detail::floats_at(body, a.offset, a.length)),
                                                        Tensor(b.shape, checkpoint_detail::floats_at(body, b.offset, b.length))});
                used += 2;
            }
        }
        if (used != index.size()) throw FormatError("checkpoint contains unexpected tensors");
        for (const auto& p : header.at("provenance")) {
            ck.provenance.push_back({p.at("stage").get<std::string>(), p.at("dataset_digest").get<std::string>()});
        }
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header: ") + e.what());
    }
}

/// Writes to a sibling temporary file and renames it over `path`, so a
/// failed write never leaves a partial checkpoint behind.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            std::filesystem::remove(tmp);
            throw DataError("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    atomic_write(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
    return deserialize_checkpoint(read_file_bytes(path));
}

}  // namespace tinyadapt

#pragma once

// Checkpoint file: magic, format version, payload length, a payload of
// tagged little-endian fields, then a CRC-32 of the payload.

#include <zlib.h>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "mcl/binary_io.hpp"
#include "mcl/config.hpp"
#include "mcl/mcl_train.hpp"
#include "mcl/selection.hpp"

namespace mcl {

inline constexpr char kCheckpointMagic[8] = {'M', 'C', 'L', 'C', 'K', 'P', 'T', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MagicError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct VersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct TruncatedFileError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct ChecksumError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct PayloadError : CheckpointError {
    using CheckpointError::CheckpointError;
};

template <typename T>
struct Checkpoint {
    RunConfig config;
    std::string kind = "mcl";  // mcl | single | wide
    Ensemble<T> ensemble;
    std::optional<MlpClassifier> classifier;
    TrainState state;
    std::string log_tail;
};

namespace detail {

enum Tag : std::uint32_t {
    tag_config = 1,
    tag_kind = 2,
    tag_scalar = 3,
    tag_architecture = 4,
    tag_members = 5,
    tag_classifier = 6,
    tag_state = 7,
    tag_log = 8,
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

template <typename T>
void put_value(io::Writer& w, T v) {
    if constexpr (std::is_same_v<T, float>) {
        w.f32(v);
    } else {
        w.f64(v);
    }
}

template <typename T>
T get_value(io::Reader& r) {
    if constexpr (std::is_same_v<T, float>) {
        return r.f32();
    } else {
        return r.f64();
    }
}

template <typename T>
void put_model(io::Writer& w, const Seq2SeqModel<T>& m) {
    Seq2SeqModel<T>::for_each_tensor(m, [&](const std::string& name, std::span<const T> t) {
        w.str(name);
        w.u64(t.size());
        for (T v : t) put_value(w, v);
    });
}

template <typename T>
void get_model(io::Reader& r, Seq2SeqModel<T>& m) {
    Seq2SeqModel<T>::for_each_tensor(m, [&](const std::string& name, std::span<T> t) {
        const std::string found = r.str();
        if (found != name) throw PayloadError("checkpoint: expected tensor " + name + ", found " + found);
        const auto n = r.u64();
        if (n != t.size()) {
            throw PayloadError("checkpoint: tensor " + name + " has " + std::to_string(n) + " values, expected " +
                               std::to_string(t.size()));
        }
        for (T& v : t) v = get_value<T>(r);
    });
}

inline void put_doubles(io::Writer& w, std::span<const double> v) {
    w.u64(v.size());
    for (double x : v) w.f64(x);
}

inline void get_doubles(io::Reader& r, std::span<double> v, const char* what) {
    if (r.u64() != v.size()) throw PayloadError(std::string("checkpoint: classifier ") + what + " size mismatch");
    for (double& x : v) x = r.f64();
}

inline void put_classifier(io::Writer& w, const MlpClassifier& c) {
    w.u64(c.w1.cols());
    w.u64(c.w1.rows());
    w.u64(c.w2.rows());
    w.u64(c.w3.rows());
    w.u8(c.all_layers ? 1 : 0);
    MlpClassifier::for_each_param(c, [&](std::span<const double> s) { put_doubles(w, s); });
    for (const auto* bn : {&c.bn1, &c.bn2}) {
        put_doubles(w, bn->running_mean);
        put_doubles(w, bn->running_var);
    }
}

inline MlpClassifier get_classifier(io::Reader& r) {
    const auto in = r.u64(), h1 = r.u64(), h2 = r.u64(), out = r.u64();
    if (in == 0 || h1 == 0 || h2 == 0 || out == 0 || in > (1u << 24) || h1 > (1u << 24) || h2 > (1u << 24) ||
        out > (1u << 16)) {
        throw PayloadError("checkpoint: implausible classifier shape");
    }
    Rng dummy(0);
    MlpClassifier c = MlpClassifier::random(in, h1, h2, out, dummy);
    c.all_layers = r.u8() != 0;
    MlpClassifier::for_each_param(c, [&](std::span<double> s) { get_doubles(r, s, "parameter"); });
    for (auto* bn : {&c.bn1, &c.bn2}) {
        get_doubles(r, bn->running_mean, "running mean");
        get_doubles(r, bn->running_var, "running variance");
        for (double v : bn->running_var)
            if (!(v > 0.0)) throw PayloadError("checkpoint: classifier running variance must be > 0");
    }
    return c;
}

}  // namespace detail

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>& ck) {
    ck.ensemble.validate();
    io::Writer payload;
    auto field = [&](detail::Tag tag, const io::Writer& body) {
        payload.u32(tag);
        payload.u64(body.data().size());
        payload.data().insert(payload.data().end(), body.data().begin(), body.data().end());
    };
    {
        io::Writer b;
        b.bytes(ck.config.to_text());
        field(detail::tag_config, b);
    }
    {
        io::Writer b;
        b.bytes(ck.kind);
        field(detail::tag_kind, b);
    }
    {
        io::Writer b;
        b.u8(sizeof(T));
        field(detail::tag_scalar, b);
    }
    {
        io::Writer b;
        const auto& s = ck.ensemble.spec();
        const auto& c = ck.ensemble.config();
        b.u64(s.length);
        b.u64(s.horizon);
        b.u64(s.frame_dim);
        b.u64(c.hidden);
        b.u64(c.layers);
        b.u8(c.peepholes ? 1 : 0);
        b.u8(c.reverse_reconstruction ? 1 : 0);
        b.u64(ck.ensemble.size());
        field(detail::tag_architecture, b);
    }
    {
        io::Writer b;
        for (const auto& m : ck.ensemble.members) {
            detail::put_model(b, m.model);
            detail::put_model(b, m.velocity);
        }
        field(detail::tag_members, b);
    }
    if (ck.classifier) {
        io::Writer b;
        detail::put_classifier(b, *ck.classifier);
        field(detail::tag_classifier, b);
    }
    {
        io::Writer b;
        b.u64(ck.state.epoch);
        b.f64(ck.state.best_validation);
        b.u64(ck.state.since_best);
        b.u64(ck.state.steps);
        field(detail::tag_state, b);
    }
    {
        io::Writer b;
        b.bytes(ck.log_tail);
        field(detail::tag_log, b);
    }
    io::Writer out;
    out.bytes(std::string_view(kCheckpointMagic, 8));
    out.u32(kCheckpointVersion);
    out.u64(payload.data().size());
    out.data().insert(out.data().end(), payload.data().begin(), payload.data().end());
    out.u32(detail::crc32_of(payload.data().data(), payload.data().size()));
    return std::move(out.data());
}

struct CheckpointHeader {
    std::uint32_t version = 0;
    std::size_t scalar_size = 0;
};

namespace detail {

// Verifies framing and checksum; returns the payload span.
inline std::pair<const std::uint8_t*, std::size_t> checked_payload(const std::vector<std::uint8_t>& bytes,
                                                                   const std::string& origin) {
    if (bytes.size() < 8 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 8) !=
                                std::string_view(kCheckpointMagic, 8)) {
        throw MagicError(origin + ": not a checkpoint (bad magic)");
    }
    if (bytes.size() < 12) throw TruncatedFileError(origin + ": truncated before version");
    io::Reader head(bytes.data() + 8, bytes.size() - 8, origin);
    const std::uint32_t version = head.u32();
    if (version != kCheckpointVersion) {
        throw VersionError(origin + ": checkpoint version mismatch: expected " + std::to_string(kCheckpointVersion) +
                           ", found " + std::to_string(version));
    }
    if (bytes.size() < 20) throw TruncatedFileError(origin + ": truncated before payload length");
    const std::uint64_t len = head.u64();
    const std::size_t have = bytes.size() - 20;
    if (have < 4 || len > have - 4) {
        throw TruncatedFileError(origin + ": truncated checkpoint: payload declares " + std::to_string(len) +
                                 " bytes, file holds " + std::to_string(have < 4 ? 0 : have - 4));
    }
    if (len != have - 4) throw PayloadError(origin + ": trailing bytes after checksum");
    const std::uint8_t* payload = bytes.data() + 20;
    io::Reader tail(payload + len, 4, origin);
    const std::uint32_t stored = tail.u32();
    const std::uint32_t actual = crc32_of(payload, len);
    if (stored != actual) throw ChecksumError(origin + ": checksum mismatch (payload corrupted)");
    return {payload, static_cast<std::size_t>(len)};
}

inline std::map<std::uint32_t, std::pair<const std::uint8_t*, std::size_t>> split_fields(const std::uint8_t* p,
                                                                                          std::size_t n,
                                                                                          const std::string& origin) {
    std::map<std::uint32_t, std::pair<const std::uint8_t*, std::size_t>> fields;
    io::Reader r(p, n, origin);
    try {
        while (!r.done()) {
            const std::uint32_t tag = r.u32();
            const std::uint64_t len = r.u64();
            if (len > r.remaining()) throw PayloadError(origin + ": field overruns payload");
            fields[tag] = {p + r.position(), static_cast<std::size_t>(len)};
            r.bytes(static_cast<std::size_t>(len));
        }
    } catch (const io::TruncatedError& e) {
        throw PayloadError(e.what());
    }
    return fields;
}

}  // namespace detail

/// Framing checks plus the stored scalar width (4 = float, 8 = double).
inline CheckpointHeader inspect_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "checkpoint") {
    const auto [p, n] = detail::checked_payload(bytes, origin);
    const auto fields = detail::split_fields(p, n, origin);
    const auto it = fields.find(detail::tag_scalar);
    if (it == fields.end() || it->second.second != 1) throw PayloadError(origin + ": missing scalar type");
    return CheckpointHeader{kCheckpointVersion, it->second.first[0]};
}

template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "checkpoint") {
    const auto [p, n] = detail::checked_payload(bytes, origin);
    const auto fields = detail::split_fields(p, n, origin);
    auto need = [&](detail::Tag tag, const char* what) {
        const auto it = fields.find(tag);
        if (it == fields.end()) throw PayloadError(origin + ": missing field " + what);
        return io::Reader(it->second.first, it->second.second, origin);
    };
    try {
        Checkpoint<T> ck;
        {
            auto r = need(detail::tag_scalar, "scalar");
            const auto size = r.u8();
            if (size != sizeof(T)) {
                throw PayloadError(origin + ": checkpoint stores " + std::to_string(size * 8) + "-bit values, caller expects " +
                                   std::to_string(sizeof(T) * 8));
            }
        }
        {
            auto r = need(detail::tag_config, "config");
            ck.config = RunConfig::parse(r.bytes(r.remaining()), origin + "[config]");
        }
        {
            auto r = need(detail::tag_kind, "kind");
            ck.kind = r.bytes(r.remaining());
        }
        SequenceSpec spec;
        ModelConfig cfg;
        std::uint64_t members = 0;
        {
            auto r = need(detail::tag_architecture, "architecture");
            spec.length = r.u64();
            spec.horizon = r.u64();
            spec.frame_dim = r.u64();
            cfg.hidden = r.u64();
            cfg.layers = r.u64();
            cfg.peepholes = r.u8() != 0;
            cfg.reverse_reconstruction = r.u8() != 0;
            members = r.u64();
            spec.validate();
            if (members == 0 || members > 4096 || cfg.hidden == 0 || cfg.hidden > (1u << 20) || cfg.layers == 0 ||
                cfg.layers > 64 || spec.frame_dim > (1u << 24)) {
                throw PayloadError(origin + ": implausible architecture");
            }
        }
        {
            auto r = need(detail::tag_members, "members");
            for (std::uint64_t m = 0; m < members; ++m) {
                auto model = Seq2SeqModel<T>::zeros(spec, cfg);
                auto velocity = Seq2SeqModel<T>::zeros(spec, cfg);
                detail::get_model(r, model);
                detail::get_model(r, velocity);
                ck.ensemble.members.emplace_back(std::move(model), std::move(velocity));
            }
            if (!r.done()) throw PayloadError(origin + ": extra bytes after member parameters");
        }
        if (fields.count(detail::tag_classifier)) {
            auto r = need(detail::tag_classifier, "classifier");
            ck.classifier = detail::get_classifier(r);
        }
        {
            auto r = need(detail::tag_state, "state");
            ck.state.epoch = r.u64();
            ck.state.best_validation = r.f64();
            ck.state.since_best = r.u64();
            ck.state.steps = r.u64();
        }
        {
            auto r = need(detail::tag_log, "log");
            ck.log_tail = r.bytes(r.remaining());
        }
        return ck;
    } catch (const io::TruncatedError& e) {
        throw PayloadError(e.what());
    } catch (const std::invalid_argument& e) {
        throw PayloadError(origin + ": " + e.what());
    } catch (const ConfigError& e) {
        throw PayloadError(e.what());
    }
}

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
    io::write_file(path, encode_checkpoint(ck));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    return decode_checkpoint<T>(io::read_file(path), path);
}

}  // namespace mcl

#ifndef POSEDIFF_CHECKPOINT_HPP
#define POSEDIFF_CHECKPOINT_HPP

// Checkpoint archive: a JSON config header followed by named parameter
// tensors, sorted by name, raw little-endian scalars. Round-trips are
// bit-identical.
//
//   magic "PDCK" | u32 version | u32 scalar_bytes | u64 header_len
//   header JSON  | u64 tensor_count
//   per tensor: u32 name_len | name | u32 ndim | i64 dims... | data

#include <cstdint>
#include <cstdio>
#include <map>
#include <string>

#include <json.hpp>

#include "errors.hpp"
#include "nn.hpp"

namespace posediff {

inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename V>
void write_pod(FILE* f, const V& v) {
    if (std::fwrite(&v, sizeof(V), 1, f) != 1) {
        throw std::runtime_error("checkpoint: short write");
    }
}

template <typename V>
V read_pod(FILE* f) {
    V v;
    if (std::fread(&v, sizeof(V), 1, f) != 1) {
        throw std::runtime_error("checkpoint: short read");
    }
    return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamMap<T>& params,
                     const nlohmann::json& header) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) {
        throw IoError("cannot open checkpoint for write", path);
    }
    try {
        std::fwrite("PDCK", 1, 4, f);
        detail::write_pod<uint32_t>(f, kCheckpointVersion);
        detail::write_pod<uint32_t>(f, static_cast<uint32_t>(sizeof(T)));
        std::string h = header.dump();
        detail::write_pod<uint64_t>(f, h.size());
        if (!h.empty() && std::fwrite(h.data(), 1, h.size(), f) != h.size()) {
            throw std::runtime_error("checkpoint: short write");
        }
        detail::write_pod<uint64_t>(f, params.size());
        for (const auto& [name, p] : params) {  // std::map: sorted by name
            detail::write_pod<uint32_t>(f, static_cast<uint32_t>(name.size()));
            std::fwrite(name.data(), 1, name.size(), f);
            const Tensor<T>& t = p.value();
            detail::write_pod<uint32_t>(f, static_cast<uint32_t>(t.shape.size()));
            for (int64_t d : t.shape) {
                detail::write_pod<int64_t>(f, d);
            }
            size_t n = t.v.size();
            if (n > 0 && std::fwrite(t.data(), sizeof(T), n, f) != n) {
                throw std::runtime_error("checkpoint: short write");
            }
        }
    } catch (...) {
        std::fclose(f);
        throw IoError("checkpoint write failed", path);
    }
    std::fclose(f);
}

// Raw form: every tensor by name plus the header.
template <typename T>
nlohmann::json read_checkpoint(const std::string& path, std::map<std::string, Tensor<T>>& out) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) {
        throw IoError("cannot open checkpoint for read", path);
    }
    nlohmann::json header;
    try {
        char magic[4];
        if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "PDCK", 4) != 0) {
            throw std::runtime_error("bad magic");
        }
        uint32_t version = detail::read_pod<uint32_t>(f);
        if (version != kCheckpointVersion) {
            throw std::runtime_error("unsupported version");
        }
        uint32_t scalar = detail::read_pod<uint32_t>(f);
        if (scalar != sizeof(T)) {
            throw std::runtime_error("scalar width mismatch");
        }
        uint64_t hlen = detail::read_pod<uint64_t>(f);
        std::string h(hlen, '\0');
        if (hlen > 0 && std::fread(h.data(), 1, hlen, f) != hlen) {
            throw std::runtime_error("short read");
        }
        header = nlohmann::json::parse(h);
        uint64_t count = detail::read_pod<uint64_t>(f);
        for (uint64_t i = 0; i < count; i++) {
            uint32_t nlen = detail::read_pod<uint32_t>(f);
            std::string name(nlen, '\0');
            if (std::fread(name.data(), 1, nlen, f) != nlen) {
                throw std::runtime_error("short read");
            }
            uint32_t ndim = detail::read_pod<uint32_t>(f);
            Shape shape(ndim);
            for (uint32_t d = 0; d < ndim; d++) {
                shape[d] = detail::read_pod<int64_t>(f);
            }
            Tensor<T> t(shape);
            size_t n = t.v.size();
            if (n > 0 && std::fread(t.data(), sizeof(T), n, f) != n) {
                throw std::runtime_error("short read");
            }
            out[name] = std::move(t);
        }
    } catch (const std::exception& e) {
        std::fclose(f);
        throw IoError(std::string("checkpoint read failed (") + e.what() + ")", path);
    }
    std::fclose(f);
    return header;
}

// Load values into an existing parameter map. Names and shapes must match
// exactly in both directions.
template <typename T>
nlohmann::json load_checkpoint(const std::string& path, ParamMap<T>& params) {
    std::map<std::string, Tensor<T>> raw;
    nlohmann::json header = read_checkpoint(path, raw);
    for (auto& [name, p] : params) {
        auto it = raw.find(name);
        if (it == raw.end()) {
            throw std::invalid_argument("checkpoint missing tensor: " + name);
        }
        if (it->second.shape != p.value().shape) {
            throw std::invalid_argument("checkpoint shape mismatch for " + name + ": " +
                                        shape_str(it->second.shape) + " vs " +
                                        shape_str(p.value().shape));
        }
        p.value() = std::move(it->second);
        raw.erase(it);
    }
    if (!raw.empty()) {
        throw std::invalid_argument("checkpoint has unexpected tensor: " + raw.begin()->first);
    }
    return header;
}

}  // namespace posediff

#endif  // POSEDIFF_CHECKPOINT_HPP

#pragma once

#include <cstdint>
#include <cstdlib>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace c2vl {

// ---------------------------------------------------------------------------
// Error hierarchy. Commands map ConfigError/SchemaError to exit code 2,
// everything else to exit code 1.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Config/CLI schema violation; carries the offending field path (e.g. "loss.beta").
class SchemaError : public ConfigError {
public:
    SchemaError(const std::string& field_path, const std::string& msg)
        : ConfigError(field_path + ": " + msg), field_path_(field_path) {}
    const std::string& field_path() const { return field_path_; }

private:
    std::string field_path_;
};

class ParseError : public Error {
public:
    ParseError(const std::string& file, std::uint64_t byte_offset, const std::string& msg)
        : Error(file + " @ byte " + std::to_string(byte_offset) + ": " + msg),
          file_(file), byte_offset_(byte_offset) {}
    const std::string& file() const { return file_; }
    std::uint64_t byte_offset() const { return byte_offset_; }

private:
    std::string file_;
    std::uint64_t byte_offset_;
};

class DataError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

class NoPersonFoundError : public Error {
public:
    NoPersonFoundError(const std::string& sample_id, int frame_index)
        : Error("no person detected above threshold for sample " + sample_id +
                " (frame " + std::to_string(frame_index) + ")"),
          frame_index_(frame_index) {}
    int frame_index() const { return frame_index_; }

private:
    int frame_index_;
};

class EmptyCaptionError : public Error {
public:
    using Error::Error;
};

// Transport failures from remote engines; retryable until attempts run out.
class TransportError : public Error {
public:
    explicit TransportError(const std::string& msg, bool retryable = true)
        : Error(msg), retryable_(retryable) {}
    bool retryable() const { return retryable_; }

private:
    bool retryable_;
};

// ---------------------------------------------------------------------------
// FNV-1a 64-bit. Used for content digests (configs, weights, caches); not a
// cryptographic hash, just a stable fingerprint.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t n,
                                   std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a64_bytes(s.data(), s.size(), seed);
}

std::string hex_digest(std::uint64_t h);

// ---------------------------------------------------------------------------
// Misc utilities
// ---------------------------------------------------------------------------

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

std::optional<std::string> env_var(const char* name);

// ISO-8601 UTC timestamp of now, second resolution.
std::string iso_timestamp();

// Warnings go to stderr; tests may swap the sink.
using WarnSink = void (*)(const std::string&);
void warn(const std::string& msg);
void set_warn_sink(WarnSink sink);  // nullptr restores the default

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const void* data, std::size_t n);
// Write to "<path>.tmp" then rename, so readers never see partial files.
void atomic_write_file(const std::string& path, const std::string& contents);

bool is_whitespace_only(std::string_view s);

}  // namespace c2vl

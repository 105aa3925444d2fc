#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mbsma {

// Error classes map 1:1 onto the CLI exit codes and the C API status codes.
enum class ErrorClass : int {
    config = 2,      // malformed config / plan / spec
    data = 3,        // invalid data or unidentifiable model
    capability = 4,  // request exceeds a hard limit (e.g. random-effect dimension)
    numeric = 5,     // numerical failure (mode search, initialization, ...)
};

class Error : public std::runtime_error {
public:
    Error(ErrorClass cls, const std::string& msg) : std::runtime_error(msg), cls_(cls) {}
    ErrorClass cls() const { return cls_; }

private:
    ErrorClass cls_;
};

[[noreturn]] inline void throw_config(const std::string& msg) { throw Error(ErrorClass::config, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(ErrorClass::data, msg); }
[[noreturn]] inline void throw_capability(const std::string& msg) { throw Error(ErrorClass::capability, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw Error(ErrorClass::numeric, msg); }

// ---------------------------------------------------------------------------
// Seed derivation. All randomness in the library flows from one user seed;
// sub-streams are derived by hashing the seed with stable tags so that
// parallel execution order never changes results.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t h, uint64_t v) { return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ULL)); }

inline uint64_t hash_str(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t hash_double(double x) {
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(x));
    __builtin_memcpy(&bits, &x, sizeof(bits));
    return bits;
}

struct SeedStream {
    uint64_t state;
    explicit SeedStream(uint64_t seed) : state(splitmix64(seed)) {}
    SeedStream& mix(uint64_t v) {
        state = hash_combine(state, v);
        return *this;
    }
    SeedStream& mix(std::string_view s) { return mix(hash_str(s)); }
    SeedStream& mix(double x) { return mix(hash_double(x)); }
    uint64_t get() const { return state; }
};

// ---------------------------------------------------------------------------
// Logging. Level comes from the MBSMA_LOG environment variable
// (error|warn|info|debug), default warn. Messages go to stderr.

enum class LogLevel : int { error = 0, warn = 1, info = 2, debug = 3 };

LogLevel log_level();
void log_msg(LogLevel level, const std::string& msg);

inline void log_warn(const std::string& msg) { log_msg(LogLevel::warn, msg); }
inline void log_info(const std::string& msg) { log_msg(LogLevel::info, msg); }
inline void log_debug(const std::string& msg) { log_msg(LogLevel::debug, msg); }

}  // namespace mbsma

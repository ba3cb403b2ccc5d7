// core.hpp
//
// Shared vocabulary for the key hunting toolkit: error type, seeded
// randomness, hex helpers, the cipher registry and the heap/annotation
// value types every other header builds on.

#ifndef KEYHUNT_CORE_HPP
#define KEYHUNT_CORE_HPP

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace keyhunt {

using byte_vector = std::vector<std::uint8_t>;
using byte_span = std::span<const std::uint8_t>;

/// error kinds surfaced by the library; the CLI maps them onto exit codes
///
enum class errc {
    unknown_cipher,
    address_out_of_range,
    malformed_log,
    annotation_mismatch,
    missing_heap,
    empty_selection,
    overlapping_regions,
    matrix_too_small,
    heap_smaller_than_window,
    single_class_data,
    too_few_minority,
    untrained_model,
    corrupt_model,
    unsupported_cipher,
    invalid_packet,
    no_newkeys_found,
    unsupported_link_type,
    truncated_capture,
    file_too_short,
    io,
    invalid_argument,
};

inline const char *errc_name(errc e) {
    switch (e) {
    case errc::unknown_cipher:          return "UnknownCipher";
    case errc::address_out_of_range:    return "AddressOutOfRange";
    case errc::malformed_log:           return "MalformedLog";
    case errc::annotation_mismatch:     return "AnnotationMismatch";
    case errc::missing_heap:            return "MissingHeap";
    case errc::empty_selection:         return "EmptySelection";
    case errc::overlapping_regions:     return "OverlappingRegions";
    case errc::matrix_too_small:        return "MatrixTooSmall";
    case errc::heap_smaller_than_window:return "HeapSmallerThanWindow";
    case errc::single_class_data:       return "SingleClassData";
    case errc::too_few_minority:        return "TooFewMinority";
    case errc::untrained_model:         return "UntrainedModel";
    case errc::corrupt_model:           return "CorruptModel";
    case errc::unsupported_cipher:      return "UnsupportedCipher";
    case errc::invalid_packet:          return "InvalidPacket";
    case errc::no_newkeys_found:        return "NoNewkeysFound";
    case errc::unsupported_link_type:   return "UnsupportedLinkType";
    case errc::truncated_capture:       return "TruncatedCapture";
    case errc::file_too_short:          return "FileTooShort";
    case errc::io:                      return "IO";
    case errc::invalid_argument:        return "InvalidArgument";
    }
    return "Unknown";
}

class error : public std::runtime_error {
public:
    error(errc code, const std::string &what)
        : std::runtime_error{std::string{errc_name(code)} + ": " + what}, code_{code} {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

// ---------------------------------------------------------------------------
// logging

enum class log_level { error = 0, warn = 1, info = 2, debug = 3 };

/// verbosity comes from KEYHUNT_LOG (error|warn|info|debug), default warn
///
inline log_level current_log_level() {
    static const log_level level = [] {
        const char *env = std::getenv("KEYHUNT_LOG");
        if (env == nullptr) { return log_level::warn; }
        std::string_view v{env};
        if (v == "error") { return log_level::error; }
        if (v == "info") { return log_level::info; }
        if (v == "debug") { return log_level::debug; }
        return log_level::warn;
    }();
    return level;
}

inline void log(log_level level, const std::string &msg) {
    static constexpr const char *names[] = {"error", "warn", "info", "debug"};
    if (level <= current_log_level()) {
        std::fprintf(stderr, "keyhunt[%s]: %s\n", names[static_cast<int>(level)], msg.c_str());
    }
}

// ---------------------------------------------------------------------------
// randomness
//
// std::mt19937_64 is fully specified by the standard; the distributions
// are not, so bounded integers and reals are derived here by hand to keep
// every seeded artifact identical across standard library vendors.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// derives an independent stream seed from a parent seed and a stream index
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

class rng {
public:
    explicit rng(std::uint64_t seed) : engine_{seed} {}

    std::uint64_t next() { return engine_(); }

    /// uniform integer in [0, bound), bound > 0
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t x;
        do { x = engine_(); } while (x >= limit);
        return x % bound;
    }

    /// uniform integer in [lo, hi]
    std::uint64_t between(std::uint64_t lo, std::uint64_t hi) { return lo + below(hi - lo + 1); }

    /// uniform real in [0, 1)
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    bool chance(double p) { return uniform01() < p; }

    void fill(std::span<std::uint8_t> out) {
        std::size_t i = 0;
        while (i < out.size()) {
            std::uint64_t x = engine_();
            for (int b = 0; b < 8 && i < out.size(); ++b, ++i) {
                out[i] = static_cast<std::uint8_t>(x >> (8 * b));
            }
        }
    }

    byte_vector bytes(std::size_t n) {
        byte_vector v(n);
        fill(v);
        return v;
    }

    template <typename T>
    void shuffle(std::vector<T> &v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// hex

inline std::string to_hex(byte_span bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (std::uint8_t b : bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

/// parses hex without a "0x" prefix, case-insensitive; throws on odd
/// length or non-hex characters
inline byte_vector from_hex(std::string_view hex) {
    auto nibble = [&](char c) -> int {
        if (c >= '0' && c <= '9') { return c - '0'; }
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (c >= 'a' && c <= 'f') { return c - 'a' + 10; }
        throw error{errc::malformed_log, "bad hex digit in '" + std::string{hex} + "'"};
    };
    if (hex.size() % 2 != 0) {
        throw error{errc::malformed_log, "odd-length hex string '" + std::string{hex} + "'"};
    }
    byte_vector out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<std::uint8_t>((nibble(hex[2 * i]) << 4) | nibble(hex[2 * i + 1]));
    }
    return out;
}

inline std::uint64_t parse_hex_u64(std::string_view hex) {
    if (hex.starts_with("0x") || hex.starts_with("0X")) { hex.remove_prefix(2); }
    if (hex.empty() || hex.size() > 16) {
        throw error{errc::malformed_log, "bad hex address '" + std::string{hex} + "'"};
    }
    std::uint64_t v = 0;
    for (char c : hex) {
        int d;
        if (c >= '0' && c <= '9') { d = c - '0'; }
        else if (c >= 'a' && c <= 'f') { d = c - 'a' + 10; }
        else if (c >= 'A' && c <= 'F') { d = c - 'A' + 10; }
        else { throw error{errc::malformed_log, "bad hex address '" + std::string{hex} + "'"}; }
        v = (v << 4) | static_cast<std::uint64_t>(d);
    }
    return v;
}

/// 64-bit FNV-1a, used as the model file checksum
inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// ciphers

enum class cipher_mode { ctr, cbc, chacha20_poly1305, gcm };

struct cipher_spec {
    std::string name;
    std::size_t iv_len;
    std::size_t key_len;
    std::size_t block_len;
    cipher_mode mode;
    bool validatable;

    bool operator==(const cipher_spec &) const = default;
};

inline const std::vector<cipher_spec> &cipher_registry() {
    static const std::vector<cipher_spec> registry = {
        {"aes128-ctr", 16, 16, 16, cipher_mode::ctr, true},
        {"aes192-ctr", 16, 24, 16, cipher_mode::ctr, true},
        {"aes256-ctr", 16, 32, 16, cipher_mode::ctr, true},
        {"aes128-cbc", 16, 16, 16, cipher_mode::cbc, true},
        {"aes192-cbc", 16, 24, 16, cipher_mode::cbc, true},
        {"aes256-cbc", 16, 32, 16, cipher_mode::cbc, true},
        // chacha20-poly1305 carries no IV; its 64-byte key is two 256-bit keys
        {"chacha20-poly1305", 0, 64, 8, cipher_mode::chacha20_poly1305, false},
        {"aes128-gcm", 12, 16, 16, cipher_mode::gcm, false},
        {"aes256-gcm", 12, 32, 16, cipher_mode::gcm, false},
    };
    return registry;
}

/// case-insensitive lookup; an "@openssh.com" suffix is ignored
inline const cipher_spec &lookup_cipher(std::string_view name) {
    std::string key;
    key.reserve(name.size());
    for (char c : name) { key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c)))); }
    constexpr std::string_view suffix = "@openssh.com";
    if (key.size() > suffix.size() && key.ends_with(suffix)) {
        key.resize(key.size() - suffix.size());
    }
    for (const auto &spec : cipher_registry()) {
        if (spec.name == key) { return spec; }
    }
    throw error{errc::unknown_cipher, "cipher '" + std::string{name} + "' is not registered"};
}

/// the CTR cipher used for a given AES key length (16, 24 or 32)
inline const cipher_spec &ctr_cipher_for_key_len(std::size_t key_len) {
    switch (key_len) {
    case 16: return lookup_cipher("aes128-ctr");
    case 24: return lookup_cipher("aes192-ctr");
    case 32: return lookup_cipher("aes256-ctr");
    default: throw error{errc::unknown_cipher, "no CTR cipher with key length " + std::to_string(key_len)};
    }
}

// ---------------------------------------------------------------------------
// heap snapshots and annotations

enum class scenario { basic_connect, port_forward, scp, shared_connection };

inline const char *scenario_name(scenario s) {
    switch (s) {
    case scenario::basic_connect:     return "basic-connect";
    case scenario::port_forward:      return "port-forward";
    case scenario::scp:               return "scp";
    case scenario::shared_connection: return "shared-connection";
    }
    return "basic-connect";
}

inline scenario parse_scenario(std::string_view s) {
    for (auto v : {scenario::basic_connect, scenario::port_forward, scenario::scp, scenario::shared_connection}) {
        if (s == scenario_name(v)) { return v; }
    }
    throw error{errc::invalid_argument, "unknown scenario '" + std::string{s} + "'"};
}

/// raw heap bytes, zero-padded to a multiple of 8
///
struct heap_snapshot {
    byte_vector bytes;
    std::size_t original_length = 0;
    std::uint64_t base_addr = 0;
    std::string ssh_version;
    scenario scenario_kind = scenario::basic_connect;
    std::string source_path;

    heap_snapshot() = default;

    heap_snapshot(byte_vector raw, std::uint64_t base, std::string version = {},
                  scenario sc = scenario::basic_connect, std::string path = {})
        : bytes{std::move(raw)}, base_addr{base}, ssh_version{std::move(version)},
          scenario_kind{sc}, source_path{std::move(path)} {
        if (bytes.empty()) {
            throw error{errc::invalid_argument, "heap snapshot must not be empty"};
        }
        original_length = bytes.size();
        bytes.resize((bytes.size() + 7) / 8 * 8, 0);
    }

    std::size_t size() const noexcept { return bytes.size(); }
    byte_span view() const noexcept { return bytes; }
};

enum class key_role { A, B, C, D, E, F };

inline char role_letter(key_role r) { return static_cast<char>('A' + static_cast<int>(r)); }

inline constexpr std::array<key_role, 6> all_roles = {
    key_role::A, key_role::B, key_role::C, key_role::D, key_role::E, key_role::F};

struct key_annotation {
    key_role role;
    std::size_t offset;
    std::size_t length;
    byte_vector value;
    std::string cipher_name;

    std::size_t end() const noexcept { return offset + length; }
    bool operator==(const key_annotation &) const = default;
};

/// converts a logged virtual address into a heap byte index
inline std::size_t annotation_offset(std::uint64_t addr, std::uint64_t base, std::size_t heap_length) {
    if (addr < base || addr - base >= heap_length) {
        throw error{errc::address_out_of_range, "address outside heap"};
    }
    return static_cast<std::size_t>(addr - base);
}

inline constexpr std::size_t slice_window = 128;

/// one classifier window: `slice_window` raw bytes unless configured otherwise
struct slice_sample {
    std::size_t offset = 0;
    byte_vector data;
    int label = -1;  // 0, 1, or -1 when unlabeled
};

enum class region_origin { page_filter, entropy_mask, classifier };

struct candidate_region {
    std::size_t offset;
    std::size_t length;
    region_origin origin;

    std::size_t end() const noexcept { return offset + length; }
    bool operator==(const candidate_region &) const = default;
};

/// true iff [a, a+alen) and [b, b+blen) share at least one byte
inline bool ranges_intersect(std::size_t a, std::size_t alen, std::size_t b, std::size_t blen) {
    return a < b + blen && b < a + alen;
}

/// sorts and merges overlapping or touching regions
inline std::vector<candidate_region> merge_regions(std::vector<candidate_region> regions) {
    std::sort(regions.begin(), regions.end(),
              [](const auto &l, const auto &r) { return l.offset < r.offset; });
    std::vector<candidate_region> out;
    for (const auto &r : regions) {
        if (r.length == 0) { continue; }
        if (!out.empty() && r.offset <= out.back().end()) {
            out.back().length = std::max(out.back().end(), r.end()) - out.back().offset;
        } else {
            out.push_back(r);
        }
    }
    return out;
}

inline std::size_t total_length(const std::vector<candidate_region> &regions) {
    std::size_t n = 0;
    for (const auto &r : regions) { n += r.length; }
    return n;
}

}  // namespace keyhunt

#endif  // KEYHUNT_CORE_HPP

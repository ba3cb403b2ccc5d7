// dataset.hpp
//
// Dataset access: raw heap + JSON key log pairs laid out as
// <root>/<split>/<scenario>/<version>/<key_len>/<stem>-heap.raw + <stem>.json,
// and a deterministic generator of labeled synthetic heaps with matching
// encrypted traffic.

#ifndef KEYHUNT_DATASET_HPP
#define KEYHUNT_DATASET_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aes.hpp"
#include "core.hpp"
#include "pcap.hpp"
#include "preprocess.hpp"
#include "validate.hpp"

namespace keyhunt {

namespace fs = std::filesystem;

struct dataset_entry {
    heap_snapshot heap;
    std::vector<key_annotation> annotations;
    std::string json_path;
    std::string heap_path;

    const key_annotation *find(key_role role) const {
        for (const auto &a : annotations) {
            if (a.role == role) { return &a; }
        }
        return nullptr;
    }

    /// cipher of the client-to-server direction
    std::string cipher_name() const {
        const key_annotation *c = find(key_role::C);
        if (c == nullptr) { c = &annotations.front(); }
        return c->cipher_name;
    }

    /// encryption key length, or the longest annotated key when C is absent
    std::size_t key_len() const {
        if (const auto *c = find(key_role::C)) { return c->length; }
        std::size_t n = 0;
        for (const auto &a : annotations) { n = std::max(n, a.length); }
        return n;
    }
};

struct load_options {
    /// JSON fields tried, in order, for the heap base address
    std::vector<std::string> base_fields = {"HEAP_START", "HEAP_ADDR"};
};

namespace detail {

inline std::uint64_t json_address(const nlohmann::json &v) {
    if (v.is_string()) { return parse_hex_u64(v.get<std::string>()); }
    if (v.is_number_unsigned() || v.is_number_integer()) { return v.get<std::uint64_t>(); }
    throw error{errc::malformed_log, "address field is neither a hex string nor an integer"};
}

inline std::size_t json_length(const nlohmann::json &v) {
    if (v.is_number_integer() || v.is_number_unsigned()) {
        const auto n = v.get<std::int64_t>();
        if (n < 0) { throw error{errc::malformed_log, "negative key length"}; }
        return static_cast<std::size_t>(n);
    }
    if (v.is_string()) {
        try {
            return static_cast<std::size_t>(std::stoul(v.get<std::string>()));
        } catch (const std::exception &) {
            throw error{errc::malformed_log, "key length is not a number"};
        }
    }
    throw error{errc::malformed_log, "key length is not a number"};
}

/// "<stem>.json" -> sibling "<stem>-heap.raw" (or any "<stem>-heap*" file)
inline fs::path heap_path_for(const fs::path &json_path) {
    const std::string stem = json_path.stem().string();
    fs::path candidate = json_path.parent_path() / (stem + "-heap.raw");
    if (fs::exists(candidate)) { return candidate; }
    std::error_code ec;
    const fs::path dir = json_path.parent_path().empty() ? fs::path{"."} : json_path.parent_path();
    std::vector<fs::path> matches;
    for (const auto &e : fs::directory_iterator{dir, ec}) {
        const std::string name = e.path().filename().string();
        if (name.starts_with(stem + "-heap")) { matches.push_back(e.path()); }
    }
    if (matches.empty()) {
        throw error{errc::missing_heap, "no heap file next to " + json_path.string()};
    }
    std::sort(matches.begin(), matches.end());
    return matches.front();
}

}  // namespace detail

/// parses a JSON key log and its sibling raw heap; every logged key must
/// match the heap bytes at its resolved offset
inline dataset_entry load_entry(const fs::path &json_path, const load_options &opt = {}) {
    std::ifstream in{json_path};
    if (!in) { throw error{errc::io, "cannot open " + json_path.string()}; }
    nlohmann::json log;
    try {
        log = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw error{errc::malformed_log, json_path.string() + ": " + e.what()};
    }
    if (!log.is_object()) { throw error{errc::malformed_log, json_path.string() + " is not a JSON object"}; }
    if (!log.contains("ENCRYPTION_KEY_1_NAME") || !log["ENCRYPTION_KEY_1_NAME"].is_string()) {
        throw error{errc::malformed_log, json_path.string() + " lacks ENCRYPTION_KEY_1_NAME"};
    }
    const std::string cipher1 = log["ENCRYPTION_KEY_1_NAME"].get<std::string>();
    const std::string cipher2 = (log.contains("ENCRYPTION_KEY_2_NAME") && log["ENCRYPTION_KEY_2_NAME"].is_string())
                                    ? log["ENCRYPTION_KEY_2_NAME"].get<std::string>()
                                    : cipher1;

    struct raw_key { key_role role; std::uint64_t addr; byte_vector value; };
    std::vector<raw_key> keys;
    for (key_role role : all_roles) {
        const std::string base = std::string{"KEY_"} + role_letter(role);
        if (!log.contains(base + "_LEN")) {
            if (log.contains(base) || log.contains(base + "_ADDR")) {
                throw error{errc::malformed_log, base + "_LEN missing in " + json_path.string()};
            }
            continue;
        }
        const std::size_t len = detail::json_length(log[base + "_LEN"]);
        if (len == 0) { continue; }
        if (!log.contains(base + "_ADDR") || !log.contains(base) || !log[base].is_string()) {
            throw error{errc::malformed_log, base + " or " + base + "_ADDR missing in " + json_path.string()};
        }
        byte_vector value = from_hex(log[base].get<std::string>());
        if (value.size() != len) {
            throw error{errc::malformed_log, base + "_LEN disagrees with the logged value length"};
        }
        keys.push_back({role, detail::json_address(log[base + "_ADDR"]), std::move(value)});
    }
    if (keys.empty()) { throw error{errc::malformed_log, json_path.string() + " logs no keys"}; }

    std::optional<std::uint64_t> base_addr;
    for (const auto &field : opt.base_fields) {
        if (log.contains(field)) { base_addr = detail::json_address(log[field]); break; }
    }
    if (!base_addr) {
        std::uint64_t lowest = keys.front().addr;
        for (const auto &k : keys) { lowest = std::min(lowest, k.addr); }
        base_addr = lowest & ~std::uint64_t{0xfff};
    }

    const fs::path heap_path = detail::heap_path_for(json_path);
    byte_vector raw = read_file(heap_path);
    if (raw.empty()) { throw error{errc::missing_heap, heap_path.string() + " is empty"}; }

    std::string version = log.value("SSH_VERSION", std::string{});
    scenario sc = scenario::basic_connect;
    // <split>/<scenario>/<version>/<key_len>/<file>
    const fs::path dir = json_path.parent_path();
    if (version.empty() && dir.has_parent_path()) { version = dir.parent_path().filename().string(); }
    std::string sc_name = log.value("SCENARIO", std::string{});
    if (sc_name.empty() && dir.has_parent_path() && dir.parent_path().has_parent_path()) {
        sc_name = dir.parent_path().parent_path().filename().string();
    }
    try { sc = parse_scenario(sc_name); } catch (const error &) {}

    dataset_entry entry;
    entry.heap = heap_snapshot{std::move(raw), *base_addr, version, sc, heap_path.string()};
    entry.json_path = json_path.string();
    entry.heap_path = heap_path.string();
    for (auto &k : keys) {
        const std::size_t off = annotation_offset(k.addr, *base_addr, entry.heap.original_length);
        if (off + k.value.size() > entry.heap.original_length ||
            !std::equal(k.value.begin(), k.value.end(), entry.heap.bytes.begin() + static_cast<std::ptrdiff_t>(off))) {
            throw error{errc::annotation_mismatch, std::string{"KEY_"} + role_letter(k.role) +
                                                       " does not match heap content in " + heap_path.string()};
        }
        if (off % 8 != 0) {
            keyhunt::log(log_level::warn, std::string{"KEY_"} + role_letter(k.role) + " is not 8-byte aligned in " +
                                     json_path.string());
        }
        const bool client_side = k.role == key_role::A || k.role == key_role::C || k.role == key_role::E;
        const std::size_t len = k.value.size();
        entry.annotations.push_back({k.role, off, len, std::move(k.value), client_side ? cipher1 : cipher2});
    }
    return entry;
}

// ---------------------------------------------------------------------------
// walking

enum class split { training, validation };

inline const char *split_name(split s) { return s == split::training ? "training" : "validation"; }

struct walk_filters {
    std::optional<std::string> scenario;
    std::optional<std::string> version;
    std::optional<std::size_t> key_len;
};

/// lazily loads the entries selected under <root>/<split>, in path order;
/// entries that fail to load are logged and skipped
///
class dataset_walker {
public:
    dataset_walker(const fs::path &root, split which, const walk_filters &filters = {}, load_options opt = {})
        : opt_{std::move(opt)} {
        const fs::path top = root / split_name(which);
        std::error_code ec;
        if (fs::is_directory(top, ec)) {
            for (auto it = fs::recursive_directory_iterator{top, ec}; !ec && it != fs::recursive_directory_iterator{};
                 it.increment(ec)) {
                if (!it->is_regular_file() || it->path().extension() != ".json") { continue; }
                const fs::path rel = fs::relative(it->path(), top);
                std::vector<std::string> parts;
                for (const auto &p : rel.parent_path()) { parts.push_back(p.string()); }
                if (filters.scenario && (parts.size() < 1 || parts[0] != *filters.scenario)) { continue; }
                if (filters.version && (parts.size() < 2 || parts[1] != *filters.version)) { continue; }
                if (filters.key_len && (parts.size() < 3 || parts[2] != std::to_string(*filters.key_len))) { continue; }
                paths_.push_back(it->path());
            }
        }
        if (paths_.empty()) {
            throw error{errc::empty_selection, "no dataset entries under " + top.string() + " match the filters"};
        }
        std::sort(paths_.begin(), paths_.end());
    }

    std::optional<dataset_entry> next() {
        while (pos_ < paths_.size()) {
            const fs::path &p = paths_[pos_++];
            try {
                return load_entry(p, opt_);
            } catch (const error &e) {
                ++skipped_;
                log(log_level::warn, "skipping " + p.string() + ": " + e.what());
            }
        }
        return std::nullopt;
    }

    const std::vector<fs::path> &paths() const noexcept { return paths_; }
    std::size_t skipped() const noexcept { return skipped_; }

private:
    load_options opt_;
    std::vector<fs::path> paths_;
    std::size_t pos_ = 0;
    std::size_t skipped_ = 0;
};

inline dataset_walker walk_dataset(const fs::path &root, split which, const walk_filters &filters = {}) {
    return dataset_walker{root, which, filters};
}

// ---------------------------------------------------------------------------
// synthetic generation

enum class filler_profile { zeros, ascii_strings, pointer_like, mixed };

inline const char *filler_name(filler_profile f) {
    switch (f) {
    case filler_profile::zeros:         return "zeros";
    case filler_profile::ascii_strings: return "ascii-strings";
    case filler_profile::pointer_like:  return "pointer-like";
    case filler_profile::mixed:         return "mixed";
    }
    return "mixed";
}

struct synthetic_recipe {
    std::size_t heap_size = 132 * 1024;
    cipher_spec cipher = lookup_cipher("aes128-ctr");
    std::size_t iv_offset = 0;   // Key A
    std::size_t key_offset = 0;  // Key C
    filler_profile filler = filler_profile::mixed;
    std::uint64_t rng_seed = 0;
    /// also place B, D (server-to-client IV/key) and E, F (integrity keys)
    bool companion_keys = true;
    /// fraction of the heap held in large random buffers (mixed profile)
    double random_fraction = 0.04;
    /// minimum fraction of pages made of pointer tables (mixed profile);
    /// pages around keys always are
    double pointer_page_fraction = 0.3;
    std::string ssh_version = "V_8_1_P1";
    scenario scenario_kind = scenario::basic_connect;
};

struct synthetic_entry {
    dataset_entry entry;
    std::optional<validation_packet> packet;         // client-to-server
    std::optional<validation_packet> server_packet;  // server-to-client
    std::string json_text;
    byte_vector pcap;
    std::string stem;
};

inline constexpr std::size_t integrity_key_len = 32;

/// mean bit flips per byte that key pages of the mixed profile reach, with a
/// margin over the default page filter cut
inline constexpr double key_page_min_hamming = default_page_threshold * 8.0 + 0.1;

namespace detail {
/// bytes on each side of a key that share its page treatment (mixed profile)
inline constexpr std::size_t key_guard = 128;
}  // namespace detail

namespace detail {

inline std::size_t chunk_size_for(std::size_t payload) {
    return std::max<std::size_t>(32, (payload + 8 + 15) / 16 * 16);
}

inline void put_u64(byte_vector &heap, std::size_t off, std::uint64_t v) {
    for (int i = 0; i < 8 && off + static_cast<std::size_t>(i) < heap.size(); ++i) {
        heap[off + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
    }
}

inline constexpr const char *vocabulary[] = {
    "aes128-ctr", "aes192-ctr", "aes256-ctr", "chacha20-poly1305@openssh.com", "hmac-sha2-256",
    "umac-64-etm@openssh.com", "curve25519-sha256", "ecdh-sha2-nistp256", "diffie-hellman-group14-sha256",
    "ssh-ed25519", "rsa-sha2-512", "none", "zlib@openssh.com", "/home/user/.ssh/known_hosts",
    "/home/user/.ssh/id_ed25519", "/etc/ssh/ssh_config", "LANG=C.UTF-8", "TERM=xterm-256color",
    "PATH=/usr/local/bin:/usr/bin:/bin", "session", "pty-req", "shell", "exec", "keepalive@openssh.com",
    "ssh-connection", "ssh-userauth", "publickey", "password", "localhost", "10.0.0.2", "user",
    "OpenSSH_8.1", "SSH-2.0-OpenSSH_8.1", "direct-tcpip", "forwarded-tcpip", "scp -t /tmp",
    "/usr/lib/openssh/sftp-server", "ControlMaster", "ControlPath", "known_hosts", "debug1",
};

/// heap-resident filler generator for the mixed profile
///
class heap_painter {
public:
    heap_painter(byte_vector &heap, std::uint64_t base, rng &r)
        : heap_{heap}, base_{base}, r_{r} {
        // two clusters of adjacent mappings (shared libraries, loader and
        // anonymous regions), each placed independently below the stack
        for (std::size_t c = 0; c < 2; ++c) {
            const std::uint64_t top = 0x00007f0000000000ULL | (r.below(256) << 32) | (r.below(256) << 24);
            for (std::size_t i = 0; i < 6; ++i) { lib_bases_[6 * c + i] = top - (std::uint64_t{i} << 24); }
        }
    }

    std::uint64_t heap_pointer() {
        return base_ + 16 + r_.below(heap_.size() / 16) * 16;
    }

    /// pointer into one of the 16MB shared-library mappings (rodata strings,
    /// so no alignment)
    std::uint64_t library_pointer(std::size_t lib) { return lib_bases_[lib] | r_.below(std::uint64_t{1} << 24); }
    std::uint64_t library_pointer() { return library_pointer(r_.below(lib_bases_.size())); }

    /// array of same-kind pointers (hash bucket, vtable, argv-style list):
    /// the high bytes repeat row to row, so the mask leaves it alone while
    /// the byte-to-byte bit flips stay high
    void pointer_table(std::size_t off, std::size_t len) {
        const bool heap_kind = r_.chance(0.05);
        const std::size_t lib = r_.below(lib_bases_.size());
        for (std::size_t p = off; p < off + len; p += 8) {
            if (r_.chance(0.01)) { continue; }  // NULL slot
            put_u64(heap_, p, heap_kind ? heap_pointer() : library_pointer(lib));
        }
    }

    void struct_payload(std::size_t off, std::size_t len) {
        for (std::size_t p = off; p < off + len; p += 8) {
            const double u = r_.uniform01();
            std::uint64_t v;
            if (u < 0.38) { v = 0; }
            else if (u < 0.62) { v = r_.below(u < 0.5 ? 64 : 4096); }
            else if (u < 0.86) { v = heap_pointer(); }
            else if (u < 0.91) { v = library_pointer(); }
            else { v = (r_.below(16) << 32) | r_.below(8); }
            put_u64(heap_, p, v);
        }
    }

    void string_payload(std::size_t off, std::size_t len) {
        std::size_t p = off;
        while (p < off + len) {
            const char *word = vocabulary[r_.below(std::size(vocabulary))];
            for (const char *c = word; *c != '\0' && p < off + len; ++c) { heap_[p++] = static_cast<std::uint8_t>(*c); }
            if (p < off + len) { heap_[p++] = r_.chance(0.7) ? ',' : '\0'; }
            if (r_.chance(0.3)) { break; }
        }
        // remainder stays zero (calloc)
    }

    void random_payload(std::size_t off, std::size_t len) {
        r_.fill(std::span<std::uint8_t>{heap_.data() + off, std::min(len, heap_.size() - off)});
    }

    enum stream_kind { general, tables };

    /// fills [lo, hi) with consecutive chunks; `random_budget` caps the bytes
    /// of large random buffers in the general mix
    void chunk_stream(std::size_t lo, std::size_t hi, stream_kind kind, std::size_t random_budget) {
        std::size_t pos = lo;
        while (pos + 16 <= hi) {
            const std::size_t remaining = hi - pos;
            enum { k_struct, k_string, k_zero, k_random, k_table } what;
            std::size_t payload;
            const double u = r_.uniform01();
            if (kind == tables) {
                what = u < 0.98 ? k_table : k_struct;
                payload = what == k_table ? r_.between(16, 96) * 8 : r_.between(2, 8) * 8;
            } else if (random_budget > 2048 &&
                       r_.chance(std::min(1.0, 0.3 * static_cast<double>(random_budget) / static_cast<double>(remaining)))) {
                what = k_random;
                payload = std::min<std::size_t>(random_budget, r_.between(2048, 12288) / 16 * 16 + 8);
            } else if (u < 0.48) { what = k_struct; payload = r_.between(3, 24) * 8; }
            else if (u < 0.74) { what = k_string; payload = r_.between(2, 16) * 8; }
            else { what = k_zero; payload = r_.between(2, 48) * 8; }
            const std::size_t cs = std::min(chunk_size_for(payload), remaining);
            put_u64(heap_, pos, cs | 1);
            const std::size_t body = pos + 8;
            const std::size_t body_len = std::min(payload, hi - body);
            std::fill(heap_.begin() + static_cast<std::ptrdiff_t>(body),
                      heap_.begin() + static_cast<std::ptrdiff_t>(pos + cs), 0);
            switch (what) {
            case k_struct: struct_payload(body, body_len); break;
            case k_string: string_payload(body, body_len); break;
            case k_zero: break;
            case k_table: pointer_table(body, body_len); break;
            case k_random:
                random_payload(body, body_len);
                random_budget -= std::min(random_budget, body_len);
                break;
            }
            pos += cs;
        }
        std::fill(heap_.begin() + static_cast<std::ptrdiff_t>(pos), heap_.begin() + static_cast<std::ptrdiff_t>(hi), 0);
    }

private:
    byte_vector &heap_;
    std::uint64_t base_;
    rng &r_;
    std::array<std::uint64_t, 12> lib_bases_{};
};

struct key_slot {
    key_role role;
    std::size_t offset;
    std::size_t length;
};

/// true iff [off, off+len) fits the heap and keeps `gap` bytes from every placed key
inline bool slot_free(const std::vector<key_slot> &slots, std::size_t off, std::size_t len, std::size_t heap_size,
                      std::size_t gap = 16) {
    if (off % 8 != 0 || off + len > heap_size) { return false; }
    for (const auto &s : slots) {
        if (off < s.offset + s.length + gap && s.offset < off + len + gap) { return false; }
    }
    return true;
}

/// a companion key a short distance before or after its anchor; `gap` is
/// the minimum free distance to any other key
inline std::size_t place_near(const std::vector<key_slot> &slots, std::size_t anchor_off, std::size_t anchor_len,
                              std::size_t len, std::size_t heap_size, rng &r, std::size_t gap = 16) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        const std::size_t d = gap + r.below(gap / 8 + 384) * 8;
        if (r.chance(0.5)) {
            const std::size_t after = (anchor_off + anchor_len + d + 7) / 8 * 8;
            if (slot_free(slots, after, len, heap_size, gap)) { return after; }
        } else if (anchor_off >= d + len) {
            const std::size_t before = (anchor_off - d - len) / 8 * 8;
            if (slot_free(slots, before, len, heap_size, gap)) { return before; }
        }
    }
    for (std::size_t g : {gap, std::size_t{16}}) {
        for (int attempt = 0; attempt < 10000; ++attempt) {
            const std::size_t off = r.below((heap_size - len) / 8 + 1) * 8;
            if (slot_free(slots, off, len, heap_size, g)) { return off; }
        }
    }
    throw error{errc::overlapping_regions, "no room left for companion keys"};
}

inline std::vector<std::string> cleartext_kexinit(rng &r) {
    (void)r;
    return {"curve25519-sha256,ecdh-sha2-nistp256,diffie-hellman-group14-sha256",
            "ssh-ed25519,rsa-sha2-512,rsa-sha2-256",
            "aes128-ctr,aes192-ctr,aes256-ctr,aes128-cbc,aes256-cbc",
            "aes128-ctr,aes192-ctr,aes256-ctr,aes128-cbc,aes256-cbc",
            "hmac-sha2-256,hmac-sha2-512", "hmac-sha2-256,hmac-sha2-512", "none", "none", "", ""};
}

inline byte_vector ssh_string(std::string_view s) {
    byte_vector v(4);
    aes::detail::store_be(v.data(), static_cast<std::uint32_t>(s.size()));
    v.insert(v.end(), s.begin(), s.end());
    return v;
}

}  // namespace detail

/// builds a heap (and, for validatable ciphers, a captured first packet
/// per direction) around session keys placed at the recipe offsets
inline synthetic_entry generate_synthetic(const synthetic_recipe &recipe) {
    const auto &cipher = recipe.cipher;
    if (recipe.heap_size < 4096 || recipe.heap_size % 8 != 0) {
        throw error{errc::invalid_argument, "synthetic heaps must be >= 4096 bytes and 8-byte aligned"};
    }
    rng r{recipe.rng_seed};

    std::vector<detail::key_slot> slots;
    auto add_fixed = [&](key_role role, std::size_t off, std::size_t len) {
        if (len == 0) { return; }
        if (!detail::slot_free(slots, off, len, recipe.heap_size)) {
            throw error{errc::overlapping_regions, std::string{"key "} + role_letter(role) +
                                                       " overlaps another key or leaves the heap"};
        }
        slots.push_back({role, off, len});
    };
    add_fixed(key_role::A, recipe.iv_offset, cipher.iv_len);
    add_fixed(key_role::C, recipe.key_offset, cipher.key_len);
    if (recipe.companion_keys) {
        const std::size_t gap = 16;
        const std::size_t a_len = cipher.iv_len;
        const std::size_t a_off = cipher.iv_len ? recipe.iv_offset : recipe.key_offset;
        if (cipher.iv_len) {
            slots.push_back({key_role::B, detail::place_near(slots, a_off, a_len, cipher.iv_len, recipe.heap_size, r, gap),
                             cipher.iv_len});
        }
        const auto d_off = detail::place_near(slots, recipe.key_offset, cipher.key_len, cipher.key_len,
                                              recipe.heap_size, r, gap);
        slots.push_back({key_role::D, d_off, cipher.key_len});
        if (cipher.mode == cipher_mode::ctr || cipher.mode == cipher_mode::cbc) {
            const auto e_off = detail::place_near(slots, d_off, cipher.key_len, integrity_key_len, recipe.heap_size, r, gap);
            slots.push_back({key_role::E, e_off, integrity_key_len});
            const auto f_off = detail::place_near(slots, e_off, integrity_key_len, integrity_key_len,
                                                  recipe.heap_size, r, gap);
            slots.push_back({key_role::F, f_off, integrity_key_len});
        }
    }
    std::sort(slots.begin(), slots.end(), [](const auto &a, const auto &b) { return a.role < b.role; });

    // heap base shares a fixed 2-byte high prefix with every heap pointer
    const std::uint64_t base = (std::uint64_t{0x5500 | r.below(256)} << 32) | ((r.next() & 0xffffffffULL) & ~0xfffULL);
    byte_vector heap(recipe.heap_size, 0);
    detail::heap_painter paint{heap, base, r};

    switch (recipe.filler) {
    case filler_profile::zeros:
        break;
    case filler_profile::ascii_strings:
        for (std::size_t p = 0; p < heap.size();) {
            const std::size_t len = std::min<std::size_t>(heap.size() - p, r.between(16, 160));
            paint.string_payload(p, len);
            p += len;
        }
        break;
    case filler_profile::pointer_like:
        for (std::size_t p = 0; p < heap.size(); p += 8) { detail::put_u64(heap, p, paint.heap_pointer()); }
        break;
    case filler_profile::mixed: {
        // glibc-style chunk stream: size header row followed by the payload
        std::size_t random_budget = static_cast<std::size_t>(recipe.random_fraction * static_cast<double>(heap.size()));
        paint.chunk_stream(0, heap.size(), detail::heap_painter::general, random_budget);
        // session keys live among the pointer-heavy session structures
        // (newkeys, sshenc, cipher contexts); those pages, plus a share of
        // other pages, hold pointer tables instead of the general mix
        const std::size_t n_pages = (heap.size() + 4095) / 4096;
        std::vector<std::uint8_t> dense(n_pages, 0);
        for (const auto &s : slots) {
            const std::size_t lo = s.offset >= detail::key_guard ? s.offset - detail::key_guard : 0;
            const std::size_t hi = std::min(heap.size(), s.offset + s.length + detail::key_guard);
            for (std::size_t pg = lo / 4096; pg * 4096 < hi; ++pg) { dense[pg] = 1; }
        }
        const auto wanted = static_cast<std::size_t>(recipe.pointer_page_fraction * static_cast<double>(n_pages));
        std::vector<std::size_t> others;
        for (std::size_t pg = 0; pg < n_pages; ++pg) {
            if (!dense[pg]) { others.push_back(pg); }
        }
        r.shuffle(others);
        for (std::size_t k = 0, have = n_pages - others.size(); have < wanted && k < others.size(); ++k, ++have) {
            dense[others[k]] = 1;
        }
        for (std::size_t pg = 0; pg < n_pages; ++pg) {
            if (dense[pg]) {
                paint.chunk_stream(pg * 4096, std::min(heap.size(), (pg + 1) * 4096), detail::heap_painter::tables, 0);
            }
        }
        break;
    }
    }

    // session keys: calloc'd chunks with a size header row in front
    synthetic_entry out;
    std::vector<byte_vector> values(6);
    for (const auto &s : slots) {
        values[static_cast<std::size_t>(s.role)] = r.bytes(s.length);
    }
    auto write_keys = [&] {
        for (const auto &s : slots) {
            const std::size_t cs = detail::chunk_size_for(s.length);
            if (recipe.filler == filler_profile::mixed && s.offset >= 8) {
                detail::put_u64(heap, s.offset - 8, cs | 1);
            }
            const auto &v = values[static_cast<std::size_t>(s.role)];
            std::copy(v.begin(), v.end(), heap.begin() + static_cast<std::ptrdiff_t>(s.offset));
            if (recipe.filler == filler_profile::mixed) {
                // calloc tail up to the next chunk header
                const std::size_t tail_end = std::min(heap.size(), s.offset - 8 + cs);
                for (std::size_t p = s.offset + s.length; p < tail_end; ++p) { heap[p] = 0; }
            }
        }
    };
    write_keys();
    if (recipe.filler == filler_profile::mixed) {
        // the page filter baseline relies on key pages reading as high
        // entropy; repaint the rare page whose pointer mix falls short
        for (const auto &s : slots) {
            for (std::size_t pg = s.offset / 4096; pg * 4096 < s.offset + s.length; ++pg) {
                const std::size_t lo = pg * 4096;
                const std::size_t hi = std::min(heap.size(), lo + 4096);
                for (int attempt = 0; attempt < 16; ++attempt) {
                    const byte_span page{heap.data() + lo, hi - lo};
                    if (mean_hamming(page) >= key_page_min_hamming) { break; }
                    paint.chunk_stream(lo, hi, detail::heap_painter::tables, 0);
                    write_keys();
                }
            }
        }
    }

    out.stem = std::to_string(1000 + recipe.rng_seed % 50000) + "-" + std::to_string(1640000000ULL + recipe.rng_seed);

    nlohmann::json log;
    log["SSH_PID"] = 1000 + recipe.rng_seed % 50000;
    log["SSH_VERSION"] = recipe.ssh_version;
    log["SCENARIO"] = scenario_name(recipe.scenario_kind);
    log["HEAP_START"] = [&] { char buf[32]; std::snprintf(buf, sizeof buf, "%llx", static_cast<unsigned long long>(base)); return std::string{buf}; }();
    log["HEAP_SIZE"] = recipe.heap_size;
    log["ENCRYPTION_KEY_1_NAME"] = cipher.name;
    log["ENCRYPTION_KEY_2_NAME"] = cipher.name;
    for (key_role role : all_roles) {
        const std::string k = std::string{"KEY_"} + role_letter(role);
        const auto it = std::find_if(slots.begin(), slots.end(), [&](const auto &s) { return s.role == role; });
        if (it == slots.end()) {
            log[k + "_LEN"] = 0;
            continue;
        }
        char addr[32];
        std::snprintf(addr, sizeof addr, "%llx", static_cast<unsigned long long>(base + it->offset));
        log[k + "_ADDR"] = std::string{addr};
        log[k + "_LEN"] = it->length;
        log[k] = to_hex(values[static_cast<std::size_t>(role)]);
    }
    out.json_text = log.dump(4) + "\n";

    out.entry.heap = heap_snapshot{std::move(heap), base, recipe.ssh_version, recipe.scenario_kind, out.stem + "-heap.raw"};
    out.entry.json_path = out.stem + ".json";
    out.entry.heap_path = out.stem + "-heap.raw";
    for (const auto &s : slots) {
        out.entry.annotations.push_back({s.role, s.offset, s.length, values[static_cast<std::size_t>(s.role)], cipher.name});
    }

    if (cipher.validatable) {
        // cleartext handshake, then one encrypted packet per direction
        pcap::writer cap{static_cast<std::uint16_t>(40000 + r.below(20000)), 22,
                         static_cast<std::uint32_t>(r.next()), static_cast<std::uint32_t>(r.next())};
        cap.handshake();
        auto banner = [](std::string_view s) { return byte_vector(s.begin(), s.end()); };
        cap.send(direction::client_to_server, banner("SSH-2.0-OpenSSH_8.1\r\n"));
        cap.send(direction::server_to_client, banner("SSH-2.0-OpenSSH_8.1\r\n"));
        auto kexinit = [&] {
            byte_vector p{20};
            const byte_vector cookie = r.bytes(16);
            p.insert(p.end(), cookie.begin(), cookie.end());
            for (const auto &list : detail::cleartext_kexinit(r)) {
                const auto s = detail::ssh_string(list);
                p.insert(p.end(), s.begin(), s.end());
            }
            p.push_back(0);
            p.insert(p.end(), 4, 0);
            return frame_packet(p, 8, r);
        };
        std::uint32_t c2s_count = 0;
        cap.send(direction::client_to_server, kexinit());
        ++c2s_count;
        cap.send(direction::server_to_client, kexinit());
        {
            byte_vector p{30};
            const auto q = detail::ssh_string(std::string(32, 'x'));
            p.insert(p.end(), q.begin(), q.begin() + 4);
            const byte_vector pub = r.bytes(32);
            p.insert(p.end(), pub.begin(), pub.end());
            cap.send(direction::client_to_server, frame_packet(p, 8, r));
            ++c2s_count;
        }
        {
            byte_vector reply{31};
            const byte_vector blob = r.bytes(200);
            reply.insert(reply.end(), blob.begin(), blob.end());
            byte_vector seg = frame_packet(reply, 8, r);
            const byte_vector nk = frame_packet(byte_vector{21}, 8, r);
            seg.insert(seg.end(), nk.begin(), nk.end());
            cap.send(direction::server_to_client, seg);
        }
        cap.send(direction::client_to_server, frame_packet(byte_vector{21}, 8, r));
        ++c2s_count;

        auto encrypted = [&](key_role iv_role, key_role key_role_, std::string_view service, std::uint8_t type, direction dir,
                             std::uint32_t seq) -> std::optional<validation_packet> {
            const auto &iv = values[static_cast<std::size_t>(iv_role)];
            const auto &key = values[static_cast<std::size_t>(key_role_)];
            if (iv.empty() || key.empty()) { return std::nullopt; }
            byte_vector payload{type};
            const auto s = detail::ssh_string(service);
            payload.insert(payload.end(), s.begin(), s.end());
            const byte_vector framed = frame_packet(payload, cipher.block_len, r);
            validation_packet pkt;
            pkt.ciphertext = encrypt_packet(cipher, iv, key, framed);
            pkt.cipher_name = cipher.name;
            pkt.dir = dir;
            pkt.sequence_number = seq;
            pkt.length_known = true;
            return pkt;
        };
        out.packet = encrypted(key_role::A, key_role::C, "ssh-userauth", 5, direction::client_to_server, c2s_count);
        if (out.packet) { cap.send(direction::client_to_server, out.packet->ciphertext); }
        out.server_packet = encrypted(key_role::B, key_role::D, "ssh-userauth", 6, direction::server_to_client, 3);
        if (out.server_packet) { cap.send(direction::server_to_client, out.server_packet->ciphertext); }
        out.pcap = cap.bytes();
    }
    return out;
}

/// draws aligned, disjoint IV/key offsets for a recipe
inline synthetic_recipe random_recipe(std::uint64_t seed, std::size_t heap_size, const cipher_spec &cipher,
                                      std::size_t lo = 0, std::size_t hi = 0) {
    synthetic_recipe rec;
    rec.heap_size = heap_size;
    rec.cipher = cipher;
    rec.rng_seed = seed;
    rng r{derive_seed(seed, 0x0ff5e7)};
    if (hi == 0) { hi = heap_size; }
    std::vector<detail::key_slot> slots;
    auto pick = [&](std::size_t len) {
        for (;;) {
            const std::size_t span_rows = (hi - lo - len) / 8 + 1;
            const std::size_t off = lo + r.below(span_rows) * 8;
            if (detail::slot_free(slots, off, len, heap_size)) {
                slots.push_back({key_role::A, off, len});
                return off;
            }
        }
    };
    rec.iv_offset = cipher.iv_len ? pick(cipher.iv_len) : 0;
    rec.key_offset = pick(cipher.key_len);
    return rec;
}

/// writes <stem>-heap.raw, <stem>.json and, when present, <stem>.pcap,
/// <stem>.ciphertext (client-to-server) and <stem>.s2c.ciphertext
inline void write_synthetic(const synthetic_entry &s, const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) { throw error{errc::io, "cannot create " + dir.string() + ": " + ec.message()}; }
    write_file(dir / (s.stem + "-heap.raw"),
               byte_span{s.entry.heap.bytes.data(), s.entry.heap.original_length});
    const std::string &j = s.json_text;
    write_file(dir / (s.stem + ".json"), byte_span{reinterpret_cast<const std::uint8_t *>(j.data()), j.size()});
    if (!s.pcap.empty()) { write_file(dir / (s.stem + ".pcap"), s.pcap); }
    if (s.packet) { write_file(dir / (s.stem + ".ciphertext"), s.packet->ciphertext); }
    if (s.server_packet) { write_file(dir / (s.stem + ".s2c.ciphertext"), s.server_packet->ciphertext); }
}

/// client-to-server packet stored beside a dataset entry: raw ciphertext
/// if present, else the pcap
inline std::optional<validation_packet> sibling_packet(const dataset_entry &e,
                                                       direction dir = direction::client_to_server) {
    const fs::path json{e.json_path};
    const fs::path stem = json.parent_path() / json.stem();
    const std::string cipher = dir == direction::client_to_server ? e.cipher_name() : [&] {
        const auto *d = e.find(key_role::D);
        return d ? d->cipher_name : e.cipher_name();
    }();
    const fs::path raw = stem.string() + (dir == direction::client_to_server ? ".ciphertext" : ".s2c.ciphertext");
    if (fs::exists(raw)) { return load_raw_ciphertext(raw, cipher, dir); }
    const fs::path cap = stem.string() + ".pcap";
    if (fs::exists(cap)) { return pcap::extract_first_encrypted_packet(cap, cipher, dir); }
    return std::nullopt;
}

}  // namespace keyhunt

#endif  // KEYHUNT_DATASET_HPP

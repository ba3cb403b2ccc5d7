// bruteforce.hpp
//
// Exhaustive (IV, key) search over 8-byte aligned heap offsets. The outer
// loop walks IV candidates, the inner loop key candidates, both over the
// whole search space; every pair is checked against one captured packet.

#ifndef KEYHUNT_BRUTEFORCE_HPP
#define KEYHUNT_BRUTEFORCE_HPP

#include <array>
#include <atomic>
#include <chrono>
#include <optional>
#include <thread>
#include <vector>

#include "aes.hpp"
#include "core.hpp"
#include "validate.hpp"

namespace keyhunt {

enum class search_source { full_heap, page_filtered, classifier_slices };

inline const char *search_source_name(search_source s) {
    switch (s) {
    case search_source::full_heap: return "full-heap";
    case search_source::page_filtered: return "page-filtered";
    case search_source::classifier_slices: return "classifier-slices";
    }
    return "?";
}

struct search_space {
    std::vector<candidate_region> regions;  // sorted, disjoint
    search_source source = search_source::full_heap;

    std::size_t bytes() const { return total_length(regions); }

    static search_space full(const heap_snapshot &heap) {
        return {{{0, heap.size(), region_origin::page_filter}}, search_source::full_heap};
    }

    static search_space from_regions(std::vector<candidate_region> regions, search_source source) {
        return {merge_regions(std::move(regions)), source};
    }
};

struct key_match {
    std::size_t iv_offset = 0;
    std::size_t key_offset = 0;
    byte_vector iv;
    byte_vector key;
    std::string cipher_name;
    std::uint64_t probes_tried = 0;
    double elapsed = 0.0;  // seconds

    bool operator==(const key_match &o) const {
        return iv_offset == o.iv_offset && key_offset == o.key_offset && iv == o.iv && key == o.key &&
               cipher_name == o.cipher_name;
    }
};

/// a match, or NotFound with the number of probes spent
struct search_result {
    std::optional<key_match> match;
    std::uint64_t probes_tried = 0;
    double elapsed = 0.0;

    bool found() const noexcept { return match.has_value(); }
};

struct search_options {
    /// advance the outer (IV) index to one row past the last key candidate
    /// after each inner sweep, as the printed pseudocode reads
    bool literal_outer_advance = false;
    unsigned workers = 1;
};

/// 8-aligned offsets inside the regions whose `read_len`-byte read stays in the heap
inline std::vector<std::size_t> candidate_offsets(const search_space &space, std::size_t heap_len,
                                                  std::size_t read_len) {
    std::vector<std::size_t> out;
    for (const auto &r : space.regions) {
        for (std::size_t o = (r.offset + 7) / 8 * 8; o < r.end(); o += 8) {
            if (o + read_len > heap_len) { break; }
            if (!out.empty() && o <= out.back()) { continue; }
            out.push_back(o);
        }
    }
    return out;
}

/// probes needed to exhaust the space: (#IV candidates) * (#key candidates)
inline std::uint64_t exhaustion_probes(const search_space &space, std::size_t heap_len, const cipher_spec &spec) {
    return static_cast<std::uint64_t>(candidate_offsets(space, heap_len, spec.iv_len).size()) *
           candidate_offsets(space, heap_len, spec.key_len).size();
}

namespace detail {

inline constexpr std::size_t none = ~std::size_t{0};

template <typename Key>
std::vector<Key> expand_keys(const heap_snapshot &heap, const std::vector<std::size_t> &offsets, std::size_t len) {
    std::vector<Key> keys(offsets.size());
    for (std::size_t i = 0; i < offsets.size(); ++i) { keys[i].expand(heap.view().subspan(offsets[i], len)); }
    return keys;
}

/// IVs and keys per tile of the double loop; a tile's key schedules stay in cache
inline constexpr std::size_t iv_tile = 64;
inline constexpr std::size_t key_tile = 128;

/// Runs the double loop and returns (iv index, key index) of the first pair
/// in (iv, key) order for which `probe(key index, iv bytes)` holds. The scan
/// goes tile by tile (a block of IVs against a block of keys), which visits
/// the same pairs and picks the same winner as the plain nested loop. Workers
/// take IV tiles round-robin and the lowest IV index wins.
template <typename Probe>
std::optional<std::pair<std::size_t, std::size_t>>
double_loop(const heap_snapshot &heap, const std::vector<std::size_t> &ivs, std::size_t n_keys, unsigned workers,
            Probe probe) {
    const std::uint8_t *base = heap.bytes.data();
    if (ivs.empty() || n_keys == 0) { return std::nullopt; }
    const unsigned n = std::max(1u, workers);

    std::atomic<std::size_t> best_iv{none};
    std::vector<std::pair<std::size_t, std::size_t>> found(n, {none, none});

    auto work = [&](unsigned w) {
        std::array<std::size_t, iv_tile> hit;
        for (std::size_t t0 = w * iv_tile; t0 < ivs.size(); t0 += n * iv_tile) {
            if (t0 >= best_iv.load(std::memory_order_relaxed)) { return; }
            std::size_t limit = std::min(iv_tile, ivs.size() - t0);  // IVs past a hit cannot win
            hit.fill(none);
            for (std::size_t k0 = 0; k0 < n_keys; k0 += key_tile) {
                const std::size_t k1 = std::min(n_keys, k0 + key_tile);
                for (std::size_t t = 0; t < limit; ++t) {
                    if (hit[t] != none) { continue; }
                    const std::uint8_t *iv = base + ivs[t0 + t];
                    for (std::size_t k = k0; k < k1; ++k) {
                        if (probe(k, iv)) {
                            hit[t] = k;
                            limit = t + 1;
                            break;
                        }
                    }
                }
            }
            for (std::size_t t = 0; t < limit; ++t) {
                if (hit[t] == none) { continue; }
                const std::size_t i = t0 + t;
                found[w] = {i, hit[t]};
                std::size_t cur = best_iv.load();
                while (i < cur && !best_iv.compare_exchange_weak(cur, i)) {}
                return;
            }
        }
    };
    if (n == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < n; ++w) { pool.emplace_back(work, w); }
        for (auto &t : pool) { t.join(); }
    }
    const std::size_t win = best_iv.load();
    if (win == none) { return std::nullopt; }
    for (const auto &f : found) {
        if (f.first == win) { return f; }
    }
    return std::nullopt;
}

}  // namespace detail

/// Searches IV offsets in ascending order and, for each, every key offset;
/// the first pair passing the packet checks wins. Reads may cross region
/// boundaries into the surrounding heap but never past its end.
inline search_result find_iv_and_key(const validation_packet &packet, const search_space &space,
                                     const heap_snapshot &heap, const search_options &opt = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    packet_prober prober{packet};
    const cipher_spec &spec = prober.spec();

    std::vector<std::size_t> ivs = candidate_offsets(space, heap.size(), spec.iv_len);
    const std::vector<std::size_t> key_offs = candidate_offsets(space, heap.size(), spec.key_len);
    if (opt.literal_outer_advance && !ivs.empty() && !key_offs.empty()) {
        // after the first inner sweep the outer index jumps past the last key candidate
        const std::size_t next = key_offs.back() + 8;
        std::vector<std::size_t> kept{ivs.front()};
        for (std::size_t o : ivs) {
            if (o >= next) { kept.push_back(o); }
        }
        ivs = std::move(kept);
    }

    std::optional<std::pair<std::size_t, std::size_t>> hit;
    if (prober.is_ctr()) {
        const auto keys = detail::expand_keys<aes::encrypt_key>(heap, key_offs, spec.key_len);
        hit = detail::double_loop(heap, ivs, keys.size(), opt.workers, [&](std::size_t k, const std::uint8_t *iv) {
            return prober.probe_ctr(keys[k], iv).valid;
        });
    } else {
        // D_k(c0) does not depend on the IV: decrypt once per key
        byte_vector decrypted(16 * key_offs.size());
        for (std::size_t k = 0; k < key_offs.size(); ++k) {
            aes::decrypt_key{heap.view().subspan(key_offs[k], spec.key_len)}.decrypt(prober.first_block().data(),
                                                                                     decrypted.data() + 16 * k);
        }
        hit = detail::double_loop(heap, ivs, key_offs.size(), opt.workers, [&](std::size_t k, const std::uint8_t *iv) {
            return prober.check_cbc(decrypted.data() + 16 * k, iv).valid;
        });
    }

    search_result res;
    res.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!hit) {
        res.probes_tried = static_cast<std::uint64_t>(ivs.size()) * key_offs.size();
        return res;
    }
    const auto [iv_index, key_index] = *hit;
    res.probes_tried = static_cast<std::uint64_t>(iv_index) * key_offs.size() + key_index + 1;
    key_match m;
    m.iv_offset = ivs[iv_index];
    m.key_offset = key_offs[key_index];
    m.iv.assign(heap.bytes.begin() + static_cast<std::ptrdiff_t>(m.iv_offset),
                heap.bytes.begin() + static_cast<std::ptrdiff_t>(m.iv_offset + spec.iv_len));
    m.key.assign(heap.bytes.begin() + static_cast<std::ptrdiff_t>(m.key_offset),
                 heap.bytes.begin() + static_cast<std::ptrdiff_t>(m.key_offset + spec.key_len));
    m.cipher_name = spec.name;
    m.probes_tried = res.probes_tried;
    m.elapsed = res.elapsed;
    res.match = std::move(m);
    return res;
}

/// IV candidates come from each predicted slice in offset order and key
/// candidates from the union of all predicted slices, so IV and key may sit
/// in different windows. Offsets shared by overlapping windows are probed once.
inline search_result find_in_slices(const validation_packet &packet, const std::vector<slice_sample> &slices,
                                    const heap_snapshot &heap, const search_options &opt = {}) {
    std::vector<candidate_region> regions;
    regions.reserve(slices.size());
    for (const auto &s : slices) { regions.push_back({s.offset, s.data.size(), region_origin::classifier}); }
    const auto space = search_space::from_regions(std::move(regions), search_source::classifier_slices);
    if (space.regions.empty()) {
        packet_prober check{packet};  // still rejects unsupported ciphers
        (void)check;
        return {};
    }
    return find_iv_and_key(packet, space, heap, opt);
}

}  // namespace keyhunt

#endif  // KEYHUNT_BRUTEFORCE_HPP

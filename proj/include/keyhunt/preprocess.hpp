// preprocess.hpp
//
// Heap reduction ahead of the key search: a hamming-distance page filter
// for the brute-force baseline, and the row entropy mask (neighbor
// difference test over the N x 8 byte matrix, row marking, isolated-row
// removal) feeding 128-byte slice extraction for the classifier.

#ifndef KEYHUNT_PREPROCESS_HPP
#define KEYHUNT_PREPROCESS_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <vector>

#include "core.hpp"

namespace keyhunt {

// ---------------------------------------------------------------------------
// page filter

/// mean popcount(b[i] ^ b[i+1]) over consecutive bytes of a page
inline double mean_hamming(byte_span page) {
    if (page.size() < 2) { return 0.0; }
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i + 1 < page.size(); ++i) {
        bits += static_cast<std::uint64_t>(std::popcount(static_cast<unsigned>(page[i] ^ page[i + 1])));
    }
    return static_cast<double>(bits) / static_cast<double>(page.size() - 1);
}

inline constexpr std::size_t default_page_len = 4096;
inline constexpr double default_page_threshold = 0.4;

/// keeps pages whose mean consecutive-byte hamming distance reaches
/// threshold * 8 bits; adjacent kept pages are merged
inline std::vector<candidate_region> page_filter(const heap_snapshot &heap, std::size_t page_len = default_page_len,
                                                 double threshold = default_page_threshold) {
    if (page_len == 0 || page_len % 8 != 0) {
        throw error{errc::invalid_argument, "page length must be a positive multiple of 8"};
    }
    std::vector<candidate_region> kept;
    const byte_span bytes = heap.view();
    for (std::size_t off = 0; off < bytes.size(); off += page_len) {
        const std::size_t len = std::min(page_len, bytes.size() - off);
        if (mean_hamming(bytes.subspan(off, len)) >= threshold * 8.0) {
            if (!kept.empty() && kept.back().end() == off) {
                kept.back().length += len;
            } else {
                kept.push_back({off, len, region_origin::page_filter});
            }
        }
    }
    return kept;
}

// ---------------------------------------------------------------------------
// entropy mask

/// switches for the literal readings of the mask formulas
struct mask_options {
    /// bitwise AND of absolute differences instead of logical AND of inequalities
    bool bitwise_and = false;
    /// mark rows with >= 4 zero cells (printed polarity) instead of >= 4 differing cells
    bool printed_polarity = false;
};

/// the heap viewed as N rows of 8 bytes; row i starts at byte 8*i
class heap_matrix {
public:
    explicit heap_matrix(byte_span bytes) : bytes_{bytes} {
        if (bytes.size() % 8 != 0) {
            throw error{errc::invalid_argument, "heap length must be a multiple of 8"};
        }
    }
    explicit heap_matrix(const heap_snapshot &heap) : heap_matrix{heap.view()} {}

    std::size_t rows() const noexcept { return bytes_.size() / 8; }
    std::uint8_t at(std::size_t i, std::size_t j) const noexcept { return bytes_[8 * i + j]; }
    std::uint64_t row_word(std::size_t i) const noexcept {
        std::uint64_t w;
        std::memcpy(&w, bytes_.data() + 8 * i, 8);
        return w;
    }
    byte_span bytes() const noexcept { return bytes_; }

private:
    byte_span bytes_;
};

/// Y matrix packed one byte per row: bit j set iff cell (i, j) tests true
struct diff_mask {
    std::vector<std::uint8_t> rows;

    bool at(std::size_t i, std::size_t j) const noexcept { return (rows[i] >> j) & 1u; }
    std::size_t n_rows() const noexcept { return rows.size(); }
};

struct row_marks {
    std::vector<std::uint8_t> z;  // row looks random
    std::vector<std::uint8_t> r;  // row and its successor look random

    std::size_t size() const noexcept { return r.size(); }
};

namespace detail {

// 0x80 in every byte lane of v that is nonzero (little-endian lanes)
constexpr std::uint64_t nonzero_lanes(std::uint64_t v) {
    constexpr std::uint64_t low7 = 0x7f7f7f7f7f7f7f7fULL;
    return (((v & low7) + low7) | v) & ~low7;
}

// gathers lane high bits 0x80 << 8j into bit j
constexpr std::uint8_t gather_lanes(std::uint64_t hi) {
    return static_cast<std::uint8_t>(((hi >> 7) * 0x0102040810204080ULL) >> 56);
}

}  // namespace detail

/// Y[i][j] = differs-from-right AND differs-from-below; the last column
/// uses only the lower neighbor, the last row only the right neighbor,
/// and the bottom-right cell, with no neighbor to test, is true
inline diff_mask compute_diff_mask(const heap_matrix &m, const mask_options &opt = {}) {
    const std::size_t n = m.rows();
    if (n < 2) { throw error{errc::matrix_too_small, "need at least two 8-byte rows"}; }
    diff_mask y;
    y.rows.resize(n);
    if (!opt.bitwise_and) {
        constexpr std::uint64_t lane7 = 0x8000000000000000ULL;
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint64_t x = m.row_word(i);
            // lane j compared with lane j+1; lane 7 has no right neighbor
            const std::uint64_t h = (detail::nonzero_lanes(x ^ (x >> 8)) & ~lane7) | lane7;
            const std::uint64_t v =
                i + 1 < n ? detail::nonzero_lanes(x ^ m.row_word(i + 1)) : 0x8080808080808080ULL;
            y.rows[i] = detail::gather_lanes(h & v);
        }
        return y;
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::uint8_t bits = 0;
        for (std::size_t j = 0; j < 8; ++j) {
            const int a = m.at(i, j);
            const bool has_right = j + 1 < 8;
            const bool has_below = i + 1 < n;
            int cell;
            if (has_right && has_below) {
                cell = std::abs(a - m.at(i, j + 1)) & std::abs(a - m.at(i + 1, j));
            } else if (has_right) {
                cell = std::abs(a - m.at(i, j + 1));
            } else if (has_below) {
                cell = std::abs(a - m.at(i + 1, j));
            } else {
                cell = 1;
            }
            if (cell != 0) { bits |= static_cast<std::uint8_t>(1u << j); }
        }
        y.rows[i] = bits;
    }
    return y;
}

/// z[i]: row has at least 4 differing cells; r[i] = z[i] && z[i+1]
inline row_marks mark_rows(const diff_mask &y, const mask_options &opt = {}) {
    const std::size_t n = y.n_rows();
    row_marks m;
    m.z.resize(n);
    m.r.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const int set = std::popcount(static_cast<unsigned>(y.rows[i]));
        m.z[i] = opt.printed_polarity ? (8 - set >= 4) : (set >= 4);
    }
    for (std::size_t i = 0; i + 1 < n; ++i) { m.r[i] = m.z[i] & m.z[i + 1]; }
    return m;
}

inline row_marks entropy_mask(const heap_snapshot &heap, const mask_options &opt = {}) {
    return mark_rows(compute_diff_mask(heap_matrix{heap}, opt), opt);
}

/// zeroes r-runs too short to hold a key of min_len bytes: a k-row key
/// leaves k - 1 consecutive ones in r
inline row_marks min_key_run_filter(row_marks marks, std::size_t min_len) {
    if (min_len == 0) { throw error{errc::invalid_argument, "min_len must be positive"}; }
    const std::size_t rows_needed = (min_len + 7) / 8;
    const std::size_t min_run = rows_needed > 1 ? rows_needed - 1 : 1;
    const std::size_t n = marks.r.size();
    for (std::size_t i = 0; i < n;) {
        if (!marks.r[i]) { ++i; continue; }
        std::size_t j = i;
        while (j < n && marks.r[j]) { ++j; }
        if (j - i < min_run) {
            std::fill(marks.r.begin() + static_cast<std::ptrdiff_t>(i), marks.r.begin() + static_cast<std::ptrdiff_t>(j), 0);
        }
        i = j;
    }
    return marks;
}

// ---------------------------------------------------------------------------
// slices

inline constexpr std::size_t default_stride = 64;

/// window start offsets: 0, stride, ... plus a final window anchored to the heap end
inline std::vector<std::size_t> window_offsets(std::size_t heap_len, std::size_t window, std::size_t stride) {
    if (window == 0 || stride == 0 || window % 8 != 0 || stride % 8 != 0 || stride > window) {
        throw error{errc::invalid_argument, "window and stride must be multiples of 8 with stride <= window"};
    }
    if (heap_len < window) {
        throw error{errc::heap_smaller_than_window,
                    std::to_string(heap_len) + "-byte heap is smaller than the " + std::to_string(window) + "-byte window"};
    }
    std::vector<std::size_t> offs;
    std::size_t off = 0;
    for (; off + window <= heap_len; off += stride) { offs.push_back(off); }
    if (offs.back() + window < heap_len) { offs.push_back(heap_len - window); }
    return offs;
}

/// emits every window holding at least one r-marked row; with annotations,
/// label = 1 iff some key byte range intersects the window
inline std::vector<slice_sample> extract_slices(const heap_snapshot &heap, const row_marks &marks,
                                                const std::vector<key_annotation> *annotations = nullptr,
                                                std::size_t window = slice_window,
                                                std::size_t stride = default_stride) {
    const auto offsets = window_offsets(heap.size(), window, stride);
    // prefix sums of r over rows for O(1) window queries
    std::vector<std::uint32_t> prefix(marks.r.size() + 1, 0);
    for (std::size_t i = 0; i < marks.r.size(); ++i) { prefix[i + 1] = prefix[i] + marks.r[i]; }

    std::vector<slice_sample> out;
    for (std::size_t off : offsets) {
        const std::size_t first = off / 8;
        const std::size_t last = std::min((off + window) / 8, marks.r.size());
        if (prefix[last] == prefix[first]) { continue; }
        slice_sample s;
        s.offset = off;
        s.data.assign(heap.bytes.begin() + static_cast<std::ptrdiff_t>(off),
                      heap.bytes.begin() + static_cast<std::ptrdiff_t>(off + window));
        if (annotations != nullptr) {
            s.label = 0;
            for (const auto &a : *annotations) {
                if (ranges_intersect(off, window, a.offset, a.length)) { s.label = 1; break; }
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// byte coverage of a set of windows as merged regions
inline std::vector<candidate_region> slices_to_regions(const std::vector<slice_sample> &slices,
                                                       region_origin origin = region_origin::classifier) {
    std::vector<candidate_region> regions;
    regions.reserve(slices.size());
    for (const auto &s : slices) { regions.push_back({s.offset, s.data.size(), origin}); }
    return merge_regions(std::move(regions));
}

}  // namespace keyhunt

#endif  // KEYHUNT_PREPROCESS_HPP

#include <gtest/gtest.h>

#include <cstdlib>

#include <keyhunt/dataset.hpp>
#include <keyhunt/preprocess.hpp>

#include "reference_mask.hpp"

using namespace keyhunt;

namespace {

heap_snapshot heap_of(byte_vector v) { return heap_snapshot{std::move(v), 0x1000}; }

}  // namespace

// ---------------------------------------------------------------------------
// page filter

TEST(PageFilter, ZeroPageDropped) {
    EXPECT_TRUE(page_filter(heap_of(byte_vector(4096, 0))).empty());
    EXPECT_EQ(mean_hamming(byte_vector(4096, 0)), 0.0);
}

TEST(PageFilter, RandomPageKept) {
    rng r{17};
    const auto bytes = r.bytes(4096);
    EXPECT_GE(mean_hamming(bytes), 3.2);
    const auto kept = page_filter(heap_of(bytes));
    ASSERT_EQ(kept.size(), 1u);
    EXPECT_EQ(kept[0].offset, 0u);
    EXPECT_EQ(kept[0].length, 4096u);
}

TEST(PageFilter, AdjacentPagesMergeAndAsciiDrops) {
    rng r{3};
    byte_vector v;
    const auto rnd = r.bytes(8192);
    v.insert(v.end(), rnd.begin(), rnd.end());
    const std::string text = "the quick brown fox jumps over the lazy dog ";
    for (std::size_t i = 0; i < 4096; ++i) { v.push_back(static_cast<std::uint8_t>(text[i % text.size()])); }
    const auto more = r.bytes(4096);
    v.insert(v.end(), more.begin(), more.end());
    const auto kept = page_filter(heap_of(v));
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_EQ(kept[0].offset, 0u);
    EXPECT_EQ(kept[0].length, 8192u);
    EXPECT_EQ(kept[1].offset, 12288u);
}

TEST(PageFilter, ThresholdMonotone) {
    const auto syn = generate_synthetic(random_recipe(5, 132 * 1024, lookup_cipher("aes128-ctr")));
    std::size_t prev = ~std::size_t{0};
    for (double t = 0.0; t <= 0.6; t += 0.05) {
        const auto kept = total_length(page_filter(syn.entry.heap, 4096, t));
        EXPECT_LE(kept, prev) << t;
        prev = kept;
    }
}

TEST(PageFilter, RejectsBadPageLength) {
    EXPECT_THROW(page_filter(heap_of(byte_vector(64, 1)), 12), error);
    EXPECT_THROW(page_filter(heap_of(byte_vector(64, 1)), 0), error);
}

// ---------------------------------------------------------------------------
// diff mask

TEST(DiffMask, ConstantMatrixAllFalseExceptCorner) {
    const byte_vector v(64, 0x41);
    const auto y = compute_diff_mask(heap_matrix{v});
    for (std::size_t i = 0; i < y.n_rows(); ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            // the bottom-right cell has no neighbor to compare against
            const bool corner = i + 1 == y.n_rows() && j == 7;
            EXPECT_EQ(y.at(i, j), corner) << i << "," << j;
        }
    }
    const auto m = mark_rows(y);
    for (auto z : m.z) { EXPECT_FALSE(z); }
}

TEST(DiffMask, DistinctNeighborsAllTrue) {
    byte_vector v(16);
    for (std::size_t i = 0; i < 16; ++i) { v[i] = static_cast<std::uint8_t>(i * 17); }
    const auto y = compute_diff_mask(heap_matrix{v});
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 8; ++j) { EXPECT_TRUE(y.at(i, j)); }
    }
}

TEST(DiffMask, TooSmall) {
    try {
        compute_diff_mask(heap_matrix{byte_vector(8, 1)});
        FAIL();
    } catch (const error &e) {
        EXPECT_EQ(e.code(), errc::matrix_too_small);
    }
}

TEST(DiffMask, BitwiseCanMissUnequalNeighbors) {
    // |1-2| & |1-5| = 1 & 4 = 0 although both neighbors differ
    byte_vector v(16, 0);
    v[0] = 1;
    v[1] = 2;
    v[8] = 5;
    mask_options bitwise;
    bitwise.bitwise_and = true;
    EXPECT_TRUE(compute_diff_mask(heap_matrix{v}).at(0, 0));
    EXPECT_FALSE(compute_diff_mask(heap_matrix{v}, bitwise).at(0, 0));
}

class MaskOracle : public ::testing::TestWithParam<int> {};

TEST_P(MaskOracle, MatchesNaiveReference) {
    mask_options opt;
    opt.bitwise_and = GetParam() & 1;
    opt.printed_polarity = GetParam() & 2;
    rng r{static_cast<std::uint64_t>(100 + GetParam())};
    for (int trial = 0; trial < 150; ++trial) {
        const std::size_t rows = 2 + r.below(trial < 100 ? 64 : 2048);
        auto bytes = test::mixed_bytes(r, rows * 8);
        const heap_matrix m{bytes};
        const auto y = compute_diff_mask(m, opt);
        const auto ref = test::reference_mask(bytes, opt);
        ASSERT_EQ(y.n_rows(), rows);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < 8; ++j) { ASSERT_EQ(y.at(i, j), ref.y[i][j]) << i << "," << j; }
        }
        const auto marks = mark_rows(y, opt);
        ASSERT_EQ(std::vector<bool>(marks.z.begin(), marks.z.end()), ref.z);
        ASSERT_EQ(std::vector<bool>(marks.r.begin(), marks.r.end()), ref.r);
    }
}

INSTANTIATE_TEST_SUITE_P(Variants, MaskOracle, ::testing::Values(0, 1, 2, 3));

// ---------------------------------------------------------------------------
// row marks

TEST(MarkRows, OpeningDropsIsolatedRows) {
    diff_mask y;
    y.rows = {0xff, 0x00, 0xff, 0xff, 0x00};
    const auto m = mark_rows(y);
    EXPECT_EQ(m.z, (std::vector<std::uint8_t>{1, 0, 1, 1, 0}));
    EXPECT_EQ(m.r, (std::vector<std::uint8_t>{0, 0, 1, 0, 0}));
}

TEST(MarkRows, CountThresholdIsFour) {
    diff_mask y;
    y.rows = {0x0f, 0x07, 0xf0, 0x00};
    const auto m = mark_rows(y);
    EXPECT_EQ(m.z, (std::vector<std::uint8_t>{1, 0, 1, 0}));
    mask_options printed;
    printed.printed_polarity = true;
    const auto p = mark_rows(y, printed);
    EXPECT_EQ(p.z, (std::vector<std::uint8_t>{1, 1, 1, 1}));
}

TEST(MarkRows, ConstantRowInVariedContext) {
    rng r{1};
    auto v = r.bytes(64);
    std::fill(v.begin() + 24, v.begin() + 32, 0x33);
    const auto m = entropy_mask(heap_of(v));
    EXPECT_FALSE(m.z[3]);
    EXPECT_TRUE(m.z[2]);
    EXPECT_TRUE(m.z[4]);
}

TEST(MarkRows, SixteenByteKeyInZeroHeap) {
    rng r{21};
    byte_vector v(256, 0);
    const auto key = r.bytes(16);
    std::copy(key.begin(), key.end(), v.begin() + 80);  // rows 10 and 11
    const auto m = entropy_mask(heap_of(v));
    EXPECT_TRUE(m.z[10]);
    EXPECT_TRUE(m.z[11]);
    EXPECT_FALSE(m.z[9]);
    EXPECT_FALSE(m.z[12]);
    EXPECT_TRUE(m.r[10]);
    EXPECT_FALSE(m.r[11]);
    for (std::size_t i = 0; i < m.r.size(); ++i) {
        if (i != 10) { EXPECT_FALSE(m.r[i]) << i; }
    }
}

TEST(MarkRows, KeyInLastRowsStillMarked) {
    rng r{22};
    byte_vector v(256, 0);
    const auto key = r.bytes(24);
    std::copy(key.begin(), key.end(), v.end() - 24);
    const auto m = entropy_mask(heap_of(v));
    EXPECT_TRUE(m.z[29]);
    EXPECT_TRUE(m.z[30]);
    EXPECT_TRUE(m.z[31]);
    EXPECT_TRUE(m.r[29]);
    EXPECT_TRUE(m.r[30]);
}

// ---------------------------------------------------------------------------
// run filter

TEST(MinKeyRunFilter, RunLengths) {
    row_marks m;
    m.r = {0, 1, 1, 0, 1, 1, 1, 0, 1, 0};
    m.z = m.r;
    const auto a = min_key_run_filter(m, 24);  // needs runs >= 2
    EXPECT_EQ(a.r, (std::vector<std::uint8_t>{0, 1, 1, 0, 1, 1, 1, 0, 0, 0}));
    const auto b = min_key_run_filter(m, 12);  // any run
    EXPECT_EQ(b.r, m.r);
    const auto c = min_key_run_filter(m, 64);  // needs runs >= 7
    EXPECT_EQ(c.r, (std::vector<std::uint8_t>(10, 0)));
    const auto d = min_key_run_filter(m, 32);  // needs runs >= 3
    EXPECT_EQ(d.r, (std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 1, 0, 0, 0}));
}

// ---------------------------------------------------------------------------
// slices

TEST(ExtractSlices, NothingMarkedNothingEmitted) {
    const auto h = heap_of(byte_vector(1024, 0));
    EXPECT_TRUE(extract_slices(h, entropy_mask(h)).empty());
}

TEST(ExtractSlices, ThirtyTwoByteKeyAt256) {
    rng r{4};
    byte_vector v(1024, 0);
    const auto key = r.bytes(32);
    std::copy(key.begin(), key.end(), v.begin() + 256);
    const auto h = heap_of(v);
    const std::vector<key_annotation> ann = {{key_role::C, 256, 32, key, "aes256-ctr"}};
    const auto s = extract_slices(h, entropy_mask(h), &ann);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].offset, 192u);
    EXPECT_EQ(s[1].offset, 256u);
    EXPECT_EQ(s[0].label, 1);
    EXPECT_EQ(s[1].label, 1);
    EXPECT_EQ(s[0].data.size(), 128u);
    EXPECT_TRUE(std::equal(s[1].data.begin(), s[1].data.begin() + 32, key.begin()));
}

TEST(ExtractSlices, LabelsFollowIntersection) {
    const auto syn = generate_synthetic(random_recipe(8, 16384, lookup_cipher("aes192-ctr")));
    const auto &e = syn.entry;
    const auto s = extract_slices(e.heap, entropy_mask(e.heap), &e.annotations);
    ASSERT_FALSE(s.empty());
    for (const auto &sl : s) {
        bool hit = false;
        for (const auto &a : e.annotations) {
            for (std::size_t b = a.offset; b < a.end(); ++b) { hit = hit || (b >= sl.offset && b < sl.offset + 128); }
        }
        EXPECT_EQ(sl.label, hit ? 1 : 0) << sl.offset;
        EXPECT_EQ(sl.offset % 8, 0u);
    }
}

TEST(ExtractSlices, FinalWindowRightAnchored) {
    const auto offs = window_offsets(1000, 128, 64);
    EXPECT_EQ(offs.back(), 1000u - 128u);
    EXPECT_EQ(offs[offs.size() - 2], 832u);
    const auto exact = window_offsets(1024, 128, 64);
    EXPECT_EQ(exact.back(), 896u);
    EXPECT_EQ(exact.size(), 15u);

    rng r{6};
    byte_vector v(1000, 0);
    const auto key = r.bytes(16);
    std::copy(key.begin(), key.end(), v.end() - 16);
    const auto h = heap_of(v);
    const auto s = extract_slices(h, entropy_mask(h));
    ASSERT_FALSE(s.empty());
    EXPECT_EQ(s.back().offset, 872u);
}

TEST(ExtractSlices, SmallHeapAndBadConfig) {
    const auto h = heap_of(byte_vector(64, 1));
    try {
        extract_slices(h, entropy_mask(h));
        FAIL();
    } catch (const error &e) {
        EXPECT_EQ(e.code(), errc::heap_smaller_than_window);
    }
    const auto big = heap_of(byte_vector(1024, 1));
    EXPECT_THROW(extract_slices(big, entropy_mask(big), nullptr, 128, 12), error);
    EXPECT_THROW(extract_slices(big, entropy_mask(big), nullptr, 128, 256), error);
}

TEST(ExtractSlices, MarkedRowsCoveredOnceOrTwice) {
    rng r{9};
    for (int t = 0; t < 30; ++t) {
        const auto v = test::mixed_bytes(r, 8 * (64 + r.below(1000)));
        const auto h = heap_of(v);
        const auto marks = entropy_mask(h);
        const auto s = extract_slices(h, marks);
        const std::size_t n = marks.r.size();
        std::vector<int> cover(n, 0);
        for (const auto &sl : s) {
            for (std::size_t row = sl.offset / 8; row < (sl.offset + 128) / 8; ++row) { ++cover[row]; }
        }
        // rows reached only through the right-anchored tail window may be covered thrice
        const std::size_t tail = n > 16 ? n - 16 : 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!marks.r[i]) { continue; }
            EXPECT_GE(cover[i], 1) << i;
            if (i < tail) { EXPECT_LE(cover[i], 2) << i; }
        }
    }
}

TEST(ExtractSlices, SyntheticKeysMarkedAndSliced) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const char *c[] = {"aes128-ctr", "aes192-ctr", "aes256-ctr"};
        const auto syn = generate_synthetic(random_recipe(seed, 32768, lookup_cipher(c[seed % 3])));
        const auto &e = syn.entry;
        const auto marks = entropy_mask(e.heap);
        const auto s = extract_slices(e.heap, marks, &e.annotations);
        for (const auto &a : e.annotations) {
            if (a.length < 16) { continue; }
            for (std::size_t row = a.offset / 8; row < a.end() / 8; ++row) {
                EXPECT_TRUE(marks.z[row]) << "seed " << seed << " key " << role_letter(a.role);
            }
            bool sliced = false;
            for (const auto &sl : s) { sliced = sliced || ranges_intersect(sl.offset, 128, a.offset, a.length); }
            EXPECT_TRUE(sliced);
        }
    }
}

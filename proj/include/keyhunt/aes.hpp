// aes.hpp
//
// Table-driven AES block cipher (128/192/256-bit keys). Only single-block
// encrypt/decrypt is needed: candidate validation decrypts one block per
// probe, and the synthetic traffic generator runs CTR/CBC on top of it.

#ifndef KEYHUNT_AES_HPP
#define KEYHUNT_AES_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

#include "core.hpp"

#if defined(__x86_64__) || defined(__i386__)
#define KEYHUNT_AES_X86 1
#include <immintrin.h>
#endif

namespace keyhunt::aes {

namespace detail {

constexpr std::uint8_t xtime(std::uint8_t x) {
    return static_cast<std::uint8_t>((x << 1) ^ ((x & 0x80) ? 0x1b : 0x00));
}

constexpr std::uint8_t gmul(std::uint8_t a, std::uint8_t b) {
    std::uint8_t p = 0;
    while (b != 0) {
        if (b & 1) { p ^= a; }
        a = xtime(a);
        b >>= 1;
    }
    return p;
}

constexpr std::array<std::uint8_t, 256> make_sbox() {
    std::array<std::uint8_t, 256> s{};
    for (int x = 0; x < 256; ++x) {
        std::uint8_t inv = 0;
        if (x != 0) {
            for (int y = 1; y < 256; ++y) {
                if (gmul(static_cast<std::uint8_t>(x), static_cast<std::uint8_t>(y)) == 1) {
                    inv = static_cast<std::uint8_t>(y);
                    break;
                }
            }
        }
        std::uint8_t r = inv;
        for (int k = 1; k <= 4; ++k) {
            r ^= static_cast<std::uint8_t>((inv << k) | (inv >> (8 - k)));
        }
        s[x] = static_cast<std::uint8_t>(r ^ 0x63);
    }
    return s;
}

constexpr std::array<std::uint8_t, 256> invert(const std::array<std::uint8_t, 256> &s) {
    std::array<std::uint8_t, 256> inv{};
    for (int x = 0; x < 256; ++x) { inv[s[x]] = static_cast<std::uint8_t>(x); }
    return inv;
}

constexpr std::uint32_t rotr(std::uint32_t x, int n) { return n == 0 ? x : (x >> n) | (x << (32 - n)); }

using table = std::array<std::uint32_t, 256>;

constexpr std::array<table, 4> make_te(const std::array<std::uint8_t, 256> &s) {
    std::array<table, 4> t{};
    for (int x = 0; x < 256; ++x) {
        const std::uint8_t v = s[x];
        const std::uint32_t w = (std::uint32_t{gmul(v, 2)} << 24) | (std::uint32_t{v} << 16) |
                                (std::uint32_t{v} << 8) | std::uint32_t{gmul(v, 3)};
        for (int k = 0; k < 4; ++k) { t[k][x] = rotr(w, 8 * k); }
    }
    return t;
}

constexpr std::array<table, 4> make_td(const std::array<std::uint8_t, 256> &si) {
    std::array<table, 4> t{};
    for (int x = 0; x < 256; ++x) {
        const std::uint8_t v = si[x];
        const std::uint32_t w = (std::uint32_t{gmul(v, 0x0e)} << 24) | (std::uint32_t{gmul(v, 0x09)} << 16) |
                                (std::uint32_t{gmul(v, 0x0d)} << 8) | std::uint32_t{gmul(v, 0x0b)};
        for (int k = 0; k < 4; ++k) { t[k][x] = rotr(w, 8 * k); }
    }
    return t;
}

inline constexpr auto sbox = make_sbox();
inline constexpr auto inv_sbox = invert(sbox);
inline constexpr auto te = make_te(sbox);
inline constexpr auto td = make_td(inv_sbox);

inline std::uint32_t load_be(const std::uint8_t *p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

inline void store_be(std::uint8_t *p, std::uint32_t v) {
    p[0] = static_cast<std::uint8_t>(v >> 24);
    p[1] = static_cast<std::uint8_t>(v >> 16);
    p[2] = static_cast<std::uint8_t>(v >> 8);
    p[3] = static_cast<std::uint8_t>(v);
}

inline std::uint32_t sub_word(std::uint32_t w) {
    return (std::uint32_t{sbox[w >> 24]} << 24) | (std::uint32_t{sbox[(w >> 16) & 0xff]} << 16) |
           (std::uint32_t{sbox[(w >> 8) & 0xff]} << 8) | sbox[w & 0xff];
}

inline bool cpu_has_aesni() {
#ifdef KEYHUNT_AES_X86
    __builtin_cpu_init();
    return __builtin_cpu_supports("aes");
#else
    return false;
#endif
}

inline bool use_hardware = cpu_has_aesni();

#ifdef KEYHUNT_AES_X86
__attribute__((target("aes,sse2"))) inline void hw_encrypt(const std::uint8_t *rk, int rounds, const std::uint8_t *in,
                                                            std::uint8_t *out) {
    const auto *k = reinterpret_cast<const __m128i *>(rk);
    __m128i s = _mm_xor_si128(_mm_loadu_si128(reinterpret_cast<const __m128i *>(in)), _mm_load_si128(k));
    for (int r = 1; r < rounds; ++r) { s = _mm_aesenc_si128(s, _mm_load_si128(k + r)); }
    s = _mm_aesenclast_si128(s, _mm_load_si128(k + rounds));
    _mm_storeu_si128(reinterpret_cast<__m128i *>(out), s);
}

// expects the equivalent-inverse-cipher schedule (InvMixColumns applied to inner round keys)
__attribute__((target("aes,sse2"))) inline void hw_decrypt(const std::uint8_t *rk, int rounds, const std::uint8_t *in,
                                                            std::uint8_t *out) {
    const auto *k = reinterpret_cast<const __m128i *>(rk);
    __m128i s = _mm_xor_si128(_mm_loadu_si128(reinterpret_cast<const __m128i *>(in)), _mm_load_si128(k));
    for (int r = 1; r < rounds; ++r) { s = _mm_aesdec_si128(s, _mm_load_si128(k + r)); }
    s = _mm_aesdeclast_si128(s, _mm_load_si128(k + rounds));
    _mm_storeu_si128(reinterpret_cast<__m128i *>(out), s);
}

#endif

inline void round_key_bytes(const std::uint32_t *words, int rounds, std::uint8_t *out) {
    for (int i = 0; i < 4 * (rounds + 1); ++i) { store_be(out + 4 * i, words[i]); }
}

}  // namespace detail

/// true when the CPU offers AES instructions
inline bool hardware_available() { return detail::cpu_has_aesni(); }

/// whether block operations use the AES instructions; defaults to on when available
inline bool hardware_enabled() { return detail::use_hardware; }

/// selects the AES-instruction path (ignored when unavailable) or the table path
inline void set_hardware(bool on) { detail::use_hardware = on && detail::cpu_has_aesni(); }

using block = std::array<std::uint8_t, 16>;

/// expanded encryption schedule for one key
class encrypt_key {
public:
    encrypt_key() = default;

    explicit encrypt_key(byte_span key) { expand(key); }

    void expand(byte_span key) {
        if (key.size() != 16 && key.size() != 24 && key.size() != 32) {
            throw error{errc::invalid_argument, "AES key must be 16, 24 or 32 bytes"};
        }
        const int nk = static_cast<int>(key.size() / 4);
        rounds_ = nk + 6;
        const int total = 4 * (rounds_ + 1);
        for (int i = 0; i < nk; ++i) { rk_[i] = detail::load_be(key.data() + 4 * i); }
        std::uint32_t rcon = 0x01;
        for (int i = nk; i < total; ++i) {
            std::uint32_t t = rk_[i - 1];
            if (i % nk == 0) {
                t = detail::sub_word((t << 8) | (t >> 24)) ^ (rcon << 24);
                rcon = detail::xtime(static_cast<std::uint8_t>(rcon));
            } else if (nk > 6 && i % nk == 4) {
                t = detail::sub_word(t);
            }
            rk_[i] = rk_[i - nk] ^ t;
        }
        detail::round_key_bytes(rk_.data(), rounds_, rkb_.data());
    }

    int rounds() const noexcept { return rounds_; }
    const std::uint32_t *words() const noexcept { return rk_.data(); }

    void encrypt(const std::uint8_t *in, std::uint8_t *out) const {
#ifdef KEYHUNT_AES_X86
        if (detail::use_hardware) {
            detail::hw_encrypt(rkb_.data(), rounds_, in, out);
            return;
        }
#endif
        encrypt_table(in, out);
    }

    void encrypt_table(const std::uint8_t *in, std::uint8_t *out) const {
        using detail::te;
        using detail::sbox;
        const std::uint32_t *rk = rk_.data();
        std::uint32_t s0 = detail::load_be(in) ^ rk[0];
        std::uint32_t s1 = detail::load_be(in + 4) ^ rk[1];
        std::uint32_t s2 = detail::load_be(in + 8) ^ rk[2];
        std::uint32_t s3 = detail::load_be(in + 12) ^ rk[3];
        for (int r = 1; r < rounds_; ++r) {
            rk += 4;
            const std::uint32_t t0 = te[0][s0 >> 24] ^ te[1][(s1 >> 16) & 0xff] ^ te[2][(s2 >> 8) & 0xff] ^ te[3][s3 & 0xff] ^ rk[0];
            const std::uint32_t t1 = te[0][s1 >> 24] ^ te[1][(s2 >> 16) & 0xff] ^ te[2][(s3 >> 8) & 0xff] ^ te[3][s0 & 0xff] ^ rk[1];
            const std::uint32_t t2 = te[0][s2 >> 24] ^ te[1][(s3 >> 16) & 0xff] ^ te[2][(s0 >> 8) & 0xff] ^ te[3][s1 & 0xff] ^ rk[2];
            const std::uint32_t t3 = te[0][s3 >> 24] ^ te[1][(s0 >> 16) & 0xff] ^ te[2][(s1 >> 8) & 0xff] ^ te[3][s2 & 0xff] ^ rk[3];
            s0 = t0; s1 = t1; s2 = t2; s3 = t3;
        }
        rk += 4;
        auto last = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d, std::uint32_t k) {
            return ((std::uint32_t{sbox[a >> 24]} << 24) | (std::uint32_t{sbox[(b >> 16) & 0xff]} << 16) |
                    (std::uint32_t{sbox[(c >> 8) & 0xff]} << 8) | std::uint32_t{sbox[d & 0xff]}) ^ k;
        };
        detail::store_be(out, last(s0, s1, s2, s3, rk[0]));
        detail::store_be(out + 4, last(s1, s2, s3, s0, rk[1]));
        detail::store_be(out + 8, last(s2, s3, s0, s1, rk[2]));
        detail::store_be(out + 12, last(s3, s0, s1, s2, rk[3]));
    }

    block encrypt(const block &in) const {
        block out;
        encrypt(in.data(), out.data());
        return out;
    }

private:
    std::array<std::uint32_t, 60> rk_{};
    alignas(16) std::array<std::uint8_t, 240> rkb_{};
    int rounds_ = 0;
};

/// expanded decryption schedule (equivalent inverse cipher)
class decrypt_key {
public:
    decrypt_key() = default;

    explicit decrypt_key(byte_span key) { expand(key); }

    void expand(byte_span key) {
        encrypt_key ek{key};
        rounds_ = ek.rounds();
        const std::uint32_t *w = ek.words();
        for (int r = 0; r <= rounds_; ++r) {
            for (int c = 0; c < 4; ++c) { rk_[4 * r + c] = w[4 * (rounds_ - r) + c]; }
        }
        using detail::td;
        using detail::sbox;
        for (int i = 4; i < 4 * rounds_; ++i) {
            const std::uint32_t x = rk_[i];
            rk_[i] = td[0][sbox[x >> 24]] ^ td[1][sbox[(x >> 16) & 0xff]] ^ td[2][sbox[(x >> 8) & 0xff]] ^ td[3][sbox[x & 0xff]];
        }
        detail::round_key_bytes(rk_.data(), rounds_, rkb_.data());
    }

    void decrypt(const std::uint8_t *in, std::uint8_t *out) const {
#ifdef KEYHUNT_AES_X86
        if (detail::use_hardware) {
            detail::hw_decrypt(rkb_.data(), rounds_, in, out);
            return;
        }
#endif
        decrypt_table(in, out);
    }

    void decrypt_table(const std::uint8_t *in, std::uint8_t *out) const {
        using detail::td;
        using detail::inv_sbox;
        const std::uint32_t *rk = rk_.data();
        std::uint32_t s0 = detail::load_be(in) ^ rk[0];
        std::uint32_t s1 = detail::load_be(in + 4) ^ rk[1];
        std::uint32_t s2 = detail::load_be(in + 8) ^ rk[2];
        std::uint32_t s3 = detail::load_be(in + 12) ^ rk[3];
        for (int r = 1; r < rounds_; ++r) {
            rk += 4;
            const std::uint32_t t0 = td[0][s0 >> 24] ^ td[1][(s3 >> 16) & 0xff] ^ td[2][(s2 >> 8) & 0xff] ^ td[3][s1 & 0xff] ^ rk[0];
            const std::uint32_t t1 = td[0][s1 >> 24] ^ td[1][(s0 >> 16) & 0xff] ^ td[2][(s3 >> 8) & 0xff] ^ td[3][s2 & 0xff] ^ rk[1];
            const std::uint32_t t2 = td[0][s2 >> 24] ^ td[1][(s1 >> 16) & 0xff] ^ td[2][(s0 >> 8) & 0xff] ^ td[3][s3 & 0xff] ^ rk[2];
            const std::uint32_t t3 = td[0][s3 >> 24] ^ td[1][(s2 >> 16) & 0xff] ^ td[2][(s1 >> 8) & 0xff] ^ td[3][s0 & 0xff] ^ rk[3];
            s0 = t0; s1 = t1; s2 = t2; s3 = t3;
        }
        rk += 4;
        auto last = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d, std::uint32_t k) {
            return ((std::uint32_t{inv_sbox[a >> 24]} << 24) | (std::uint32_t{inv_sbox[(b >> 16) & 0xff]} << 16) |
                    (std::uint32_t{inv_sbox[(c >> 8) & 0xff]} << 8) | std::uint32_t{inv_sbox[d & 0xff]}) ^ k;
        };
        detail::store_be(out, last(s0, s3, s2, s1, rk[0]));
        detail::store_be(out + 4, last(s1, s0, s3, s2, rk[1]));
        detail::store_be(out + 8, last(s2, s1, s0, s3, rk[2]));
        detail::store_be(out + 12, last(s3, s2, s1, s0, rk[3]));
    }

    block decrypt(const block &in) const {
        block out;
        decrypt(in.data(), out.data());
        return out;
    }

private:
    std::array<std::uint32_t, 60> rk_{};
    alignas(16) std::array<std::uint8_t, 240> rkb_{};
    int rounds_ = 0;
};

/// increments a 16-byte counter block as a big-endian integer
inline void increment_counter(block &ctr) {
    for (int i = 15; i >= 0; --i) {
        if (++ctr[static_cast<std::size_t>(i)] != 0) { break; }
    }
}

/// AES-CTR keystream XOR, counter starting at iv; encrypt == decrypt
inline byte_vector ctr_xcrypt(byte_span key, byte_span iv, byte_span data) {
    encrypt_key ek{key};
    block ctr{};
    std::copy_n(iv.begin(), 16, ctr.begin());
    byte_vector out(data.begin(), data.end());
    for (std::size_t off = 0; off < out.size(); off += 16) {
        const block ks = ek.encrypt(ctr);
        for (std::size_t i = 0; i < 16 && off + i < out.size(); ++i) { out[off + i] ^= ks[i]; }
        increment_counter(ctr);
    }
    return out;
}

/// AES-CBC encryption without padding; data length must be a block multiple
inline byte_vector cbc_encrypt(byte_span key, byte_span iv, byte_span data) {
    if (data.size() % 16 != 0) { throw error{errc::invalid_argument, "CBC data is not block aligned"}; }
    encrypt_key ek{key};
    block chain{};
    std::copy_n(iv.begin(), 16, chain.begin());
    byte_vector out(data.size());
    for (std::size_t off = 0; off < data.size(); off += 16) {
        block in;
        for (std::size_t i = 0; i < 16; ++i) { in[i] = data[off + i] ^ chain[i]; }
        chain = ek.encrypt(in);
        std::copy(chain.begin(), chain.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
    }
    return out;
}

inline byte_vector cbc_decrypt(byte_span key, byte_span iv, byte_span data) {
    if (data.size() % 16 != 0) { throw error{errc::invalid_argument, "CBC data is not block aligned"}; }
    decrypt_key dk{key};
    block chain{};
    std::copy_n(iv.begin(), 16, chain.begin());
    byte_vector out(data.size());
    for (std::size_t off = 0; off < data.size(); off += 16) {
        block in;
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(off), 16, in.begin());
        const block p = dk.decrypt(in);
        for (std::size_t i = 0; i < 16; ++i) { out[off + i] = p[i] ^ chain[i]; }
        chain = in;
    }
    return out;
}

}  // namespace keyhunt::aes

#endif  // KEYHUNT_AES_HPP

#include <gtest/gtest.h>

#include <filesystem>

#include <keyhunt/dataset.hpp>
#include <keyhunt/validate.hpp>

using namespace keyhunt;
namespace fs = std::filesystem;

namespace {

struct built_packet {
    validation_packet packet;
    byte_vector iv, key;
    std::size_t framed_len;
};

built_packet make_packet(const std::string &cipher, std::uint64_t seed, std::size_t payload_len = 17) {
    rng r{seed};
    const auto &spec = lookup_cipher(cipher);
    built_packet b;
    b.iv = r.bytes(spec.iv_len);
    b.key = r.bytes(spec.key_len);
    const auto framed = frame_packet(r.bytes(payload_len), spec.block_len, r);
    b.framed_len = framed.size();
    b.packet.ciphertext = encrypt_packet(spec, b.iv, b.key, framed);
    b.packet.cipher_name = spec.name;
    return b;
}

fs::path temp_dir() {
    const auto d = fs::temp_directory_path() / ("keyhunt-validate-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST(FramePacket, WellFormed) {
    rng r{1};
    for (std::size_t len = 0; len < 80; ++len) {
        const auto f = frame_packet(r.bytes(len), 16, r);
        EXPECT_EQ(f.size() % 16, 0u);
        const std::uint32_t packet_length = aes::detail::load_be(f.data());
        EXPECT_EQ(packet_length + 4, f.size());
        EXPECT_GE(f[4], 4);
        EXPECT_EQ(1 + len + f[4], packet_length);
    }
}

TEST(ValidateProbe, TrueKeysAccepted) {
    for (const char *c : {"aes128-ctr", "aes192-ctr", "aes256-ctr", "aes128-cbc", "aes192-cbc", "aes256-cbc"}) {
        for (std::uint64_t s = 0; s < 20; ++s) {
            const auto b = make_packet(c, s, 5 + s * 7);
            const auto res = validate_probe(b.packet, b.iv, b.key);
            EXPECT_TRUE(res.valid) << c << " seed " << s;
            EXPECT_EQ(res.decrypted_length + 4, b.packet.ciphertext.size());
        }
    }
}

TEST(ValidateProbe, GeneratorPacketsValidate) {
    // 100 synthetic heaps: the generator's own IV/key always pass
    for (std::uint64_t s = 0; s < 100; ++s) {
        const char *c = (s % 4 == 3) ? "aes256-cbc" : (s % 2 ? "aes192-ctr" : "aes128-ctr");
        const auto rec = random_recipe(s, 8192, lookup_cipher(c));
        const auto syn = generate_synthetic(rec);
        ASSERT_TRUE(syn.packet);
        const auto *a = syn.entry.find(key_role::A);
        const auto *k = syn.entry.find(key_role::C);
        const auto res = validate_probe(*syn.packet, a->value, k->value);
        EXPECT_TRUE(res.valid);
        EXPECT_EQ(res.decrypted_length, syn.packet->ciphertext.size() - 4);
        ASSERT_TRUE(syn.server_packet);
        EXPECT_TRUE(validate_probe(*syn.server_packet, syn.entry.find(key_role::B)->value,
                                   syn.entry.find(key_role::D)->value)
                        .valid);
    }
}

TEST(ValidateProbe, FlippedKeyBitsRejected) {
    const auto b = make_packet("aes192-ctr", 99);
    rng r{123};
    std::size_t rejected = 0;
    constexpr std::size_t trials = 10000;
    for (std::size_t i = 0; i < trials; ++i) {
        auto key = b.key;
        key[r.below(key.size())] ^= static_cast<std::uint8_t>(1u << r.below(8));
        if (!validate_probe(b.packet, b.iv, key).valid) { ++rejected; }
    }
    EXPECT_GE(static_cast<double>(rejected) / trials, 0.999);
}

TEST(ValidateProbe, ShortCiphertextIsInvalidPacket) {
    validation_packet p{byte_vector(8, 0), "aes128-ctr"};
    try {
        validate_probe(p, byte_vector(16), byte_vector(16));
        FAIL();
    } catch (const error &e) {
        EXPECT_EQ(e.code(), errc::invalid_packet);
    }
    validation_packet q{byte_vector(40, 0), "aes128-ctr"};  // not block aligned
    EXPECT_THROW(validate_probe(q, byte_vector(16), byte_vector(16)), error);
}

TEST(ValidateProbe, UnsupportedCipher) {
    validation_packet p{byte_vector(64, 0), "chacha20-poly1305"};
    try {
        validate_probe(p, byte_vector{}, byte_vector(64));
        FAIL();
    } catch (const error &e) {
        EXPECT_EQ(e.code(), errc::unsupported_cipher);
    }
    validation_packet g{byte_vector(64, 0), "aes128-gcm"};
    EXPECT_THROW(validate_probe(g, byte_vector(12), byte_vector(16)), error);
}

TEST(ValidateProbe, WrongLengthsRejectedAsArgumentError) {
    const auto b = make_packet("aes128-ctr", 3);
    EXPECT_THROW(validate_probe(b.packet, byte_vector(12), b.key), error);
    EXPECT_THROW(validate_probe(b.packet, b.iv, byte_vector(24)), error);
}

TEST(CheckFirstBlock, Rules) {
    auto plain = [](std::uint32_t len, std::uint8_t pad) {
        std::array<std::uint8_t, 8> p{};
        aes::detail::store_be(p.data(), len);
        p[4] = pad;
        return p;
    };
    EXPECT_TRUE(check_first_block(plain(28, 6).data(), 32, 16, true).valid);
    EXPECT_FALSE(check_first_block(plain(28, 3).data(), 32, 16, true).valid);   // padding < 4
    EXPECT_FALSE(check_first_block(plain(28, 28).data(), 32, 16, true).valid);  // padding >= length
    EXPECT_FALSE(check_first_block(plain(44, 6).data(), 32, 16, true).valid);   // length mismatch
    EXPECT_FALSE(check_first_block(plain(40000, 6).data(), 40004, 16, true).valid);  // above bound
    EXPECT_TRUE(check_first_block(plain(35000 - 4, 8).data(), 35000, 8, true).valid);
    // plausibility only: any block-aligned length up to the bound
    EXPECT_TRUE(check_first_block(plain(60, 6).data(), 32, 16, false).valid);
    EXPECT_FALSE(check_first_block(plain(61, 6).data(), 32, 16, false).valid);
}

TEST(ValidateProbe, ReadsOnlyTheFirstBlock) {
    // changing anything past the first block leaves the verdict unchanged
    const auto b = make_packet("aes128-cbc", 8, 60);
    rng r{8};
    auto tampered = b.packet;
    for (std::size_t i = 16; i < tampered.ciphertext.size(); ++i) { tampered.ciphertext[i] = static_cast<std::uint8_t>(r.next()); }
    EXPECT_TRUE(validate_probe(tampered, b.iv, b.key).valid);
}

TEST(PacketProber, MatchesValidateProbe) {
    rng r{77};
    for (const char *c : {"aes256-ctr", "aes128-cbc"}) {
        const auto b = make_packet(c, 5);
        packet_prober prober{b.packet};
        for (int i = 0; i < 200; ++i) {
            const bool truth = i % 10 == 0;
            const auto iv = truth ? b.iv : r.bytes(16);
            const auto key = truth ? b.key : r.bytes(b.key.size());
            const auto expect = validate_probe(b.packet, iv, key);
            probe_result got;
            if (prober.is_ctr()) {
                got = prober.probe_ctr(aes::encrypt_key{key}, iv.data());
            } else {
                got = prober.probe_cbc(aes::decrypt_key{key}, iv.data());
            }
            EXPECT_EQ(got.valid, expect.valid);
            EXPECT_EQ(got.decrypted_length, expect.decrypted_length);
            EXPECT_EQ(got.padding_length, expect.padding_length);
            if (truth) { EXPECT_TRUE(got.valid); }
        }
    }
}

TEST(RawCiphertext, LoadAndLengthChecks) {
    const auto dir = temp_dir();
    const byte_vector sixty_four(64, 0x5a);
    write_file(dir / "ok.bin", sixty_four);
    const auto p = load_raw_ciphertext(dir / "ok.bin", "aes128-ctr");
    EXPECT_EQ(p.ciphertext.size(), 64u);
    EXPECT_EQ(p.sequence_number, 0u);
    EXPECT_EQ(p.cipher_name, "aes128-ctr");

    write_file(dir / "ten.bin", byte_vector(10, 1));
    write_file(dir / "empty.bin", byte_vector{});
    for (const char *name : {"ten.bin", "empty.bin"}) {
        try {
            load_raw_ciphertext(dir / name, "aes128-ctr");
            FAIL() << name;
        } catch (const error &e) {
            EXPECT_EQ(e.code(), errc::file_too_short);
        }
    }
    fs::remove_all(dir);
}

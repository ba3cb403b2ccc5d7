// validate.hpp
//
// Candidate (IV, key) validation against one captured SSH binary packet.
// A probe decrypts only the first cipher block and checks that the
// recovered packet_length / padding_length fields describe a well-formed
// RFC 4253 packet of exactly the captured size.

#ifndef KEYHUNT_VALIDATE_HPP
#define KEYHUNT_VALIDATE_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "aes.hpp"
#include "core.hpp"

namespace keyhunt {

enum class direction { client_to_server, server_to_client };

inline const char *direction_name(direction d) {
    return d == direction::client_to_server ? "client-to-server" : "server-to-client";
}

/// upper bound on packet_length accepted by the well-formedness check
inline constexpr std::uint32_t max_packet_length = 35000;

struct validation_packet {
    byte_vector ciphertext;  // starts at the encrypted packet_length field
    std::string cipher_name;
    direction dir = direction::client_to_server;
    std::uint32_t sequence_number = 0;
    bool length_known = true;  // false: only plausibility checks are possible
};

struct probe_result {
    bool valid = false;
    std::uint32_t decrypted_length = 0;
    std::uint8_t padding_length = 0;
};

/// applies the binary packet checks to a decrypted first block
inline probe_result check_first_block(const std::uint8_t *plain, std::size_t ciphertext_len,
                                      std::size_t block_len, bool length_known) {
    probe_result r;
    r.decrypted_length = aes::detail::load_be(plain);
    r.padding_length = plain[4];
    const std::uint64_t len = r.decrypted_length;
    bool ok = r.padding_length >= 4 && r.padding_length < len && len <= max_packet_length;
    if (length_known) {
        ok = ok && len + 4 == ciphertext_len;
    } else {
        ok = ok && (len + 4) % block_len == 0;
    }
    r.valid = ok;
    return r;
}

/// precomputed per-packet state for the brute-force inner loop
///
class packet_prober {
public:
    explicit packet_prober(const validation_packet &packet)
        : spec_{lookup_cipher(packet.cipher_name)}, length_{packet.ciphertext.size()},
          length_known_{packet.length_known} {
        if (!spec_.validatable) {
            throw error{errc::unsupported_cipher, spec_.name + " cannot be validated by decryption"};
        }
        if (packet.ciphertext.size() < 16 || packet.ciphertext.size() % spec_.block_len != 0) {
            throw error{errc::invalid_packet, "ciphertext of " + std::to_string(packet.ciphertext.size()) +
                                                  " bytes is not a whole number of " +
                                                  std::to_string(spec_.block_len) + "-byte blocks"};
        }
        std::copy_n(packet.ciphertext.begin(), 16, first_.begin());
    }

    const cipher_spec &spec() const noexcept { return spec_; }
    bool is_ctr() const noexcept { return spec_.mode == cipher_mode::ctr; }

    /// CTR probe: keystream block is E_k(iv)
    probe_result probe_ctr(const aes::encrypt_key &key, const std::uint8_t *iv) const {
        std::uint8_t ks[16];
        key.encrypt(iv, ks);
        return check_keystream(ks);
    }

    /// CBC probe: first plaintext block is D_k(c0) xor iv
    probe_result probe_cbc(const aes::decrypt_key &key, const std::uint8_t *iv) const {
        std::uint8_t d[16];
        key.decrypt(first_.data(), d);
        return check_cbc(d, iv);
    }

    /// CTR check from a precomputed keystream block E_k(iv)
    probe_result check_keystream(const std::uint8_t *ks) const {
        std::uint8_t p[8];
        for (std::size_t i = 0; i < 8; ++i) { p[i] = ks[i] ^ first_[i]; }
        return check_first_block(p, length_, spec_.block_len, length_known_);
    }

    /// CBC check from a precomputed D_k(c0); the IV only enters the final xor
    probe_result check_cbc(const std::uint8_t *decrypted_first, const std::uint8_t *iv) const {
        std::uint8_t p[8];
        for (std::size_t i = 0; i < 8; ++i) { p[i] = decrypted_first[i] ^ iv[i]; }
        return check_first_block(p, length_, spec_.block_len, length_known_);
    }

    const aes::block &first_block() const noexcept { return first_; }

private:
    const cipher_spec &spec_;
    std::size_t length_;
    bool length_known_;
    aes::block first_{};
};

inline probe_result validate_probe(const validation_packet &packet, byte_span iv, byte_span key) {
    packet_prober prober{packet};
    const auto &spec = prober.spec();
    if (iv.size() != spec.iv_len || key.size() != spec.key_len) {
        throw error{errc::invalid_argument, "IV/key lengths do not match " + spec.name};
    }
    if (prober.is_ctr()) {
        return prober.probe_ctr(aes::encrypt_key{key}, iv.data());
    }
    return prober.probe_cbc(aes::decrypt_key{key}, iv.data());
}

/// frames a payload as an unencrypted binary packet with random padding
inline byte_vector frame_packet(byte_span payload, std::size_t block_len, rng &r) {
    const std::size_t align = std::max<std::size_t>(block_len, 8);
    std::size_t padding = align - (5 + payload.size()) % align;
    if (padding < 4) { padding += align; }
    const std::uint32_t packet_length = static_cast<std::uint32_t>(1 + payload.size() + padding);
    byte_vector out(4);
    aes::detail::store_be(out.data(), packet_length);
    out.push_back(static_cast<std::uint8_t>(padding));
    out.insert(out.end(), payload.begin(), payload.end());
    const byte_vector pad = r.bytes(padding);
    out.insert(out.end(), pad.begin(), pad.end());
    return out;
}

/// encrypts a framed packet under a CTR or CBC cipher
inline byte_vector encrypt_packet(const cipher_spec &spec, byte_span iv, byte_span key, byte_span framed) {
    switch (spec.mode) {
    case cipher_mode::ctr: return aes::ctr_xcrypt(key, iv, framed);
    case cipher_mode::cbc: return aes::cbc_encrypt(key, iv, framed);
    default: throw error{errc::unsupported_cipher, spec.name + " packets cannot be generated"};
    }
}

inline byte_vector read_file(const std::filesystem::path &path) {
    std::ifstream in{path, std::ios::binary};
    if (!in) { throw error{errc::io, "cannot open " + path.string()}; }
    return byte_vector{std::istreambuf_iterator<char>{in}, std::istreambuf_iterator<char>{}};
}

inline void write_file(const std::filesystem::path &path, byte_span data) {
    std::ofstream out{path, std::ios::binary};
    if (!out) { throw error{errc::io, "cannot write " + path.string()}; }
    out.write(reinterpret_cast<const char *>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) { throw error{errc::io, "short write to " + path.string()}; }
}

/// whole file is one packet, sequence number 0
inline validation_packet load_raw_ciphertext(const std::filesystem::path &path, const std::string &cipher_name,
                                             direction dir = direction::client_to_server) {
    const auto &spec = lookup_cipher(cipher_name);
    byte_vector data = read_file(path);
    if (data.size() < std::max<std::size_t>(spec.block_len, 16)) {
        throw error{errc::file_too_short, path.string() + " holds " + std::to_string(data.size()) + " bytes"};
    }
    return validation_packet{std::move(data), spec.name, dir, 0, true};
}

}  // namespace keyhunt

#endif  // KEYHUNT_VALIDATE_HPP

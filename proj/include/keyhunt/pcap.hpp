// pcap.hpp
//
// Classic libpcap capture files (both byte orders, Ethernet + IPv4 + TCP):
// a reader that reassembles one SSH connection and returns the first
// encrypted packet after NEWKEYS, and a small writer used by the synthetic
// dataset generator.

#ifndef KEYHUNT_PCAP_HPP
#define KEYHUNT_PCAP_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "validate.hpp"

namespace keyhunt::pcap {

inline constexpr std::uint32_t magic_usec = 0xa1b2c3d4;
inline constexpr std::uint32_t magic_nsec = 0xa1b23c4d;
inline constexpr std::uint32_t linktype_ethernet = 1;
inline constexpr std::uint8_t ssh_msg_newkeys = 21;

struct tcp_segment {
    std::size_t frame_index;
    std::uint32_t src_ip, dst_ip;
    std::uint16_t src_port, dst_port;
    std::uint32_t seq;
    bool syn;
    byte_vector payload;
};

namespace detail {

class reader {
public:
    reader(byte_span data, bool swapped) : data_{data}, swapped_{swapped} {}

    bool has(std::size_t pos, std::size_t n) const { return pos + n <= data_.size(); }

    std::uint32_t u32(std::size_t pos) const {
        std::uint32_t v = std::uint32_t{data_[pos]} | (std::uint32_t{data_[pos + 1]} << 8) |
                          (std::uint32_t{data_[pos + 2]} << 16) | (std::uint32_t{data_[pos + 3]} << 24);
        if (swapped_) { v = __builtin_bswap32(v); }
        return v;
    }

    std::uint16_t u16(std::size_t pos) const {
        std::uint16_t v = static_cast<std::uint16_t>(data_[pos] | (data_[pos + 1] << 8));
        if (swapped_) { v = __builtin_bswap16(v); }
        return v;
    }

private:
    byte_span data_;
    bool swapped_;
};

inline std::uint16_t be16(const std::uint8_t *p) { return static_cast<std::uint16_t>((p[0] << 8) | p[1]); }
inline std::uint32_t be32(const std::uint8_t *p) { return aes::detail::load_be(p); }

}  // namespace detail

/// parses every TCP/IPv4 frame of a classic pcap image
inline std::vector<tcp_segment> parse_tcp_segments(byte_span file) {
    if (file.size() < 24) { throw error{errc::truncated_capture, "pcap global header is incomplete"}; }
    const std::uint32_t raw_magic = std::uint32_t{file[0]} | (std::uint32_t{file[1]} << 8) |
                                    (std::uint32_t{file[2]} << 16) | (std::uint32_t{file[3]} << 24);
    bool swapped;
    if (raw_magic == magic_usec || raw_magic == magic_nsec) {
        swapped = false;
    } else if (__builtin_bswap32(raw_magic) == magic_usec || __builtin_bswap32(raw_magic) == magic_nsec) {
        swapped = true;
    } else {
        throw error{errc::invalid_argument, "not a classic pcap file"};
    }
    detail::reader rd{file, swapped};
    if (rd.u32(20) != linktype_ethernet) {
        throw error{errc::unsupported_link_type, "link type " + std::to_string(rd.u32(20))};
    }

    std::vector<tcp_segment> out;
    std::size_t pos = 24;
    for (std::size_t frame = 0; pos < file.size(); ++frame) {
        if (!rd.has(pos, 16)) { throw error{errc::truncated_capture, "record header cut short"}; }
        const std::uint32_t incl = rd.u32(pos + 8);
        const std::uint32_t orig = rd.u32(pos + 12);
        pos += 16;
        if (!rd.has(pos, incl)) { throw error{errc::truncated_capture, "record body cut short"}; }
        const std::uint8_t *p = file.data() + pos;
        const std::size_t n = incl;
        pos += incl;

        if (n < 14 || detail::be16(p + 12) != 0x0800) { continue; }
        const std::uint8_t *ip = p + 14;
        const std::size_t ip_avail = n - 14;
        if (ip_avail < 20 || (ip[0] >> 4) != 4) { continue; }
        const std::size_t ihl = std::size_t{ip[0] & 0x0fu} * 4;
        const std::size_t ip_total = detail::be16(ip + 2);
        if (ip[9] != 6) { continue; }
        if (incl < orig || ip_avail < ip_total || ip_total < ihl + 20) {
            throw error{errc::truncated_capture, "frame " + std::to_string(frame) + " was not captured whole"};
        }
        const std::uint8_t *tcp = ip + ihl;
        const std::size_t tcp_hdr = std::size_t{static_cast<std::uint8_t>(tcp[12] >> 4)} * 4;
        if (ihl + tcp_hdr > ip_total) {
            throw error{errc::truncated_capture, "bad TCP header length in frame " + std::to_string(frame)};
        }
        tcp_segment seg;
        seg.frame_index = frame;
        seg.src_ip = detail::be32(ip + 12);
        seg.dst_ip = detail::be32(ip + 16);
        seg.src_port = detail::be16(tcp);
        seg.dst_port = detail::be16(tcp + 2);
        seg.seq = detail::be32(tcp + 4);
        seg.syn = (tcp[13] & 0x02) != 0;
        seg.payload.assign(tcp + tcp_hdr, ip + ip_total);
        out.push_back(std::move(seg));
    }
    return out;
}

/// one reassembled direction of a TCP connection; every stream byte
/// remembers the capture frame that first delivered it
struct tcp_stream {
    byte_vector bytes;
    std::vector<std::size_t> frame_of_byte;
};

inline tcp_stream reassemble(const std::vector<tcp_segment> &segments) {
    tcp_stream s;
    if (segments.empty()) { return s; }
    std::optional<std::uint32_t> isn;
    for (const auto &seg : segments) {
        if (seg.syn) { isn = seg.seq + 1; break; }
    }
    if (!isn) {
        // no handshake captured: the earliest payload byte anchors the stream
        std::uint32_t first = segments.front().seq;
        for (const auto &seg : segments) {
            if (!seg.payload.empty() && static_cast<std::int32_t>(seg.seq - first) < 0) { first = seg.seq; }
        }
        isn = first;
    }
    std::vector<const tcp_segment *> ordered;
    for (const auto &seg : segments) {
        if (!seg.payload.empty()) { ordered.push_back(&seg); }
    }
    std::stable_sort(ordered.begin(), ordered.end(), [&](const tcp_segment *a, const tcp_segment *b) {
        return static_cast<std::uint32_t>(a->seq - *isn) < static_cast<std::uint32_t>(b->seq - *isn);
    });
    for (const tcp_segment *seg : ordered) {
        const std::size_t rel = static_cast<std::uint32_t>(seg->seq - *isn);
        if (rel > s.bytes.size()) { break; }  // hole: stop at the contiguous prefix
        const std::size_t skip = s.bytes.size() - rel;
        if (skip >= seg->payload.size()) { continue; }
        s.bytes.insert(s.bytes.end(), seg->payload.begin() + static_cast<std::ptrdiff_t>(skip), seg->payload.end());
        s.frame_of_byte.insert(s.frame_of_byte.end(), seg->payload.size() - skip, seg->frame_index);
    }
    return s;
}

/// locates the end of the cleartext NEWKEYS packet; returns the stream
/// offset of the first encrypted byte and the number of packets before it
inline std::optional<std::pair<std::size_t, std::uint32_t>> find_newkeys_end(const byte_vector &stream) {
    std::size_t pos = 0;
    // identification string, possibly preceded by other lines
    for (;;) {
        auto nl = std::find(stream.begin() + static_cast<std::ptrdiff_t>(pos), stream.end(), '\n');
        if (nl == stream.end()) { return std::nullopt; }
        const bool is_ident = stream.size() - pos >= 4 && std::equal(stream.begin() + static_cast<std::ptrdiff_t>(pos),
                                                                     stream.begin() + static_cast<std::ptrdiff_t>(pos) + 4,
                                                                     "SSH-");
        pos = static_cast<std::size_t>(nl - stream.begin()) + 1;
        if (is_ident) { break; }
    }
    std::uint32_t count = 0;
    while (pos + 6 <= stream.size()) {
        const std::uint32_t len = detail::be32(stream.data() + pos);
        if (len < 2 || len > max_packet_length) { return std::nullopt; }
        if (pos + 4 + len > stream.size()) { return std::nullopt; }
        const std::uint8_t type = stream[pos + 5];
        pos += 4 + len;
        ++count;
        if (type == ssh_msg_newkeys) { return std::make_pair(pos, count); }
    }
    return std::nullopt;
}

/// returns the first encrypted packet sent in `dir` after NEWKEYS
inline validation_packet extract_first_encrypted_packet(const std::filesystem::path &path,
                                                        const std::string &cipher_name,
                                                        direction dir = direction::client_to_server,
                                                        std::uint16_t tcp_port = 22) {
    const auto &spec = lookup_cipher(cipher_name);
    const byte_vector file = read_file(path);
    const auto segments = parse_tcp_segments(file);

    std::vector<tcp_segment> wanted;
    std::map<std::size_t, bool> payload_frames;  // frame -> is `dir`
    for (const auto &seg : segments) {
        const bool c2s = seg.dst_port == tcp_port;
        const bool s2c = seg.src_port == tcp_port;
        if (!c2s && !s2c) { continue; }
        const bool mine = (dir == direction::client_to_server) ? c2s : s2c;
        if (!seg.payload.empty()) { payload_frames[seg.frame_index] = mine; }
        if (mine) { wanted.push_back(seg); }
    }
    const tcp_stream stream = reassemble(wanted);
    const auto newkeys = find_newkeys_end(stream.bytes);
    if (!newkeys) {
        throw error{errc::no_newkeys_found, "no NEWKEYS message in " + std::string{direction_name(dir)} +
                                                " stream of " + path.string()};
    }
    const auto [start, count] = *newkeys;
    if (start >= stream.bytes.size()) {
        throw error{errc::truncated_capture, "capture ends right after NEWKEYS"};
    }
    // the packet runs until the other side next sends data
    const std::size_t first_frame = stream.frame_of_byte[start];
    std::size_t last_frame = first_frame;
    for (auto it = payload_frames.upper_bound(first_frame); it != payload_frames.end(); ++it) {
        if (!it->second) { break; }
        last_frame = it->first;
    }
    std::size_t end = start;
    while (end < stream.bytes.size() && stream.frame_of_byte[end] <= last_frame) { ++end; }
    std::size_t len = end - start;
    len -= len % spec.block_len;
    if (len < 16) {
        throw error{errc::truncated_capture, "encrypted packet shorter than one block"};
    }
    validation_packet pkt;
    pkt.ciphertext.assign(stream.bytes.begin() + static_cast<std::ptrdiff_t>(start),
                          stream.bytes.begin() + static_cast<std::ptrdiff_t>(start + len));
    pkt.cipher_name = spec.name;
    pkt.dir = dir;
    pkt.sequence_number = count;
    pkt.length_known = true;
    return pkt;
}

/// builds a little-endian classic pcap of one TCP connection
///
class writer {
public:
    writer(std::uint16_t client_port, std::uint16_t server_port, std::uint32_t client_isn, std::uint32_t server_isn)
        : client_port_{client_port}, server_port_{server_port}, seq_{client_isn, server_isn} {
        put32(magic_usec);
        put16(2);
        put16(4);
        put32(0);
        put32(0);
        put32(65535);
        put32(linktype_ethernet);
    }

    void handshake() {
        frame(direction::client_to_server, 0x02, {});
        ++seq_[0];
        frame(direction::server_to_client, 0x12, {});
        ++seq_[1];
        frame(direction::client_to_server, 0x10, {});
    }

    void send(direction dir, byte_span payload) {
        frame(dir, 0x18, payload);
        seq_[index(dir)] += static_cast<std::uint32_t>(payload.size());
    }

    const byte_vector &bytes() const noexcept { return out_; }

private:
    static std::size_t index(direction d) { return d == direction::client_to_server ? 0 : 1; }

    void put16(std::uint16_t v) {
        out_.push_back(static_cast<std::uint8_t>(v));
        out_.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void put32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) { out_.push_back(static_cast<std::uint8_t>(v >> (8 * i))); }
    }

    void frame(direction dir, std::uint8_t flags, byte_span payload) {
        const bool c2s = dir == direction::client_to_server;
        const std::uint32_t src_ip = c2s ? 0x0a000001 : 0x0a000002;
        const std::uint32_t dst_ip = c2s ? 0x0a000002 : 0x0a000001;
        const std::uint16_t sport = c2s ? client_port_ : server_port_;
        const std::uint16_t dport = c2s ? server_port_ : client_port_;

        byte_vector f;
        const std::uint8_t eth[14] = {0x02, 0, 0, 0, 0, c2s ? std::uint8_t{2} : std::uint8_t{1},
                                      0x02, 0, 0, 0, 0, c2s ? std::uint8_t{1} : std::uint8_t{2}, 0x08, 0x00};
        f.insert(f.end(), eth, eth + 14);
        const std::uint16_t ip_total = static_cast<std::uint16_t>(20 + 20 + payload.size());
        byte_vector ip(20, 0);
        ip[0] = 0x45;
        ip[2] = static_cast<std::uint8_t>(ip_total >> 8);
        ip[3] = static_cast<std::uint8_t>(ip_total);
        ip[4] = static_cast<std::uint8_t>(ip_id_ >> 8);
        ip[5] = static_cast<std::uint8_t>(ip_id_);
        ++ip_id_;
        ip[6] = 0x40;  // don't fragment
        ip[8] = 64;
        ip[9] = 6;
        aes::detail::store_be(ip.data() + 12, src_ip);
        aes::detail::store_be(ip.data() + 16, dst_ip);
        std::uint32_t sum = 0;
        for (int i = 0; i < 20; i += 2) { sum += static_cast<std::uint32_t>((ip[i] << 8) | ip[i + 1]); }
        while (sum >> 16) { sum = (sum & 0xffff) + (sum >> 16); }
        const std::uint16_t csum = static_cast<std::uint16_t>(~sum);
        ip[10] = static_cast<std::uint8_t>(csum >> 8);
        ip[11] = static_cast<std::uint8_t>(csum);
        f.insert(f.end(), ip.begin(), ip.end());

        byte_vector tcp(20, 0);
        tcp[0] = static_cast<std::uint8_t>(sport >> 8);
        tcp[1] = static_cast<std::uint8_t>(sport);
        tcp[2] = static_cast<std::uint8_t>(dport >> 8);
        tcp[3] = static_cast<std::uint8_t>(dport);
        aes::detail::store_be(tcp.data() + 4, seq_[index(dir)]);
        const std::uint32_t ack = (flags & 0x10) ? seq_[1 - index(dir)] : 0;
        aes::detail::store_be(tcp.data() + 8, ack);
        tcp[12] = 0x50;
        tcp[13] = flags;
        tcp[14] = 0xfa;
        tcp[15] = 0xf0;
        f.insert(f.end(), tcp.begin(), tcp.end());
        f.insert(f.end(), payload.begin(), payload.end());

        put32(base_time_ + static_cast<std::uint32_t>(frames_ / 1000));
        put32(static_cast<std::uint32_t>((frames_ % 1000) * 1000));
        put32(static_cast<std::uint32_t>(f.size()));
        put32(static_cast<std::uint32_t>(f.size()));
        out_.insert(out_.end(), f.begin(), f.end());
        ++frames_;
    }

    std::uint16_t client_port_, server_port_;
    std::uint32_t seq_[2];
    std::uint16_t ip_id_ = 1;
    std::uint32_t base_time_ = 1644391327;
    std::size_t frames_ = 0;
    byte_vector out_;
};

}  // namespace keyhunt::pcap

#endif  // KEYHUNT_PCAP_HPP

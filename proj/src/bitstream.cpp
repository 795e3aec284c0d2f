#include "diffc/bitstream.hpp"

#include <zlib.h>

#include <cstring>

#include "diffc/error.hpp"

namespace diffc {

namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'F', 'C', '1'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t k = 0; k < sizeof(T); ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

template <class T>
T get_le(std::span<const std::uint8_t> in, std::size_t at) {
    T v = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k) v |= static_cast<T>(static_cast<T>(in[at + k]) << (8 * k));
    return v;
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
    return static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::uint64_t DiffcBitstream::payload_bits() const noexcept {
    std::uint64_t bits = 0;
    for (const auto& c : codes) bits += static_cast<std::uint64_t>(c.budget_bits);
    return bits;
}

bool DiffcBitstream::operator==(const DiffcBitstream& o) const {
    if (!(header == o.header) || codes.size() != o.codes.size()) return false;
    for (std::size_t k = 0; k < codes.size(); ++k)
        if (codes[k].index != o.codes[k].index || codes[k].budget_bits != o.codes[k].budget_bits) return false;
    return true;
}

void BitWriter::put(std::uint32_t value, int bits) {
    if (bits < 1 || bits > 32) throw SerializationError("field width must be 1..32 bits");
    if (bits < 32 && (value >> bits) != 0) throw SerializationError("value does not fit in its field");
    for (int k = bits - 1; k >= 0; --k) {
        if (bits_ % 8 == 0) bytes_.push_back(0);
        if ((value >> k) & 1u) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
        ++bits_;
    }
}

std::vector<std::uint8_t> BitWriter::finish() { return std::move(bytes_); }

std::uint32_t BitReader::get(int bits) {
    std::uint32_t v = 0;
    for (int k = 0; k < bits; ++k) {
        const std::uint64_t byte = pos_ / 8;
        if (byte >= bytes_.size()) throw FramingError("payload truncated", static_cast<std::size_t>(byte));
        v = (v << 1) | ((bytes_[byte] >> (7 - pos_ % 8)) & 1u);
        ++pos_;
    }
    return v;
}

std::vector<std::uint8_t> serialize_header(const BitstreamHeader& h) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    out.push_back(h.version);
    put_le(out, h.dimension);
    put_le(out, h.protocol_hash);
    out.push_back(h.mode);
    put_le(out, h.seed);
    put_le(out, h.t_final);
    put_le(out, crc_of(out));
    return out;
}

BitstreamHeader parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        if (bytes.size() < 4 && std::memcmp(bytes.data(), kMagic, bytes.size()) == 0)
            throw FramingError("header truncated", bytes.size());
        throw MagicError("stream does not start with DFC1");
    }
    if (bytes.size() < 5) throw FramingError("header truncated", bytes.size());
    if (bytes[4] != kBitstreamVersion)
        throw VersionError("stream version " + std::to_string(bytes[4]) + ", expected " +
                           std::to_string(kBitstreamVersion));
    if (bytes.size() < kHeaderBytes) throw FramingError("header truncated", bytes.size());
    const std::uint32_t stored = get_le<std::uint32_t>(bytes, kHeaderBytes - 4);
    if (crc_of(bytes.first(kHeaderBytes - 4)) != stored) throw ChecksumError("header checksum mismatch");
    BitstreamHeader h;
    h.version = bytes[4];
    h.dimension = get_le<std::uint32_t>(bytes, 5);
    h.protocol_hash = get_le<std::uint64_t>(bytes, 9);
    h.mode = bytes[17];
    h.seed = get_le<std::uint64_t>(bytes, 18);
    h.t_final = get_le<std::uint16_t>(bytes, 26);
    return h;
}

std::vector<std::uint8_t> serialize(const DiffcBitstream& s) {
    if (s.header.version != kBitstreamVersion) throw SerializationError("unsupported version");
    std::vector<std::uint8_t> out = serialize_header(s.header);
    BitWriter w;
    for (const auto& c : s.codes) {
        if (c.budget_bits < 1 || c.budget_bits > kMaxBudgetBits) throw SerializationError("bad chunk budget");
        w.put(c.index, c.budget_bits);
    }
    const auto payload = w.finish();
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::vector<int> payload_layout(const DklProtocolTable& protocol) {
    std::vector<int> layout;
    for (const auto& st : protocol.steps)
        for (int c = 0; c < st.n_chunks; ++c) layout.push_back(st.budget_bits);
    return layout;
}

DiffcBitstream parse(std::span<const std::uint8_t> bytes, const DklProtocolTable& protocol) {
    DiffcBitstream s;
    s.header = parse_header(bytes);
    if (s.header.protocol_hash != protocol_hash(protocol)) throw ProtocolError("stream references an unknown protocol");
    if (s.header.t_final != protocol.t_final()) throw ProtocolError("stream t_final disagrees with the protocol");
    if (s.header.dimension != static_cast<std::uint32_t>(protocol.dimension))
        throw ProtocolError("stream dimension disagrees with the protocol");
    const std::vector<int> layout = payload_layout(protocol);
    std::uint64_t bits = 0;
    for (int b : layout) bits += static_cast<std::uint64_t>(b);
    const std::uint64_t need = kHeaderBytes + (bits + 7) / 8;
    if (bytes.size() < need) throw FramingError("payload truncated", bytes.size());
    if (bytes.size() > need) throw FormatError("trailing bytes after the payload");
    BitReader r(bytes.subspan(kHeaderBytes));
    s.codes.reserve(layout.size());
    for (int b : layout) s.codes.push_back({r.get(b), b});
    if (bits % 8 != 0 && r.get(static_cast<int>(8 - bits % 8)) != 0) throw FormatError("nonzero padding bits");
    return s;
}

}  // namespace diffc

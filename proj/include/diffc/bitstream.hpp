#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "diffc/rcc.hpp"
#include "diffc/schedule_opt.hpp"

namespace diffc {

inline constexpr std::uint8_t kBitstreamVersion = 1;
inline constexpr std::size_t kHeaderBytes = 32;

struct BitstreamHeader {
    std::uint8_t version = kBitstreamVersion;
    std::uint32_t dimension = 0;
    std::uint64_t protocol_hash = 0;
    std::uint8_t mode = 0;
    std::uint64_t seed = 0;
    std::uint16_t t_final = 0;

    bool operator==(const BitstreamHeader&) const = default;
};

/// Header plus chunk codes in step order (all chunks of step 0, then step 1, ...).
struct DiffcBitstream {
    BitstreamHeader header;
    std::vector<RccChunkCode> codes;

    std::uint64_t payload_bits() const noexcept;
    bool operator==(const DiffcBitstream& o) const;
};

/// MSB-first bit writer.
class BitWriter {
  public:
    void put(std::uint32_t value, int bits);
    std::uint64_t bit_count() const noexcept { return bits_; }
    /// Pads the last byte with zeros and returns the bytes.
    std::vector<std::uint8_t> finish();

  private:
    std::vector<std::uint8_t> bytes_;
    std::uint64_t bits_ = 0;
};

class BitReader {
  public:
    explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    /// Throws FramingError when the data runs out.
    std::uint32_t get(int bits);
    std::uint64_t position() const noexcept { return pos_; }

  private:
    std::span<const std::uint8_t> bytes_;
    std::uint64_t pos_ = 0;
};

std::vector<std::uint8_t> serialize_header(const BitstreamHeader& h);
/// Validates magic, version and checksum (in that order).
BitstreamHeader parse_header(std::span<const std::uint8_t> bytes);

/// Throws SerializationError if an index does not fit its budget.
std::vector<std::uint8_t> serialize(const DiffcBitstream& s);

/// Inverse of serialize. The payload layout comes from `protocol`, whose hash
/// must match the header (ProtocolError otherwise). Missing bytes raise
/// FramingError; trailing bytes or nonzero padding raise FormatError.
DiffcBitstream parse(std::span<const std::uint8_t> bytes, const DklProtocolTable& protocol);

/// Chunk budgets in payload order.
std::vector<int> payload_layout(const DklProtocolTable& protocol);

}  // namespace diffc

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace diffc {

/// Base of every error the codec reports. The category string is stable and
/// is used as the message prefix by the CLI.
class Error : public std::runtime_error {
  public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(category + ": " + what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

  private:
    std::string category_;
};

#define DIFFC_DEFINE_ERROR(Name, tag)                                   \
    class Name : public Error {                                        \
      public:                                                          \
        explicit Name(const std::string& what) : Error(tag, what) {}   \
    }

DIFFC_DEFINE_ERROR(ParameterError, "parameter error");
DIFFC_DEFINE_ERROR(ShapeError, "shape error");
DIFFC_DEFINE_ERROR(OrderingError, "ordering error");
DIFFC_DEFINE_ERROR(DegeneracyError, "degeneracy error");
DIFFC_DEFINE_ERROR(UnsupportedPairError, "unsupported pair error");
DIFFC_DEFINE_ERROR(MalformedCodeError, "malformed code error");
DIFFC_DEFINE_ERROR(InfeasibleError, "infeasibility error");
DIFFC_DEFINE_ERROR(ConfigError, "config error");
DIFFC_DEFINE_ERROR(ProtocolError, "protocol error");
DIFFC_DEFINE_ERROR(SerializationError, "serialization error");
DIFFC_DEFINE_ERROR(MagicError, "bad magic");
DIFFC_DEFINE_ERROR(VersionError, "unsupported version");
DIFFC_DEFINE_ERROR(ChecksumError, "checksum error");
DIFFC_DEFINE_ERROR(FormatError, "format error");
DIFFC_DEFINE_ERROR(IoError, "io error");

#undef DIFFC_DEFINE_ERROR

/// Stream ended before the declared payload did.
class FramingError : public Error {
  public:
    FramingError(const std::string& what, std::size_t offset)
        : Error("framing error", what + " (at byte " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

  private:
    std::size_t offset_;
};

}  // namespace diffc

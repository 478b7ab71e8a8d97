#pragma once

#include <stdexcept>
#include <string>

namespace ssfam {

/// Base of every error raised by the library. `kind()` names the failure
/// class so command-line front ends can report it without RTTI games.
class Error : public std::runtime_error {
public:
    Error(const char* kind, const std::string& what)
        : std::runtime_error(std::string(kind) + ": " + what), kind_(kind) {}

    const char* kind() const noexcept { return kind_; }

private:
    const char* kind_;
};

#define SSFAM_DEFINE_ERROR(Name)                                              \
    class Name : public Error {                                               \
    public:                                                                   \
        explicit Name(const std::string& what) : Error(#Name, what) {}        \
    };

SSFAM_DEFINE_ERROR(MissingModality)
SSFAM_DEFINE_ERROR(AlignmentError)
SSFAM_DEFINE_ERROR(EncodingError)
SSFAM_DEFINE_ERROR(ConfigError)
SSFAM_DEFINE_ERROR(PreconditionError)
SSFAM_DEFINE_ERROR(IoError)
SSFAM_DEFINE_ERROR(ShapeError)
SSFAM_DEFINE_ERROR(EmptyScribbleError)
SSFAM_DEFINE_ERROR(RangeError)
SSFAM_DEFINE_ERROR(NumericsError)
SSFAM_DEFINE_ERROR(PartitionError)
SSFAM_DEFINE_ERROR(ManifestError)

#undef SSFAM_DEFINE_ERROR

}  // namespace ssfam

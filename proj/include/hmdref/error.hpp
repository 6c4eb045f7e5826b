#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hmdref {

/// Library-wide error codes. Mirrored over the wire by the reference service.
enum class ErrorCode {
    EmptyCloud,
    ParseError,
    IoError,
    DegenerateMesh,
    TooFewPoints,
    RadiusTooSmall,
    NoCorrespondences,
    AllStartsFailed,
    NoCongruentBase,
    SegmentationFailed,
    NoCandidateBox,
    BadFrame,
    InvalidArgument,
};

std::string_view to_string(ErrorCode code);
ErrorCode error_code_from_string(std::string_view name);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace hmdref

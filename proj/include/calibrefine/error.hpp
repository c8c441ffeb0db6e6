#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace calibrefine {

enum class ErrorCode {
    DegenerateProjection,
    SingularResult,
    EmptySet,
    InsufficientPairs,
    DegenerateConfiguration,
    ConsensusFailure,
    OutOfOrderFrame,
    InvalidConfig,
    InvalidInput,
    Io,
};

inline auto to_string(ErrorCode code) -> std::string_view {
    switch (code) {
        case ErrorCode::DegenerateProjection: return "DegenerateProjection";
        case ErrorCode::SingularResult: return "SingularResult";
        case ErrorCode::EmptySet: return "EmptySet";
        case ErrorCode::InsufficientPairs: return "InsufficientPairs";
        case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
        case ErrorCode::ConsensusFailure: return "ConsensusFailure";
        case ErrorCode::OutOfOrderFrame: return "OutOfOrderFrame";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::InvalidInput: return "InvalidInput";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

class CalibError : public std::runtime_error {
  public:
    CalibError(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] auto code() const noexcept -> ErrorCode { return code_; }

  private:
    ErrorCode code_;
};

}  // namespace calibrefine

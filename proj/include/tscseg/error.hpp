#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tscseg {

enum class ErrorCode {
    InvalidArgument,
    EmptyDataset,
    NonFinite,
    DimensionMismatch,
    TooFewPoints,
    DegenerateComponent,
    SingleCluster,
    AllDegenerate,
    TooShort,
    TooFewCandidates,
    AllPruned,
    NoSurvivors,
    MissingDirective,
    NoSamples,
    LengthMismatch,
    FileNotFound,
    Io,
    Format,
    VersionMismatch,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

    ErrorCode code() const noexcept { return code_; }
    /// Message without the code prefix.
    const std::string& detail() const noexcept { return detail_; }

    /// Same code, message prefixed with `context: `.
    Error with_context(const std::string& context) const { return Error(code_, context + ": " + detail_); }

private:
    ErrorCode code_;
    std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace tscseg

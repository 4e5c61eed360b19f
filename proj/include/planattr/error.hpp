#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace planattr {

enum class ErrorKind {
    UnknownBlock,
    IllegalAction,
    GenerationExhausted,
    EmptyPlan,
    InvalidInstance,
    TemplateError,
    UnknownSegment,
    SpanOutOfBounds,
    SpanCrossesSegments,
    TransportError,
    BackendRefused,
    ProtocolViolation,
    MaskMismatch,
    NotFineGrained,
    UnknownInsight,
    InsufficientData,
    SolverFailure,
    IoError,
    ConfigError,
};

std::string_view to_string(ErrorKind kind);

// All domain failures surface as planattr::Error; kind() is what the CLI
// reports in its JSON diagnostic.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace planattr

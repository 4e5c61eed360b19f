#include "planattr/error.hpp"

namespace planattr {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::UnknownBlock: return "UnknownBlock";
        case ErrorKind::IllegalAction: return "IllegalAction";
        case ErrorKind::GenerationExhausted: return "GenerationExhausted";
        case ErrorKind::EmptyPlan: return "EmptyPlan";
        case ErrorKind::InvalidInstance: return "InvalidInstance";
        case ErrorKind::TemplateError: return "TemplateError";
        case ErrorKind::UnknownSegment: return "UnknownSegment";
        case ErrorKind::SpanOutOfBounds: return "SpanOutOfBounds";
        case ErrorKind::SpanCrossesSegments: return "SpanCrossesSegments";
        case ErrorKind::TransportError: return "TransportError";
        case ErrorKind::BackendRefused: return "BackendRefused";
        case ErrorKind::ProtocolViolation: return "ProtocolViolation";
        case ErrorKind::MaskMismatch: return "MaskMismatch";
        case ErrorKind::NotFineGrained: return "NotFineGrained";
        case ErrorKind::UnknownInsight: return "UnknownInsight";
        case ErrorKind::InsufficientData: return "InsufficientData";
        case ErrorKind::SolverFailure: return "SolverFailure";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

}  // namespace planattr

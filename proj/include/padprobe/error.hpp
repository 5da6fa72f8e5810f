#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace padprobe {

enum class ErrorCode {
    UnknownCondition,
    NoPadsAvailable,
    NoEos,
    InvalidPrompt,
    ShapeMismatch,
    EncoderMismatch,
    LayerMismatch,
    LengthMismatch,
    DimensionMismatch,
    BackendError,
    UnsupportedPlan,
    UnsupportedCapability,
    UnsupportedCapture,
    NotNormalized,
    TooFewSamples,
    EmptyInput,
    LabelMismatch,
    GridMismatch,
    ParseError,
    DuplicateId,
    UnknownCategory,
    Unreviewed,
    ServiceUnavailable,
    MalformedResponse,
    ExtractorError,
    IoError,
    IntegrityError,
    ConfigError,
    InvalidArgument,
};

// Stable, machine-greppable identifiers. Scripts match on these; never rename.
constexpr std::string_view code_name(ErrorCode c) noexcept {
    switch (c) {
        case ErrorCode::UnknownCondition: return "E_UNKNOWN_CONDITION";
        case ErrorCode::NoPadsAvailable: return "E_NO_PADS_AVAILABLE";
        case ErrorCode::NoEos: return "E_NO_EOS";
        case ErrorCode::InvalidPrompt: return "E_INVALID_PROMPT";
        case ErrorCode::ShapeMismatch: return "E_SHAPE_MISMATCH";
        case ErrorCode::EncoderMismatch: return "E_ENCODER_MISMATCH";
        case ErrorCode::LayerMismatch: return "E_LAYER_MISMATCH";
        case ErrorCode::LengthMismatch: return "E_LENGTH_MISMATCH";
        case ErrorCode::DimensionMismatch: return "E_DIMENSION_MISMATCH";
        case ErrorCode::BackendError: return "E_BACKEND";
        case ErrorCode::UnsupportedPlan: return "E_UNSUPPORTED_PLAN";
        case ErrorCode::UnsupportedCapability: return "E_UNSUPPORTED_CAPABILITY";
        case ErrorCode::UnsupportedCapture: return "E_UNSUPPORTED_CAPTURE";
        case ErrorCode::NotNormalized: return "E_NOT_NORMALIZED";
        case ErrorCode::TooFewSamples: return "E_TOO_FEW_SAMPLES";
        case ErrorCode::EmptyInput: return "E_EMPTY_INPUT";
        case ErrorCode::LabelMismatch: return "E_LABEL_MISMATCH";
        case ErrorCode::GridMismatch: return "E_GRID_MISMATCH";
        case ErrorCode::ParseError: return "E_PARSE";
        case ErrorCode::DuplicateId: return "E_DUPLICATE_ID";
        case ErrorCode::UnknownCategory: return "E_UNKNOWN_CATEGORY";
        case ErrorCode::Unreviewed: return "E_UNREVIEWED";
        case ErrorCode::ServiceUnavailable: return "E_SERVICE_UNAVAILABLE";
        case ErrorCode::MalformedResponse: return "E_MALFORMED_RESPONSE";
        case ErrorCode::ExtractorError: return "E_EXTRACTOR";
        case ErrorCode::IoError: return "E_IO";
        case ErrorCode::IntegrityError: return "E_INTEGRITY";
        case ErrorCode::ConfigError: return "E_CONFIG";
        case ErrorCode::InvalidArgument: return "E_INVALID_ARGUMENT";
    }
    return "E_UNKNOWN";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    std::string_view code_name() const noexcept { return padprobe::code_name(code_); }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace padprobe

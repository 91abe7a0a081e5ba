#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tiewarp
{
    enum class ErrorCode
    {
        MalformedSignature,
        ZeroOffsetForbidden,
        SequenceCapExceeded,
        CausalityViolation,
        LivelockDetected,
        UnmatchedAntiMessage,
        InsufficientSamples,
        ConfigError,
    };

    inline constexpr std::string_view to_string(ErrorCode code) noexcept
    {
        switch (code)
        {
        case ErrorCode::MalformedSignature:
            return "MalformedSignature";
        case ErrorCode::ZeroOffsetForbidden:
            return "ZeroOffsetForbidden";
        case ErrorCode::SequenceCapExceeded:
            return "SequenceCapExceeded";
        case ErrorCode::CausalityViolation:
            return "CausalityViolation";
        case ErrorCode::LivelockDetected:
            return "LivelockDetected";
        case ErrorCode::UnmatchedAntiMessage:
            return "UnmatchedAntiMessage";
        case ErrorCode::InsufficientSamples:
            return "InsufficientSamples";
        case ErrorCode::ConfigError:
            return "ConfigError";
        }
        return "Unknown";
    }

    // Every failure the engine reports carries one of the codes above so the
    // CLI can map it to an exit status without string matching.
    class SimError : public std::runtime_error
    {
    public:
        SimError(ErrorCode code, const std::string &what)
            : std::runtime_error(std::string(to_string(code)) + ": " + what), m_code(code)
        {
        }

        ErrorCode code() const noexcept { return m_code; }

    private:
        ErrorCode m_code;
    };
}

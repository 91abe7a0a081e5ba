#pragma once

#include "error.hpp"

#include <boost/container/small_vector.hpp>

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>

namespace tiewarp
{
    using LpId = std::uint64_t;
    using PeId = std::uint32_t;
    using VirtualTime = double;

    // One uniform tie-break draw. The full 64-bit range stands in for (0,1);
    // comparisons are order-isomorphic to comparing value / 2^64.
    struct TiebreakDraw
    {
        std::uint64_t value = 0;

        friend auto operator<=>(const TiebreakDraw &, const TiebreakDraw &) = default;
    };

    using TiebreakSequence = boost::container::small_vector<std::uint64_t, 3>;

    // Virtual timestamp extended with the tie-break values that make
    // simultaneous events comparable.
    struct TimeSignature
    {
        VirtualTime timestamp = 0.0;
        TiebreakSequence tiebreak;
        // High word of the 128-bit additive accumulator; zero outside additive mode.
        std::uint64_t additive_high = 0;

        friend bool operator==(const TimeSignature &, const TimeSignature &) = default;
    };

    enum class OrderingMode
    {
        none,
        biased_ruleset,
        unbiased_single,
        additive,
        lex_sequence,
    };

    inline constexpr std::string_view to_string(OrderingMode mode) noexcept
    {
        switch (mode)
        {
        case OrderingMode::none:
            return "none";
        case OrderingMode::biased_ruleset:
            return "biased";
        case OrderingMode::unbiased_single:
            return "unbiased-single";
        case OrderingMode::additive:
            return "additive";
        case OrderingMode::lex_sequence:
            return "lex";
        }
        return "unknown";
    }

    inline std::optional<OrderingMode> parse_ordering_mode(std::string_view text) noexcept
    {
        for (auto mode : {OrderingMode::none, OrderingMode::biased_ruleset, OrderingMode::unbiased_single,
                          OrderingMode::additive, OrderingMode::lex_sequence})
        {
            if (to_string(mode) == text)
            {
                return mode;
            }
        }
        return std::nullopt;
    }

    // Modes that encode at least one tie-break draw per event.
    inline constexpr bool uses_tiebreak(OrderingMode mode) noexcept
    {
        return mode == OrderingMode::unbiased_single || mode == OrderingMode::additive ||
               mode == OrderingMode::lex_sequence;
    }

    struct EventIdentity
    {
        PeId source_pe = 0;
        LpId source_lp = 0;
        std::uint64_t serial = 0;

        friend bool operator==(const EventIdentity &, const EventIdentity &) = default;
    };

    inline constexpr std::size_t default_sequence_cap = 64;

    struct SignaturePolicy
    {
        OrderingMode mode = OrderingMode::lex_sequence;
        std::size_t sequence_cap = default_sequence_cap;
        // Lets unbiased-single create zero-offset children with an independent
        // draw. Only useful to demonstrate the causality failure.
        bool allow_naive_zero_offset = false;
    };

    inline std::strong_ordering compare_time(VirtualTime a, VirtualTime b) noexcept
    {
        // Bit-exact; NaN timestamps are rejected at creation.
        if (a < b)
        {
            return std::strong_ordering::less;
        }
        if (b < a)
        {
            return std::strong_ordering::greater;
        }
        return std::strong_ordering::equal;
    }

    inline void validate_signature(const TimeSignature &sig, OrderingMode mode,
                                   std::size_t cap = default_sequence_cap)
    {
        switch (mode)
        {
        case OrderingMode::none:
        case OrderingMode::biased_ruleset:
            return;
        case OrderingMode::unbiased_single:
        case OrderingMode::additive:
            if (sig.tiebreak.size() != 1)
            {
                throw SimError(ErrorCode::MalformedSignature,
                               "single-value mode requires exactly one tie-break value, got " +
                                   std::to_string(sig.tiebreak.size()));
            }
            if (mode == OrderingMode::unbiased_single && sig.additive_high != 0)
            {
                throw SimError(ErrorCode::MalformedSignature, "accumulator high word set outside additive mode");
            }
            return;
        case OrderingMode::lex_sequence:
            if (sig.tiebreak.empty())
            {
                throw SimError(ErrorCode::MalformedSignature, "empty tie-break sequence");
            }
            if (sig.tiebreak.size() > cap)
            {
                throw SimError(ErrorCode::MalformedSignature,
                               "tie-break sequence length " + std::to_string(sig.tiebreak.size()) +
                                   " exceeds cap " + std::to_string(cap));
            }
            if (sig.additive_high != 0)
            {
                throw SimError(ErrorCode::MalformedSignature, "accumulator high word set outside additive mode");
            }
            return;
        }
    }

    // Total order on signatures for one mode. Equal means identical timestamp and
    // tie-break content; callers that need a strict order over distinct events use
    // compare_events. Biased mode compares timestamps only here.
    inline std::strong_ordering compare_signatures(const TimeSignature &a, const TimeSignature &b, OrderingMode mode,
                                                   std::size_t cap = default_sequence_cap)
    {
        if (mode == OrderingMode::none)
        {
            throw SimError(ErrorCode::ConfigError, "ordering mode none does not order tied signatures");
        }
        validate_signature(a, mode, cap);
        validate_signature(b, mode, cap);

        if (auto c = compare_time(a.timestamp, b.timestamp); c != 0)
        {
            return c;
        }
        switch (mode)
        {
        case OrderingMode::biased_ruleset:
        case OrderingMode::none:
            return std::strong_ordering::equal;
        case OrderingMode::unbiased_single:
            return a.tiebreak.front() <=> b.tiebreak.front();
        case OrderingMode::additive:
            if (auto c = a.additive_high <=> b.additive_high; c != 0)
            {
                return c;
            }
            return a.tiebreak.front() <=> b.tiebreak.front();
        case OrderingMode::lex_sequence:
            // A strict prefix sorts first: the shorter sequence belongs to a causal ancestor.
            return std::lexicographical_compare_three_way(a.tiebreak.begin(), a.tiebreak.end(),
                                                          b.tiebreak.begin(), b.tiebreak.end());
        }
        return std::strong_ordering::equal;
    }

    // Timestamp, then sending PE, then sending LP, then per-LP serial.
    inline std::strong_ordering biased_ruleset_compare(const TimeSignature &a, const EventIdentity &ida,
                                                       const TimeSignature &b, const EventIdentity &idb) noexcept
    {
        if (auto c = compare_time(a.timestamp, b.timestamp); c != 0)
        {
            return c;
        }
        if (auto c = ida.source_pe <=> idb.source_pe; c != 0)
        {
            return c;
        }
        if (auto c = ida.source_lp <=> idb.source_lp; c != 0)
        {
            return c;
        }
        return ida.serial <=> idb.serial;
    }

    // Strict order over events. When two distinct events carry identical signatures
    // (a 64-bit draw collision) the order falls back to (source LP, serial); the PE
    // is left out so the fallback does not depend on the LP-to-PE mapping. Each
    // activation is counted.
    inline std::strong_ordering compare_events(const TimeSignature &a, const EventIdentity &ida,
                                               const TimeSignature &b, const EventIdentity &idb, OrderingMode mode,
                                               std::uint64_t *fallback_activations = nullptr,
                                               std::size_t cap = default_sequence_cap)
    {
        if (mode == OrderingMode::biased_ruleset)
        {
            return biased_ruleset_compare(a, ida, b, idb);
        }
        if (auto c = compare_signatures(a, b, mode, cap); c != 0)
        {
            return c;
        }
        if (ida.source_lp == idb.source_lp && ida.serial == idb.serial)
        {
            return std::strong_ordering::equal;
        }
        if (fallback_activations != nullptr)
        {
            ++*fallback_activations;
        }
        if (auto c = ida.source_lp <=> idb.source_lp; c != 0)
        {
            return c;
        }
        return ida.serial <=> idb.serial;
    }

    // Signature of an event created by the holder of `parent`, `offset` later.
    inline TimeSignature derive_child_signature(const TimeSignature &parent, VirtualTime offset, TiebreakDraw draw,
                                                const SignaturePolicy &policy)
    {
        if (!(offset >= 0.0))
        {
            throw SimError(ErrorCode::CausalityViolation, "event scheduled with a negative offset");
        }

        TimeSignature child;
        child.timestamp = parent.timestamp + offset;
        // An offset too small to move the timestamp is treated as zero-offset.
        const bool zero_offset = child.timestamp == parent.timestamp;

        if (!uses_tiebreak(policy.mode))
        {
            return child;
        }
        if (!zero_offset)
        {
            child.tiebreak.push_back(draw.value);
            return child;
        }

        switch (policy.mode)
        {
        case OrderingMode::unbiased_single:
            if (!policy.allow_naive_zero_offset)
            {
                throw SimError(ErrorCode::ZeroOffsetForbidden,
                               "unbiased-single mode cannot order zero-offset events");
            }
            child.tiebreak.push_back(draw.value);
            return child;
        case OrderingMode::lex_sequence:
            validate_signature(parent, policy.mode, policy.sequence_cap);
            if (parent.tiebreak.size() + 1 > policy.sequence_cap)
            {
                throw SimError(ErrorCode::SequenceCapExceeded,
                               "zero-offset chain longer than " + std::to_string(policy.sequence_cap));
            }
            child.tiebreak = parent.tiebreak;
            child.tiebreak.push_back(draw.value);
            return child;
        case OrderingMode::additive:
        {
            validate_signature(parent, policy.mode, policy.sequence_cap);
            // A zero draw would tie the child with its parent.
            const std::uint64_t add = std::max<std::uint64_t>(draw.value, 1);
            const std::uint64_t low = parent.tiebreak.front() + add;
            const std::uint64_t carry = low < add ? 1 : 0;
            if (parent.additive_high == UINT64_MAX && carry != 0)
            {
                throw SimError(ErrorCode::SequenceCapExceeded, "additive accumulator overflow");
            }
            child.tiebreak.push_back(low);
            child.additive_high = parent.additive_high + carry;
            return child;
        }
        default:
            return child;
        }
    }

    // True when `a` is a strict lexicographic prefix of `b` at the same timestamp,
    // which only happens when a's event is a zero-offset ancestor of b's.
    inline bool is_causal_prefix(const TimeSignature &a, const TimeSignature &b) noexcept
    {
        if (a.timestamp != b.timestamp || a.tiebreak.size() >= b.tiebreak.size())
        {
            return false;
        }
        return std::equal(a.tiebreak.begin(), a.tiebreak.end(), b.tiebreak.begin());
    }

    // ---- text form used by traces ----

    inline std::string format_timestamp(VirtualTime t)
    {
        char buf[64];
        auto res = std::to_chars(buf, buf + sizeof(buf), t);
        return std::string(buf, res.ptr);
    }

    inline std::optional<VirtualTime> parse_timestamp(std::string_view text) noexcept
    {
        VirtualTime t = 0.0;
        auto res = std::from_chars(text.data(), text.data() + text.size(), t);
        if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        {
            return std::nullopt;
        }
        return t;
    }

    // Fixed-width lowercase hex joined by ':'. An additive value whose accumulator
    // overflowed 64 bits is written as one 32-digit token.
    inline std::string format_tiebreak(const TimeSignature &sig)
    {
        std::string out;
        char buf[40];
        for (std::size_t i = 0; i < sig.tiebreak.size(); ++i)
        {
            if (i != 0)
            {
                out.push_back(':');
            }
            if (i == 0 && sig.additive_high != 0)
            {
                std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(sig.additive_high));
                out += buf;
            }
            std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(sig.tiebreak[i]));
            out += buf;
        }
        return out;
    }

    inline bool parse_tiebreak(std::string_view text, TimeSignature &sig) noexcept
    {
        sig.tiebreak.clear();
        sig.additive_high = 0;
        if (text.empty())
        {
            return true;
        }
        auto hex64 = [](std::string_view digits, std::uint64_t &out) {
            if (digits.size() != 16)
            {
                return false;
            }
            for (char ch : digits)
            {
                if (!((ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'f')))
                {
                    return false;
                }
            }
            auto res = std::from_chars(digits.data(), digits.data() + digits.size(), out, 16);
            return res.ec == std::errc{} && res.ptr == digits.data() + digits.size();
        };

        std::size_t start = 0;
        bool first = true;
        while (start <= text.size())
        {
            auto end = text.find(':', start);
            if (end == std::string_view::npos)
            {
                end = text.size();
            }
            auto token = text.substr(start, end - start);
            std::uint64_t value = 0;
            if (first && token.size() == 32)
            {
                std::uint64_t high = 0;
                if (!hex64(token.substr(0, 16), high) || !hex64(token.substr(16), value) || high == 0)
                {
                    return false;
                }
                sig.additive_high = high;
            }
            else if (!hex64(token, value))
            {
                return false;
            }
            sig.tiebreak.push_back(value);
            first = false;
            if (end == text.size())
            {
                break;
            }
            start = end + 1;
        }
        if (sig.additive_high != 0 && sig.tiebreak.size() != 1)
        {
            return false;
        }
        return true;
    }

    inline std::string format_signature(const TimeSignature &sig)
    {
        return format_timestamp(sig.timestamp) + "@" + format_tiebreak(sig);
    }

    inline std::optional<TimeSignature> parse_signature(std::string_view text)
    {
        auto at = text.find('@');
        if (at == std::string_view::npos)
        {
            return std::nullopt;
        }
        auto ts = parse_timestamp(text.substr(0, at));
        if (!ts)
        {
            return std::nullopt;
        }
        TimeSignature sig;
        sig.timestamp = *ts;
        if (!parse_tiebreak(text.substr(at + 1), sig))
        {
            return std::nullopt;
        }
        return sig;
    }
}

#pragma once

#include "timebase.hpp"

#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <string_view>
#include <utility>

namespace tiewarp
{
    // Philox4x64-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
    // Counter-based: every block is an independent function of (key, counter),
    // so rolling a stream back is just resetting its counter.
    __extension__ using uint128 = unsigned __int128;

    namespace philox
    {
        using Counter = std::array<std::uint64_t, 4>;
        using Key = std::array<std::uint64_t, 2>;

        inline constexpr std::uint64_t M0 = 0xD2E7470EE14C6C93ULL;
        inline constexpr std::uint64_t M1 = 0xCA5A826395121157ULL;
        inline constexpr std::uint64_t W0 = 0x9E3779B97F4A7C15ULL;
        inline constexpr std::uint64_t W1 = 0xBB67AE8584CAA73BULL;

        inline constexpr void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t &hi, std::uint64_t &lo) noexcept
        {
            const uint128 p = static_cast<uint128>(a) * b;
            hi = static_cast<std::uint64_t>(p >> 64);
            lo = static_cast<std::uint64_t>(p);
        }

        inline constexpr Counter block(Counter ctr, Key key) noexcept
        {
            for (int round = 0; round < 10; ++round)
            {
                std::uint64_t hi0 = 0, lo0 = 0, hi1 = 0, lo1 = 0;
                mulhilo(M0, ctr[0], hi0, lo0);
                mulhilo(M1, ctr[2], hi1, lo1);
                ctr = Counter{hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
                key[0] += W0;
                key[1] += W1;
            }
            return ctr;
        }
    }

    inline constexpr std::string_view generator_name = "philox4x64-10";
    inline constexpr int generator_version = 1;

    inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
    {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    enum class StreamPurpose : std::uint8_t
    {
        tiebreak = 0,
        model = 1,
    };

    struct StreamKey
    {
        std::uint64_t global_seed = 0;
        LpId lp = 0;
        StreamPurpose purpose = StreamPurpose::tiebreak;

        friend bool operator==(const StreamKey &, const StreamKey &) = default;

        philox::Key philox_key() const noexcept
        {
            const std::uint64_t a = splitmix64(global_seed);
            const std::uint64_t b = splitmix64(splitmix64(lp) ^ (static_cast<std::uint64_t>(purpose) + 1) * W_PURPOSE);
            return {a, b ^ splitmix64(a)};
        }

    private:
        static constexpr std::uint64_t W_PURPOSE = 0xA0761D6478BD642FULL;
    };

    struct DrawCursor
    {
        std::uint64_t index = 0;

        friend auto operator<=>(const DrawCursor &, const DrawCursor &) = default;
    };

    inline std::uint64_t draw_at(const philox::Key &key, std::uint64_t index) noexcept
    {
        const auto out = philox::block(philox::Counter{index >> 2, 0, 0, 0}, key);
        return out[index & 3];
    }

    // Pure: the value depends only on (key, cursor.index).
    inline std::pair<TiebreakDraw, DrawCursor> draw(const StreamKey &key, DrawCursor cursor) noexcept
    {
        return {TiebreakDraw{draw_at(key.philox_key(), cursor.index)}, DrawCursor{cursor.index + 1}};
    }

    inline DrawCursor restore(DrawCursor snapshot) noexcept { return snapshot; }

    // Maps a 64-bit draw onto the open interval (0,1).
    inline double to_unit_open(std::uint64_t bits) noexcept
    {
        return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
    }

    // Unbiased enough integer in [0, n) by 128-bit multiply.
    inline std::uint64_t to_range(std::uint64_t bits, std::uint64_t n) noexcept
    {
        return static_cast<std::uint64_t>((static_cast<uint128>(bits) * n) >> 64);
    }

    // -mean * ln(1 - u); log1p keeps the result strictly positive for tiny u.
    inline double exponential_from_bits(std::uint64_t bits, double mean) noexcept
    {
        return -mean * std::log1p(-to_unit_open(bits));
    }

    inline std::pair<VirtualTime, DrawCursor> exponential_variate(const StreamKey &key, DrawCursor cursor, double mean)
    {
        if (!(mean > 0.0))
        {
            throw SimError(ErrorCode::ConfigError, "exponential mean must be positive");
        }
        auto [d, next] = draw(key, cursor);
        return {exponential_from_bits(d.value, mean), next};
    }

    // Source of raw stream values. The default is Philox; tests substitute
    // scripted sources to replay hand-written scenarios.
    struct PhiloxSource
    {
        using Prepared = philox::Key;

        Prepared prepare(const StreamKey &key) const noexcept { return key.philox_key(); }
        std::uint64_t operator()(const Prepared &prepared, const StreamKey &, std::uint64_t index) const noexcept
        {
            return draw_at(prepared, index);
        }
    };

    template <typename S>
    concept DrawSource = requires(const S &s, const StreamKey &key, const typename S::Prepared &p, std::uint64_t i) {
        { s.prepare(key) } -> std::convertible_to<typename S::Prepared>;
        { s(p, key, i) } -> std::convertible_to<std::uint64_t>;
    };

    // A stream bound to its key with a movable cursor.
    template <DrawSource Source = PhiloxSource>
    class DrawStream
    {
    public:
        DrawStream() = default;
        DrawStream(StreamKey key, const Source &source = {})
            : m_key(key), m_prepared(source.prepare(key)), m_source(source)
        {
        }

        std::uint64_t next() noexcept { return m_source(m_prepared, m_key, m_cursor.index++); }
        double next_unit() noexcept { return to_unit_open(next()); }

        DrawCursor cursor() const noexcept { return m_cursor; }
        void restore(DrawCursor snapshot) noexcept { m_cursor = snapshot; }
        const StreamKey &key() const noexcept { return m_key; }

    private:
        StreamKey m_key{};
        typename Source::Prepared m_prepared{};
        Source m_source{};
        DrawCursor m_cursor{};
    };
}

#include <tiewarp/rngstream.hpp>

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>
#include <vector>

using namespace tiewarp;

// Reference outputs of Philox4x64-10 from an independent implementation.
TEST(Philox, KnownAnswers)
{
    constexpr std::uint64_t max = ~std::uint64_t{0};
    EXPECT_EQ(philox::block({0, 0, 0, 0}, {0, 0}),
              (philox::Counter{0x16554d9eca36314cULL, 0xdb20fe9d672d0fdcULL, 0xd7e772cee186176bULL,
                               0x7e68b68aec7ba23bULL}));
    EXPECT_EQ(philox::block({0, 0, 0, 0}, {max, max}),
              (philox::Counter{0x44b7493d1acfc229ULL, 0x6636af8e997921ddULL, 0x3f73e132b5b3780eULL,
                               0x605644dde03b01b1ULL}));
    EXPECT_EQ(philox::block({0x243f6a8885a308d3ULL, 0x13198a2e03707344ULL, 0xa4093822299f31d0ULL,
                             0x082efa98ec4e6c89ULL},
                            {0x452821e638d01377ULL, 0xbe5466cf34e90c6cULL}),
              (philox::Counter{0xa528f45403e61d95ULL, 0x38c72dbd566e9788ULL, 0xa5a1610e72fd18b5ULL,
                               0x57bd43b5e52b7fe6ULL}));
    EXPECT_EQ(philox::block({5, 0, 0, 0}, {0x0123456789abcdefULL, 0xfedcba9876543210ULL}),
              (philox::Counter{0x1419091946cf93c3ULL, 0xd8f38ee79cfe875fULL, 0x83c953a1723ec495ULL,
                               0xf3f5cb91950b6a19ULL}));
}

TEST(Philox, BlockIsConstexpr)
{
    constexpr auto b = philox::block({0, 0, 0, 0}, {0, 0});
    static_assert(b[0] == 0x16554d9eca36314cULL);
    SUCCEED();
}

TEST(StreamKey, KnownDraws)
{
    const StreamKey tie{7, 3, StreamPurpose::tiebreak};
    const StreamKey model{7, 3, StreamPurpose::model};
    EXPECT_EQ(tie.philox_key(), (philox::Key{0x63cbe1e459320dd7ULL, 0xe581f96e56a059f1ULL}));
    EXPECT_EQ(model.philox_key(), (philox::Key{0x63cbe1e459320dd7ULL, 0xffff5aef8263dac1ULL}));

    const std::array<std::uint64_t, 6> tie_expected{0x4b21278351367130ULL, 0x9663644c97b3ed7fULL,
                                                    0xfab599b806f5a3ccULL, 0x1ca23e84d42b3910ULL,
                                                    0xaa1143afcb4fd624ULL, 0x3fb26822f124a634ULL};
    const std::array<std::uint64_t, 6> model_expected{0x2a3ce277a7b4bb2fULL, 0x285e5aad28d8d78aULL,
                                                      0x91b0a3778920469fULL, 0x6a19248608f885bdULL,
                                                      0xb9030d09f3ce09b8ULL, 0x37f0d15d2c48cd5aULL};
    DrawCursor c{};
    DrawCursor m{};
    for (std::size_t i = 0; i < 6; ++i)
    {
        auto [d, next] = draw(tie, c);
        EXPECT_EQ(d.value, tie_expected[i]) << i;
        EXPECT_EQ(next.index, i + 1);
        c = next;
        auto [dm, nm] = draw(model, m);
        EXPECT_EQ(dm.value, model_expected[i]) << i;
        m = nm;
    }
}

TEST(Draw, IsPure)
{
    const StreamKey k{11, 5, StreamPurpose::tiebreak};
    EXPECT_EQ(draw(k, DrawCursor{5}).first, draw(k, DrawCursor{5}).first);
    EXPECT_NE(draw(k, DrawCursor{5}).first, draw(k, DrawCursor{6}).first);
}

TEST(Draw, KeysSeparateStreams)
{
    const StreamKey base{11, 5, StreamPurpose::tiebreak};
    std::vector<StreamKey> others{{12, 5, StreamPurpose::tiebreak},
                                  {11, 6, StreamPurpose::tiebreak},
                                  {11, 5, StreamPurpose::model}};
    for (const auto &k : others)
    {
        int same = 0;
        for (std::uint64_t i = 0; i < 64; ++i)
        {
            same += draw(base, DrawCursor{i}).first == draw(k, DrawCursor{i}).first ? 1 : 0;
        }
        EXPECT_EQ(same, 0);
    }
}

TEST(Restore, ReplaysTriple)
{
    DrawStream<> s(StreamKey{3, 1, StreamPurpose::model});
    s.next();
    const auto snap = s.cursor();
    const std::array<std::uint64_t, 3> first{s.next(), s.next(), s.next()};
    s.restore(restore(snap));
    const std::array<std::uint64_t, 3> second{s.next(), s.next(), s.next()};
    EXPECT_EQ(first, second);
}

TEST(Restore, FromZeroReplaysWholeSequence)
{
    DrawStream<> s(StreamKey{3, 1, StreamPurpose::tiebreak});
    std::vector<std::uint64_t> first;
    for (int i = 0; i < 37; ++i)
    {
        first.push_back(s.next());
    }
    s.restore(DrawCursor{0});
    for (int i = 0; i < 37; ++i)
    {
        EXPECT_EQ(s.next(), first[i]);
    }
}

// Random interleavings of draws, snapshots and restores against an oracle
// that only tracks the cursor index.
TEST(Restore, MatchesCursorArithmeticOracle)
{
    const StreamKey key{99, 17, StreamPurpose::tiebreak};
    const auto pk = key.philox_key();
    DrawStream<> s(key);
    std::uint64_t oracle_index = 0;
    std::vector<std::pair<DrawCursor, std::uint64_t>> snaps;
    std::mt19937_64 rng(4);
    for (int step = 0; step < 20000; ++step)
    {
        const auto op = rng() % 10;
        if (op < 6)
        {
            ASSERT_EQ(s.next(), draw_at(pk, oracle_index));
            ++oracle_index;
        }
        else if (op < 8)
        {
            snaps.emplace_back(s.cursor(), oracle_index);
        }
        else if (!snaps.empty())
        {
            const auto pick = rng() % snaps.size();
            s.restore(snaps[pick].first);
            oracle_index = snaps[pick].second;
            snaps.resize(pick + 1);
        }
        ASSERT_EQ(s.cursor().index, oracle_index);
    }
}

TEST(Uniformity, ChiSquaredOn256Bins)
{
    constexpr std::size_t n = 1000000;
    constexpr std::size_t bins = 256;
    // 0.99 quantile of chi-squared with 255 degrees of freedom.
    constexpr double critical = 310.457;
    const auto pk = StreamKey{2024, 0, StreamPurpose::tiebreak}.philox_key();
    std::array<std::uint64_t, bins> counts{};
    for (std::uint64_t i = 0; i < n; ++i)
    {
        ++counts[draw_at(pk, i) >> 56];
    }
    const double expected = static_cast<double>(n) / bins;
    double chi2 = 0.0;
    for (auto c : counts)
    {
        const double d = static_cast<double>(c) - expected;
        chi2 += d * d / expected;
    }
    EXPECT_LT(chi2, critical);
}

TEST(Independence, TiebreakAndModelStreamsUncorrelated)
{
    constexpr std::size_t n = 1000000;
    const auto a = StreamKey{2024, 8, StreamPurpose::tiebreak}.philox_key();
    const auto b = StreamKey{2024, 8, StreamPurpose::model}.philox_key();
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::uint64_t i = 0; i < n; ++i)
    {
        const double x = to_unit_open(draw_at(a, i));
        const double y = to_unit_open(draw_at(b, i));
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double r = cov / std::sqrt((sxx / n - (sx / n) * (sx / n)) * (syy / n - (sy / n) * (sy / n)));
    // Three standard errors of a zero correlation.
    EXPECT_LT(std::abs(r), 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST(UnitMapping, StaysInsideOpenInterval)
{
    EXPECT_GT(to_unit_open(0), 0.0);
    EXPECT_LT(to_unit_open(~std::uint64_t{0}), 1.0);
    EXPECT_DOUBLE_EQ(to_unit_open(std::uint64_t{1} << 63), 0.5 + 0x1.0p-53);
}

TEST(UnitMapping, RangeIsBounded)
{
    EXPECT_EQ(to_range(0, 101), 0u);
    EXPECT_EQ(to_range(~std::uint64_t{0}, 101), 100u);
    EXPECT_EQ(to_range(std::uint64_t{1} << 63, 100), 50u);
}

TEST(Exponential, InverseCdf)
{
    const StreamKey k{5, 2, StreamPurpose::model};
    auto [x, next] = exponential_variate(k, DrawCursor{3}, 2.5);
    const double u = to_unit_open(draw(k, DrawCursor{3}).first.value);
    EXPECT_DOUBLE_EQ(x, -2.5 * std::log(1.0 - u));
    EXPECT_EQ(next.index, 4u);
}

TEST(Exponential, ExtremesArePositiveAndFinite)
{
    EXPECT_GT(exponential_from_bits(0, 1.0), 0.0);
    EXPECT_TRUE(std::isfinite(exponential_from_bits(~std::uint64_t{0}, 1.0)));
}

TEST(Exponential, SampleMeanWithinOnePercent)
{
    constexpr std::size_t n = 1000000;
    const auto pk = StreamKey{77, 1, StreamPurpose::model}.philox_key();
    double sum = 0.0;
    double min = 1.0;
    for (std::uint64_t i = 0; i < n; ++i)
    {
        const double x = exponential_from_bits(draw_at(pk, i), 1.0);
        sum += x;
        min = std::min(min, x);
    }
    EXPECT_NEAR(sum / n, 1.0, 0.01);
    EXPECT_GT(min, 0.0);
}

TEST(Exponential, RejectsNonPositiveMean)
{
    const StreamKey k{};
    EXPECT_THROW((void)exponential_variate(k, DrawCursor{}, 0.0), SimError);
    EXPECT_THROW((void)exponential_variate(k, DrawCursor{}, -1.0), SimError);
}

TEST(Splitmix, KnownValue)
{
    // First output of the reference splitmix64 generator seeded with 0.
    EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafULL);
}

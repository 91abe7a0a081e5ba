#include "support/properties.hpp"

#include <tiewarp/kernel_optimistic.hpp>
#include <tiewarp/kernel_seq.hpp>
#include <tiewarp/scenarios.hpp>
#include <tiewarp/trace_io.hpp>

#include <gtest/gtest.h>

#include <vector>

using namespace tiewarp;
using tiewarp::testing::sig;

namespace
{
    // Counts received events; emits nothing, so PE-level tests control every message.
    struct Tally
    {
        std::uint64_t n = 2;
        std::uint64_t lp_count() const noexcept { return n; }
        template <typename Ctx>
        void initialize(LpState &, Ctx &) const
        {
        }
        template <typename Ctx>
        void handle(LpState &state, const Event &, Ctx &ctx) const
        {
            state.mean_val += 1.0;
            (void)ctx.draw();
        }
    };

    // Each event forwards one event to the other LP a unit later.
    struct PingPong
    {
        std::uint64_t lp_count() const noexcept { return 2; }
        template <typename Ctx>
        void initialize(LpState &, Ctx &) const
        {
        }
        template <typename Ctx>
        void handle(LpState &state, const Event &, Ctx &ctx) const
        {
            state.mean_val += 1.0;
            ctx.send(1 - ctx.self(), 1.0, Payload{});
        }
    };

    struct Sent
    {
        PeId dest;
        Message msg;
    };

    template <typename Model>
    struct Bench
    {
        Model model;
        RunConfig cfg;
        std::vector<Sent> remote;
        PeRuntime<Model> pe;

        explicit Bench(Model m = {}, RunConfig c = {}, std::uint32_t pes = 1)
            : model(m), cfg(c), pe(model, cfg, 0, pes, [this](PeId d, Message msg) { remote.push_back({d, msg}); })
        {
        }
    };

    Message positive(std::uint64_t uid, LpId dest, TimeSignature s)
    {
        Message m;
        m.uid = uid;
        m.event.dest_lp = dest;
        m.event.signature = std::move(s);
        m.event.identity = EventIdentity{9, 100 + uid, uid};
        return m;
    }

    Message anti_of(Message m)
    {
        m.anti = true;
        m.event.anti = true;
        return m;
    }

    RunConfig tiny(OrderingMode mode, double end = 5)
    {
        RunConfig cfg;
        cfg.mode = mode;
        cfg.end_time = end;
        cfg.global_seed = 21;
        cfg.gvt_interval = 64;
        return cfg;
    }
}

TEST(Rollback, StragglerEqualToClockUndoesNothing)
{
    Bench<Tally> b;
    const auto m = positive(1, 0, sig(1, {0.5}));
    b.pe.receive(m);
    b.pe.process_next();
    EXPECT_EQ(b.pe.rollback(*b.pe.local_clock()), 0u);
    EXPECT_EQ(b.pe.processed_count(), 1u);
}

TEST(Rollback, FullRewindRestoresInitialState)
{
    Bench<Tally> b;
    for (std::uint64_t i = 0; i < 5; ++i)
    {
        b.pe.receive(positive(i + 1, i % 2, sig(1, {0.1 * static_cast<double>(i + 2)})));
    }
    const auto before0 = b.pe.lp(0).snapshot();
    const auto before1 = b.pe.lp(1).snapshot();
    for (int i = 0; i < 5; ++i)
    {
        b.pe.process_next();
    }
    EXPECT_EQ(b.pe.lp(0).state.mean_val + b.pe.lp(1).state.mean_val, 5.0);

    EXPECT_EQ(b.pe.rollback(positive(99, 0, sig(1, {0.05}))), 5u);
    EXPECT_EQ(b.pe.lp(0).state, before0.state);
    EXPECT_EQ(b.pe.lp(1).state, before1.state);
    EXPECT_EQ(b.pe.lp(0).model.cursor(), before0.model);
    EXPECT_EQ(b.pe.lp(1).model.cursor(), before1.model);
    EXPECT_EQ(b.pe.pending_count(), 5u);
    EXPECT_EQ(b.pe.metrics().events_undone, 5u);
}

TEST(Rollback, PartialRewindKeepsEarlierEvents)
{
    Bench<Tally> b;
    for (std::uint64_t i = 0; i < 4; ++i)
    {
        b.pe.receive(positive(i + 1, 0, sig(1, {0.2 * static_cast<double>(i + 1)})));
    }
    for (int i = 0; i < 4; ++i)
    {
        b.pe.process_next();
    }
    // Between the second (0.4) and third (0.6) events.
    b.pe.receive(positive(50, 0, sig(1, {0.5})));
    EXPECT_EQ(b.pe.processed_count(), 2u);
    EXPECT_EQ(b.pe.lp(0).state.mean_val, 2.0);
    EXPECT_EQ(b.pe.pending_count(), 3u);
}

TEST(Rollback, ModeNoneUndoesWholeTimestamp)
{
    Bench<Tally> b(Tally{}, tiny(OrderingMode::none));
    b.pe.receive(positive(1, 0, sig(1, {})));
    b.pe.receive(positive(2, 0, sig(2, {})));
    b.pe.receive(positive(3, 1, sig(2, {})));
    for (int i = 0; i < 3; ++i)
    {
        b.pe.process_next();
    }
    // A tie with the clock is not a straggler.
    b.pe.receive(positive(4, 1, sig(2, {})));
    EXPECT_EQ(b.pe.processed_count(), 3u);
    // A strictly earlier event undoes everything at or after it.
    b.pe.receive(positive(5, 1, sig(1.5, {})));
    EXPECT_EQ(b.pe.processed_count(), 1u);
}

TEST(Cancel, AntiBeforeProcessingAnnihilatesPending)
{
    Bench<Tally> b;
    const auto m = positive(7, 0, sig(1, {0.5}));
    b.pe.receive(m);
    EXPECT_EQ(b.pe.receive_anti(anti_of(m)), CancelOutcome::annihilated_pending);
    EXPECT_FALSE(b.pe.has_work());
}

TEST(Cancel, AntiForProcessedEventRollsBackThenAnnihilates)
{
    Bench<Tally> b;
    const auto a = positive(1, 0, sig(1, {0.3}));
    const auto c = positive(2, 1, sig(1, {0.6}));
    b.pe.receive(a);
    b.pe.receive(c);
    b.pe.process_next();
    b.pe.process_next();
    EXPECT_EQ(b.pe.receive_anti(anti_of(a)), CancelOutcome::triggered_rollback);
    EXPECT_EQ(b.pe.processed_count(), 0u);
    EXPECT_EQ(b.pe.pending_count(), 1u);
    EXPECT_EQ(b.pe.lp(0).state.mean_val, 0.0);
    EXPECT_EQ(b.pe.lp(1).state.mean_val, 0.0);
}

TEST(Cancel, SecondAntiIsUnmatched)
{
    Bench<Tally> b;
    const auto m = positive(3, 0, sig(1, {0.5}));
    b.pe.receive(m);
    (void)b.pe.receive_anti(anti_of(m));
    try
    {
        (void)b.pe.receive_anti(anti_of(m));
        FAIL() << "expected UnmatchedAntiMessage";
    }
    catch (const SimError &e)
    {
        EXPECT_EQ(e.code(), ErrorCode::UnmatchedAntiMessage);
    }
}

TEST(Cancel, AntiOvertakingItsEventIsDeferred)
{
    Bench<Tally> b;
    const auto m = positive(4, 0, sig(1, {0.5}));
    EXPECT_EQ(b.pe.receive_anti(anti_of(m)), CancelOutcome::deferred);
    EXPECT_THROW(b.pe.check_no_orphans(), SimError);
    b.pe.receive(m);
    EXPECT_FALSE(b.pe.has_work());
    EXPECT_NO_THROW(b.pe.check_no_orphans());
}

TEST(Cancel, AntiForEventBeyondHorizon)
{
    Bench<Tally> b(Tally{}, tiny(OrderingMode::lex_sequence, 5));
    const auto m = positive(5, 0, sig(6, {0.5}));
    b.pe.receive(m);
    EXPECT_FALSE(b.pe.has_work());
    EXPECT_EQ(b.pe.receive_anti(anti_of(m)), CancelOutcome::annihilated_beyond_horizon);
}

TEST(Cancel, UndoneOutputsSendAntiMessages)
{
    Bench<PingPong> b(PingPong{}, tiny(OrderingMode::lex_sequence), 2);
    b.pe.receive(positive(1, 0, sig(1, {0.5})));
    b.pe.process_next();
    ASSERT_EQ(b.remote.size(), 1u);
    EXPECT_EQ(b.remote[0].dest, 1u);
    EXPECT_FALSE(b.remote[0].msg.anti);
    b.pe.receive(positive(2, 0, sig(1, {0.25})));
    ASSERT_EQ(b.remote.size(), 2u);
    EXPECT_TRUE(b.remote[1].msg.anti);
    EXPECT_EQ(b.remote[1].msg.uid, b.remote[0].msg.uid);
}

TEST(Gvt, SingleWorkerIsHeadOfPendingQueue)
{
    Bench<Tally> b;
    b.pe.receive(positive(1, 0, sig(3, {0.5})));
    b.pe.receive(positive(2, 0, sig(2, {0.5})));
    const std::vector<GvtEstimate> mins{b.pe.local_min()};
    const auto gvt = compute_gvt(mins, b.pe.order());
    ASSERT_TRUE(gvt.has_value());
    EXPECT_EQ(gvt->event.signature, sig(2, {0.5}));
}

TEST(Gvt, EmptyEverywhereIsInfinity)
{
    detail::MessageOrder order;
    const std::vector<GvtEstimate> mins{std::nullopt, std::nullopt};
    EXPECT_FALSE(compute_gvt(mins, order).has_value());
}

TEST(Gvt, MinimumAcrossWorkers)
{
    detail::MessageOrder order;
    const std::vector<GvtEstimate> mins{positive(1, 0, sig(2, {0.1})), std::nullopt,
                                        positive(2, 0, sig(2, {0.05, 0.9})), positive(3, 0, sig(4, {0.0}))};
    EXPECT_EQ(compute_gvt(mins, order)->uid, 2u);
}

TEST(FossilCollect, ZeroGvtCommitsNothing)
{
    Bench<Tally> b;
    b.pe.receive(positive(1, 0, sig(1, {0.5})));
    b.pe.process_next();
    EXPECT_EQ(b.pe.fossil_collect(positive(0, 0, sig(0, {0.0}))), 0u);
    EXPECT_EQ(b.pe.committed().size(), 0u);
}

TEST(FossilCollect, InfinityCommitsEverything)
{
    Bench<Tally> b;
    for (std::uint64_t i = 0; i < 4; ++i)
    {
        b.pe.receive(positive(i + 1, 0, sig(1 + static_cast<double>(i), {0.5})));
        b.pe.process_next();
    }
    EXPECT_EQ(b.pe.fossil_collect(std::nullopt), 4u);
    EXPECT_EQ(b.pe.committed().size(), 4u);
    EXPECT_EQ(b.pe.processed_count(), 0u);
}

TEST(FossilCollect, CommitsStrictlyBelowGvt)
{
    Bench<Tally> b;
    for (std::uint64_t i = 0; i < 4; ++i)
    {
        b.pe.receive(positive(i + 1, 0, sig(1 + static_cast<double>(i), {0.5})));
        b.pe.process_next();
    }
    EXPECT_EQ(b.pe.fossil_collect(positive(9, 0, sig(3, {0.4}))), 2u);
    // A straggler below committed history is a causality violation.
    try
    {
        b.pe.receive(positive(10, 0, sig(1.5, {0.5})));
        FAIL() << "expected CausalityViolation";
    }
    catch (const SimError &e)
    {
        EXPECT_EQ(e.code(), ErrorCode::CausalityViolation);
    }
}

TEST(MergeCommits, ModeNoneKeepsPeOrderOnTies)
{
    std::vector<std::vector<Event>> per_pe(2);
    Event a;
    a.signature = sig(1, {});
    a.identity.source_lp = 5;
    Event b = a;
    b.identity.source_lp = 3;
    per_pe[0].push_back(a);
    per_pe[1].push_back(b);
    const auto merged = merge_commits(per_pe, OrderingMode::none);
    EXPECT_EQ(merged[0].identity.source_lp, 5u);
    const auto lex = merge_commits(per_pe, OrderingMode::biased_ruleset);
    EXPECT_EQ(lex[0].identity.source_lp, 3u);
}

TEST(MergeCommits, ModeNonePutsZeroOffsetChildrenAfterTheirParents)
{
    auto make = [](LpId lp, std::uint64_t serial, double t) {
        Event e;
        e.signature = sig(t, {});
        e.identity.source_lp = lp;
        e.identity.serial = serial;
        return e;
    };
    auto child_of = [](Event e, const Event &parent) {
        e.has_parent = true;
        e.parent = ref_of(parent.identity);
        return e;
    };
    const Event root = make(7, 0, 1);
    const Event child = child_of(make(2, 0, 1), root);
    const Event grandchild = child_of(make(4, 0, 1), child);
    const Event other = make(1, 0, 1);
    const Event later = make(3, 0, 2);
    // PE 0 committed the child before PE 1 committed its root.
    const std::vector<std::vector<Event>> per_pe{{child, other, later}, {root, grandchild}};
    std::vector<LpId> order;
    for (const auto &e : merge_commits(per_pe, OrderingMode::none))
    {
        order.push_back(e.identity.source_lp);
    }
    EXPECT_EQ(order, (std::vector<LpId>{1, 7, 2, 4, 3}));
}

class OracleEquivalence : public ::testing::TestWithParam<OrderingMode>
{
};

TEST_P(OracleEquivalence, EventTiesMatchesSequentialAcrossWorkersAndChaos)
{
    const models::EventTies model({48, 0.5, 2, false});
    const auto cfg = tiny(GetParam());
    const auto reference = trace_digest(run_sequential(model, cfg));
    for (std::uint32_t w : {1u, 2u, 4u})
    {
        for (std::uint64_t chaos : {0ULL, 5ULL, 77ULL, 1234ULL})
        {
            const auto t = run_optimistic(model, cfg, w, ChaosConfig{chaos, 4});
            EXPECT_EQ(trace_digest(t), reference) << "workers=" << w << " chaos=" << chaos;
            EXPECT_TRUE(audit_trace(t).ok());
        }
    }
}

TEST_P(OracleEquivalence, StressAndPholdMatchSequential)
{
    const auto cfg = tiny(GetParam(), 4);
    const models::EventTiesStress stress({16, 0.3, 2, 3});
    EXPECT_EQ(trace_digest(run_optimistic(stress, cfg, 3, ChaosConfig{8, 3})), trace_digest(run_sequential(stress, cfg)));
    const models::Phold phold({64, 0.25, 0.5, 2});
    EXPECT_EQ(trace_digest(run_optimistic(phold, cfg, 4, ChaosConfig{9, 3})), trace_digest(run_sequential(phold, cfg)));
}

INSTANTIATE_TEST_SUITE_P(Modes, OracleEquivalence,
                         ::testing::Values(OrderingMode::additive, OrderingMode::lex_sequence),
                         [](const auto &info) { return std::string(to_string(info.param)); });

TEST(OptimisticKernel, SingleWorkerMatchesSequentialInEveryMode)
{
    for (auto mode : {OrderingMode::none, OrderingMode::biased_ruleset, OrderingMode::additive,
                      OrderingMode::lex_sequence})
    {
        const models::EventTies model({24, 0.5, mode == OrderingMode::biased_ruleset ? 1u : 2u, false});
        const auto cfg = tiny(mode);
        EXPECT_EQ(trace_digest(run_optimistic(model, cfg, 1)), trace_digest(run_sequential(model, cfg)))
            << to_string(mode);
    }
}

TEST(OptimisticKernel, FrequentGvtStillMatches)
{
    const models::EventTies model({32, 0.5, 3, true});
    auto cfg = tiny(OrderingMode::lex_sequence);
    cfg.gvt_interval = 3;
    const auto t = run_optimistic(model, cfg, 4, ChaosConfig{17, 6});
    EXPECT_EQ(trace_digest(t), trace_digest(run_sequential(model, cfg)));
    EXPECT_GT(t.metrics.gvt_rounds, 5u);
}

TEST(OptimisticKernel, ScriptedDemoMatchesSequential)
{
    scenarios::ZeroOffsetDemo demo;
    RunConfig cfg = tiny(OrderingMode::additive, 1);
    const auto seq = run_sequential(demo.model, cfg, demo.source);
    const auto opt = run_optimistic(demo.model, cfg, 2, ChaosConfig{3, 2}, demo.source);
    EXPECT_EQ(trace_digest(seq), trace_digest(opt));
}

TEST(OptimisticKernel, NaiveZeroOffsetDrawsLivelock)
{
    scenarios::ZeroOffsetDemo demo;
    RunConfig cfg = tiny(OrderingMode::unbiased_single, 1);
    cfg.allow_naive_zero_offset = true;
    cfg.livelock_bound = 200;
    try
    {
        (void)run_optimistic(demo.model, cfg, 1, ChaosConfig{}, demo.source);
        FAIL() << "expected LivelockDetected";
    }
    catch (const SimError &e)
    {
        EXPECT_EQ(e.code(), ErrorCode::LivelockDetected);
    }
}

// Without tie-breaking the committed order depends on message timing: runs
// either diverge from each other or never settle.
TEST(OptimisticKernel, ModeNoneIsNotReproducible)
{
    const models::EventTies model({32, 0.5, 2, false});
    auto cfg = tiny(OrderingMode::none);
    cfg.livelock_bound = 200;
    std::vector<std::string> digests;
    bool livelock = false;
    for (std::uint64_t chaos : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL})
    {
        try
        {
            digests.push_back(trace_digest(run_optimistic(model, cfg, 4, ChaosConfig{chaos, 4})));
        }
        catch (const SimError &e)
        {
            ASSERT_EQ(e.code(), ErrorCode::LivelockDetected);
            livelock = true;
        }
    }
    const bool diverged =
        digests.size() > 1 && std::any_of(digests.begin(), digests.end(), [&](auto &d) { return d != digests[0]; });
    EXPECT_TRUE(diverged || livelock);
}

TEST(OptimisticKernel, ModeNoneWithoutZeroOffsetDiverges)
{
    // Chains of one: every tie is between independent events, so no livelock.
    const models::EventTies model({64, 0.5, 1, false});
    const auto cfg = tiny(OrderingMode::none, 8);
    std::vector<std::string> digests;
    for (std::uint64_t chaos : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL})
    {
        const auto t = run_optimistic(model, cfg, 4, ChaosConfig{chaos, 4});
        EXPECT_EQ(t.net_event_count(), model.expected_net_events(8));
        EXPECT_TRUE(audit_trace(t).ok());
        digests.push_back(trace_digest(t));
    }
    EXPECT_TRUE(std::any_of(digests.begin(), digests.end(), [&](auto &d) { return d != digests[0]; }));
}

TEST(OptimisticKernel, RejectsBadConfig)
{
    const models::Phold model({4, 0.1, 1.0, 1});
    EXPECT_THROW((void)run_optimistic(model, RunConfig{}, 0), SimError);
    RunConfig cfg;
    cfg.gvt_interval = 0;
    EXPECT_THROW((void)run_optimistic(model, cfg, 2), SimError);
    cfg = RunConfig{};
    cfg.optimism_window = 0;
    EXPECT_THROW((void)run_optimistic(model, cfg, 2), SimError);
}

TEST(OptimisticKernel, SingleEventWindowStillMatches)
{
    const models::EventTies model({32, 0.5, 3, false});
    auto cfg = tiny(OrderingMode::lex_sequence);
    cfg.optimism_window = 1;
    EXPECT_EQ(trace_digest(run_optimistic(model, cfg, 4, ChaosConfig{8, 3})), trace_digest(run_sequential(model, cfg)));
}

// Deep remote zero-offset trees make every tie cluster nearly sequential; the
// window keeps per-event rollbacks far from the livelock bound.
TEST(OptimisticKernel, TieDenseTreesStayWellBelowLivelockBound)
{
    const models::EventTiesStress model({96, 0.98, 3, 2});
    RunConfig cfg;
    cfg.mode = OrderingMode::lex_sequence;
    cfg.end_time = 8;
    cfg.global_seed = 2970082535643837008ULL;
    const auto t = run_optimistic(model, cfg, 3, ChaosConfig{5152567511297252573ULL, 4});
    EXPECT_EQ(trace_digest(t), trace_digest(run_sequential(model, cfg)));
    EXPECT_LT(t.metrics.max_event_undos, cfg.livelock_bound / 4);
}

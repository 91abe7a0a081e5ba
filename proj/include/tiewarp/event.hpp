#pragma once

#include "rngstream.hpp"
#include "timebase.hpp"

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <functional>
#include <vector>

namespace tiewarp
{
    // Model record carried by every event. PHOLD ignores it; Event-Ties uses
    // `val`; the stress model also uses the tree fields.
    struct Payload
    {
        std::int32_t val = 0;
        std::uint32_t level = 0;
        std::uint64_t descendant_sum = 0;

        friend bool operator==(const Payload &, const Payload &) = default;
    };

    struct LpState
    {
        double mean_val = 0.0;

        friend bool operator==(const LpState &, const LpState &) = default;
    };

    // (source LP, serial) names an event independently of the PE mapping.
    struct EventRef
    {
        LpId lp = 0;
        std::uint64_t serial = 0;

        friend bool operator==(const EventRef &, const EventRef &) = default;
    };

    inline EventRef ref_of(const EventIdentity &id) noexcept { return {id.source_lp, id.serial}; }

    struct EventRefHash
    {
        std::size_t operator()(const EventRef &r) const noexcept
        {
            return std::hash<std::uint64_t>{}(splitmix64(r.lp) ^ r.serial);
        }
    };

    struct Event
    {
        EventIdentity identity;
        LpId dest_lp = 0;
        TimeSignature signature;
        Payload payload;
        bool anti = false;
        std::uint32_t zero_offset_depth = 0;
        bool has_parent = false;
        EventRef parent;
    };

    struct RunMetrics
    {
        std::uint64_t processed = 0;
        std::uint64_t rollbacks = 0;
        std::uint64_t events_undone = 0;
        std::uint64_t anti_messages = 0;
        std::uint64_t annihilations = 0;
        std::uint64_t gvt_rounds = 0;
        std::uint64_t fallback_activations = 0;
        // Most rollbacks suffered by any single event.
        std::uint64_t max_event_undos = 0;
        double wall_time_s = 0.0;

        RunMetrics &operator+=(const RunMetrics &o) noexcept
        {
            processed += o.processed;
            rollbacks += o.rollbacks;
            events_undone += o.events_undone;
            anti_messages += o.anti_messages;
            annihilations += o.annihilations;
            gvt_rounds += o.gvt_rounds;
            fallback_activations += o.fallback_activations;
            max_event_undos = std::max(max_event_undos, o.max_event_undos);
            return *this;
        }
    };

    struct TraceEntry
    {
        std::uint64_t commit_index = 0;
        EventIdentity identity;
        LpId dest_lp = 0;
        TimeSignature signature;
        std::uint32_t zero_offset_depth = 0;
        bool has_parent = false;
        EventRef parent;
    };

    inline TraceEntry to_trace_entry(const Event &e, std::uint64_t commit_index)
    {
        return TraceEntry{commit_index, e.identity, e.dest_lp, e.signature, e.zero_offset_depth, e.has_parent, e.parent};
    }

    struct Trace
    {
        OrderingMode mode = OrderingMode::lex_sequence;
        std::uint64_t global_seed = 0;
        std::vector<TraceEntry> committed;
        std::vector<LpState> final_states;
        RunMetrics metrics;

        std::uint64_t net_event_count() const noexcept { return committed.size(); }
    };

    struct RunConfig
    {
        OrderingMode mode = OrderingMode::lex_sequence;
        std::uint64_t global_seed = 1;
        // Events stamped strictly after end_time are discarded unprocessed.
        VirtualTime end_time = 10.0;
        std::size_t sequence_cap = default_sequence_cap;
        bool allow_naive_zero_offset = false;
        // Optimistic kernel only.
        std::uint64_t gvt_interval = 4096;
        std::uint64_t livelock_bound = 1000;
        // Processed but uncommitted events a PE may hold before it waits for GVT.
        std::uint64_t optimism_window = 64;

        SignaturePolicy policy() const noexcept { return {mode, sequence_cap, allow_naive_zero_offset}; }
    };

    struct Emission
    {
        LpId dest = 0;
        VirtualTime offset = 0.0;
        Payload payload;
    };

    // What a model handler may touch: its own MODEL stream and an outbox.
    template <DrawSource Source = PhiloxSource>
    class HandlerContext
    {
    public:
        HandlerContext(LpId self, std::uint64_t lp_count, VirtualTime now, DrawStream<Source> &model_stream,
                       std::vector<Emission> &outbox) noexcept
            : m_self(self), m_lp_count(lp_count), m_now(now), m_stream(model_stream), m_outbox(outbox)
        {
        }

        LpId self() const noexcept { return m_self; }
        std::uint64_t lp_count() const noexcept { return m_lp_count; }
        VirtualTime now() const noexcept { return m_now; }

        std::uint64_t draw() noexcept { return m_stream.next(); }
        double uniform() noexcept { return m_stream.next_unit(); }
        std::uint64_t uniform_int(std::uint64_t n) noexcept { return to_range(m_stream.next(), n); }
        VirtualTime exponential(double mean) noexcept { return exponential_from_bits(m_stream.next(), mean); }

        // Uniformly random LP other than self; self when it is the only LP.
        LpId random_other_lp() noexcept
        {
            if (m_lp_count < 2)
            {
                return m_self;
            }
            const LpId k = uniform_int(m_lp_count - 1);
            return k < m_self ? k : k + 1;
        }

        void send(LpId dest, VirtualTime offset, const Payload &payload) { m_outbox.push_back({dest, offset, payload}); }

    private:
        LpId m_self;
        std::uint64_t m_lp_count;
        VirtualTime m_now;
        DrawStream<Source> &m_stream;
        std::vector<Emission> &m_outbox;
    };

    template <typename M>
    concept SimModel = requires(const M &m, LpState &state, const Event &ev, HandlerContext<PhiloxSource> &ctx) {
        { m.lp_count() } -> std::convertible_to<std::uint64_t>;
        m.initialize(state, ctx);
        m.handle(state, ev, ctx);
    };

    // Per-LP runtime shared by both kernels: model state, the two draw streams
    // and the serial counter. All of it is restored together on rollback.
    template <DrawSource Source = PhiloxSource>
    struct LpRuntime
    {
        struct Snapshot
        {
            LpState state;
            DrawCursor tiebreak;
            DrawCursor model;
            std::uint64_t next_serial = 0;
        };

        LpState state;
        DrawStream<Source> tiebreak;
        DrawStream<Source> model;
        std::uint64_t next_serial = 0;

        LpRuntime() = default;
        LpRuntime(std::uint64_t global_seed, LpId lp, const Source &source)
            : tiebreak(StreamKey{global_seed, lp, StreamPurpose::tiebreak}, source),
              model(StreamKey{global_seed, lp, StreamPurpose::model}, source)
        {
        }

        Snapshot snapshot() const noexcept { return {state, tiebreak.cursor(), model.cursor(), next_serial}; }

        void restore(const Snapshot &s) noexcept
        {
            state = s.state;
            tiebreak.restore(s.tiebreak);
            model.restore(s.model);
            next_serial = s.next_serial;
        }
    };

    // Turns one handler emission into a signed event. `parent` is null for the
    // initial events, which are derived from a root signature at time zero.
    template <DrawSource Source>
    Event materialize(LpRuntime<Source> &creator, LpId creator_lp, PeId pe, const Event *parent,
                      const Emission &emission, const SignaturePolicy &policy)
    {
        static const TimeSignature root{};
        const TimeSignature &parent_sig = parent != nullptr ? parent->signature : root;

        TiebreakDraw draw{};
        if (uses_tiebreak(policy.mode))
        {
            draw.value = creator.tiebreak.next();
        }

        Event ev;
        ev.identity = EventIdentity{pe, creator_lp, creator.next_serial++};
        ev.dest_lp = emission.dest;
        ev.signature = derive_child_signature(parent_sig, emission.offset, draw, policy);
        ev.payload = emission.payload;
        if (parent != nullptr)
        {
            ev.has_parent = true;
            ev.parent = ref_of(parent->identity);
            ev.zero_offset_depth =
                ev.signature.timestamp == parent_sig.timestamp ? parent->zero_offset_depth + 1 : 0;
        }
        return ev;
    }
}

#pragma once

#include "event.hpp"
#include "models.hpp"

#include <algorithm>
#include <chrono>
#include <optional>
#include <string>
#include <vector>

namespace tiewarp
{
    // Binary heap of pending events keyed by the full signature. In mode none
    // tied timestamps pop in insertion order.
    class PendingQueue
    {
    public:
        explicit PendingQueue(OrderingMode mode, std::size_t sequence_cap = default_sequence_cap)
            : m_mode(mode), m_cap(sequence_cap)
        {
        }

        void push(Event ev)
        {
            m_heap.push_back(Entry{std::move(ev), m_next_seq++});
            std::push_heap(m_heap.begin(), m_heap.end(), after());
        }

        // Empty optional signals end of simulation.
        std::optional<Event> pop()
        {
            if (m_heap.empty())
            {
                return std::nullopt;
            }
            std::pop_heap(m_heap.begin(), m_heap.end(), after());
            Event ev = std::move(m_heap.back().ev);
            m_heap.pop_back();
            return ev;
        }

        const Event *top() const noexcept { return m_heap.empty() ? nullptr : &m_heap.front().ev; }
        bool empty() const noexcept { return m_heap.empty(); }
        std::size_t size() const noexcept { return m_heap.size(); }
        std::uint64_t fallback_activations() const noexcept { return m_fallbacks; }

        std::strong_ordering compare(const Event &a, const Event &b)
        {
            if (m_mode == OrderingMode::none)
            {
                return compare_time(a.signature.timestamp, b.signature.timestamp);
            }
            return compare_events(a.signature, a.identity, b.signature, b.identity, m_mode, &m_fallbacks, m_cap);
        }

    private:
        struct Entry
        {
            Event ev;
            std::uint64_t seq;
        };

        // Heap predicate: true when `a` should pop after `b`.
        struct After
        {
            PendingQueue *q;

            bool operator()(const Entry &a, const Entry &b) const
            {
                auto c = q->compare(a.ev, b.ev);
                if (c != 0)
                {
                    return c > 0;
                }
                return a.seq > b.seq;
            }
        };

        After after() noexcept { return After{this}; }

        OrderingMode m_mode;
        std::size_t m_cap;
        std::vector<Entry> m_heap;
        std::uint64_t m_next_seq = 0;
        std::uint64_t m_fallbacks = 0;
    };

    // Single-worker reference scheduler. Commits events in signature order and
    // rejects any event that would land before the last committed one.
    template <SimModel Model, DrawSource Source = PhiloxSource>
    class SequentialKernel
    {
    public:
        SequentialKernel(const Model &model, RunConfig cfg, Source source = {})
            : m_model(model), m_cfg(cfg), m_source(std::move(source)), m_queue(cfg.mode, cfg.sequence_cap)
        {
        }

        void schedule(Event ev)
        {
            if (ev.dest_lp >= m_model.lp_count())
            {
                throw SimError(ErrorCode::ConfigError, "event addressed to unknown LP " + std::to_string(ev.dest_lp));
            }
            if (m_last && m_queue.compare(ev, *m_last) < 0)
            {
                throw SimError(ErrorCode::CausalityViolation,
                               "event " + format_signature(ev.signature) + " from LP " +
                                   std::to_string(ev.identity.source_lp) + " precedes already committed " +
                                   format_signature(m_last->signature) + " from LP " +
                                   std::to_string(m_last->identity.source_lp));
            }
            m_queue.push(std::move(ev));
        }

        std::optional<Event> next_event() { return m_queue.pop(); }

        Trace run()
        {
            const auto started = std::chrono::steady_clock::now();
            const auto n = m_model.lp_count();
            const auto policy = m_cfg.policy();

            m_lps.clear();
            m_lps.reserve(n);
            for (LpId lp = 0; lp < n; ++lp)
            {
                m_lps.emplace_back(m_cfg.global_seed, lp, m_source);
            }

            std::vector<Emission> outbox;
            for (LpId lp = 0; lp < n; ++lp)
            {
                auto &rt = m_lps[lp];
                outbox.clear();
                HandlerContext<Source> ctx(lp, n, 0.0, rt.model, outbox);
                m_model.initialize(rt.state, ctx);
                for (const auto &em : outbox)
                {
                    schedule(materialize(rt, lp, 0, nullptr, em, policy));
                }
            }

            Trace trace;
            trace.mode = m_cfg.mode;
            trace.global_seed = m_cfg.global_seed;

            while (auto next = next_event())
            {
                if (next->signature.timestamp > m_cfg.end_time)
                {
                    break;
                }
                m_last = std::move(next);
                const Event &ev = *m_last;
                trace.committed.push_back(to_trace_entry(ev, trace.committed.size()));

                auto &rt = m_lps[ev.dest_lp];
                outbox.clear();
                HandlerContext<Source> ctx(ev.dest_lp, n, ev.signature.timestamp, rt.model, outbox);
                m_model.handle(rt.state, ev, ctx);
                for (const auto &em : outbox)
                {
                    schedule(materialize(rt, ev.dest_lp, 0, &ev, em, policy));
                }
            }

            trace.final_states.reserve(n);
            for (const auto &rt : m_lps)
            {
                trace.final_states.push_back(rt.state);
            }
            trace.metrics.processed = trace.committed.size();
            trace.metrics.fallback_activations = m_queue.fallback_activations();
            trace.metrics.wall_time_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            return trace;
        }

    private:
        const Model &m_model;
        RunConfig m_cfg;
        Source m_source;
        PendingQueue m_queue;
        std::vector<LpRuntime<Source>> m_lps;
        std::optional<Event> m_last;
    };

    template <SimModel Model, DrawSource Source = PhiloxSource>
    Trace run_sequential(const Model &model, const RunConfig &cfg, Source source = {})
    {
        return SequentialKernel<Model, Source>(model, cfg, std::move(source)).run();
    }
}

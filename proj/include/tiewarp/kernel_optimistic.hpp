#pragma once

#include "event.hpp"
#include "models.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace tiewarp
{
    // Perturbs the physical delivery order of inter-PE messages. Signatures are
    // never touched. A zero seed disables the perturbation.
    struct ChaosConfig
    {
        std::uint64_t chaos_seed = 0;
        // Upper bound on how many receive passes a message may be held back.
        std::uint32_t max_delay = 4;
    };

    // One physical message. `uid` is unique per send and never reused, so an
    // anti-message names exactly the copy it cancels even when a re-executed
    // event reproduces an identical twin.
    struct Message
    {
        Event event;
        std::uint64_t uid = 0;
        bool anti = false;
        std::uint64_t seq = 0;
    };

    enum class CancelOutcome
    {
        annihilated_pending,
        triggered_rollback,
        annihilated_beyond_horizon,
        deferred,
    };

    namespace detail
    {
        // Total order used inside a PE: the event order of the active mode,
        // then arrival order (mode none only), then uid.
        struct MessageOrder
        {
            OrderingMode mode = OrderingMode::lex_sequence;
            std::size_t cap = default_sequence_cap;
            std::uint64_t *fallbacks = nullptr;

            std::strong_ordering key(const Event &a, const Event &b) const
            {
                if (mode == OrderingMode::none)
                {
                    return compare_time(a.signature.timestamp, b.signature.timestamp);
                }
                return compare_events(a.signature, a.identity, b.signature, b.identity, mode, fallbacks, cap);
            }

            bool operator()(const Message &a, const Message &b) const
            {
                if (auto c = key(a.event, b.event); c != 0)
                {
                    return c < 0;
                }
                if (mode == OrderingMode::none && a.seq != b.seq)
                {
                    return a.seq < b.seq;
                }
                return a.uid < b.uid;
            }
        };

        class EpochBarrier
        {
        public:
            explicit EpochBarrier(std::size_t parties) : m_parties(parties) {}

            template <typename F>
            bool arrive_and_wait(F &&completion)
            {
                std::unique_lock lock(m_mutex);
                if (m_aborted)
                {
                    return false;
                }
                const auto generation = m_generation;
                if (++m_arrived == m_parties)
                {
                    completion();
                    m_arrived = 0;
                    ++m_generation;
                    m_cv.notify_all();
                    return true;
                }
                m_cv.wait(lock, [&] { return m_generation != generation || m_aborted; });
                return !m_aborted;
            }

            void abort()
            {
                std::lock_guard lock(m_mutex);
                m_aborted = true;
                m_cv.notify_all();
            }

        private:
            std::mutex m_mutex;
            std::condition_variable m_cv;
            std::size_t m_parties;
            std::size_t m_arrived = 0;
            std::uint64_t m_generation = 0;
            bool m_aborted = false;
        };
    }

    // Lower bound on the order key of anything that can still be processed.
    // Empty means +infinity: nothing pending or in flight anywhere.
    using GvtEstimate = std::optional<Message>;

    // One processing element: its LPs, pending set, processed history with
    // state snapshots, and the bookkeeping for anti-messages. Not thread-safe;
    // exactly one worker drives it.
    template <SimModel Model, DrawSource Source = PhiloxSource>
    class PeRuntime
    {
    public:
        using RemoteSink = std::function<void(PeId, Message)>;

        struct SentRecord
        {
            std::uint64_t uid;
            PeId dest_pe;
            Event event;
        };

        struct ProcessedRecord
        {
            Message input;
            typename LpRuntime<Source>::Snapshot pre;
            std::vector<SentRecord> outputs;
        };

        PeRuntime(const Model &model, const RunConfig &cfg, PeId id, std::uint32_t pe_count, RemoteSink remote,
                  const Source &source = {})
            : m_model(model), m_cfg(cfg), m_id(id), m_pe_count(pe_count), m_remote(std::move(remote)),
              m_order{cfg.mode, cfg.sequence_cap, &m_metrics.fallback_activations}, m_pending(m_order)
        {
            const auto n = model.lp_count();
            for (LpId lp = id; lp < n; lp += pe_count)
            {
                m_lps.emplace_back(cfg.global_seed, lp, source);
            }
        }

        PeRuntime(const PeRuntime &) = delete;
        PeRuntime &operator=(const PeRuntime &) = delete;

        PeId id() const noexcept { return m_id; }
        PeId owner(LpId lp) const noexcept { return static_cast<PeId>(lp % m_pe_count); }
        LpRuntime<Source> &lp(LpId id) { return m_lps[id / m_pe_count]; }
        const LpRuntime<Source> &lp(LpId id) const { return m_lps[id / m_pe_count]; }

        // Seeds the initial events of every owned LP, in LP order.
        void initialize()
        {
            const auto n = m_model.lp_count();
            for (LpId lpid = m_id; lpid < n; lpid += m_pe_count)
            {
                auto &rt = lp(lpid);
                m_outbox.clear();
                HandlerContext<Source> ctx(lpid, n, 0.0, rt.model, m_outbox);
                m_model.initialize(rt.state, ctx);
                for (const auto &em : m_outbox)
                {
                    SentRecord s = make_sent(rt, lpid, nullptr, em);
                    deliver(s);
                }
            }
        }

        bool has_work() const noexcept { return !m_pending.empty(); }
        std::size_t pending_count() const noexcept { return m_pending.size(); }
        const Message *next_pending() const noexcept { return m_pending.empty() ? nullptr : &*m_pending.begin(); }
        std::size_t processed_count() const noexcept { return m_processed.size(); }
        const std::deque<ProcessedRecord> &processed() const noexcept { return m_processed; }

        const Message *local_clock() const noexcept
        {
            return m_processed.empty() ? nullptr : &m_processed.back().input;
        }

        // Positive event arrival. A straggler rolls back everything after it.
        void receive(Message msg)
        {
            if (auto it = m_orphan_antis.find(msg.uid); it != m_orphan_antis.end())
            {
                m_orphan_antis.erase(it);
                annihilated(msg.uid);
                return;
            }
            if (msg.event.signature.timestamp > m_cfg.end_time)
            {
                m_beyond.emplace(msg.uid, std::move(msg));
                return;
            }
            msg.seq = m_next_seq++;
            if (!m_processed.empty() && is_straggler(msg))
            {
                rollback(msg);
                // The rollback may have cancelled this very event (a local
                // output of an undone event).
                if (auto it = m_orphan_antis.find(msg.uid); it != m_orphan_antis.end())
                {
                    m_orphan_antis.erase(it);
                    annihilated(msg.uid);
                    return;
                }
            }
            insert_pending(std::move(msg));
        }

        CancelOutcome receive_anti(const Message &anti)
        {
            const auto uid = anti.uid;
            if (m_beyond.erase(uid) != 0)
            {
                annihilated(uid);
                return CancelOutcome::annihilated_beyond_horizon;
            }
            if (auto it = m_pending_index.find(uid); it != m_pending_index.end())
            {
                m_pending.erase(it->second);
                m_pending_index.erase(it);
                annihilated(uid);
                return CancelOutcome::annihilated_pending;
            }
            if (m_processed_uids.contains(uid))
            {
                auto pos = std::find_if(m_processed.begin(), m_processed.end(),
                                        [&](const ProcessedRecord &r) { return r.input.uid == uid; });
                std::size_t first = static_cast<std::size_t>(pos - m_processed.begin());
                if (m_cfg.mode == OrderingMode::none)
                {
                    // Everything sharing the timestamp goes too.
                    while (first > 0 &&
                           m_processed[first - 1].input.event.signature.timestamp == pos->input.event.signature.timestamp)
                    {
                        --first;
                    }
                }
                undo_from(first);
                auto pit = m_pending_index.find(uid);
                m_pending.erase(pit->second);
                m_pending_index.erase(pit);
                annihilated(uid);
                return CancelOutcome::triggered_rollback;
            }
            if (m_annihilated.contains(uid) || m_orphan_antis.contains(uid))
            {
                throw SimError(ErrorCode::UnmatchedAntiMessage,
                               "second anti-message for event " + std::to_string(anti.event.identity.source_lp) + "/" +
                                   std::to_string(anti.event.identity.serial));
            }
            // Positive twin still in flight.
            m_orphan_antis.emplace(uid, anti);
            return CancelOutcome::deferred;
        }

        // Processes the smallest pending event. Outputs are recorded before they
        // are delivered so a local straggler among them can undo this event.
        void process_next()
        {
            auto node = m_pending.extract(m_pending.begin());
            Message msg = std::move(node.value());
            m_pending_index.erase(msg.uid);

            const LpId dest = msg.event.dest_lp;
            auto &rt = lp(dest);
            ProcessedRecord rec{std::move(msg), rt.snapshot(), {}};

            m_outbox.clear();
            HandlerContext<Source> ctx(dest, m_model.lp_count(), rec.input.event.signature.timestamp, rt.model,
                                       m_outbox);
            m_model.handle(rt.state, rec.input.event, ctx);
            rec.outputs.reserve(m_outbox.size());
            for (const auto &em : m_outbox)
            {
                rec.outputs.push_back(make_sent(rt, dest, &rec.input.event, em));
            }

            m_processed_uids.insert(rec.input.uid);
            m_processed.push_back(std::move(rec));
            ++m_metrics.processed;

            const auto sends = m_processed.back().outputs;
            for (const auto &s : sends)
            {
                deliver(s);
            }
        }

        // Undoes every processed event ordered after `straggler`. Returns the
        // number of events undone.
        std::size_t rollback(const Message &straggler)
        {
            if (m_last_committed && m_order.key(straggler.event, m_last_committed->event) < 0)
            {
                throw SimError(ErrorCode::CausalityViolation,
                               "straggler " + format_signature(straggler.event.signature) +
                                   " precedes committed history at " +
                                   format_signature(m_last_committed->event.signature));
            }
            std::size_t first = m_processed.size();
            while (first > 0 && undo_needed(m_processed[first - 1].input, straggler))
            {
                --first;
            }
            return undo_from(first);
        }

        // Commits processed events strictly below `gvt` (all of them when gvt
        // is infinite). Returns the number committed.
        std::size_t fossil_collect(const GvtEstimate &gvt)
        {
            std::size_t count = 0;
            while (!m_processed.empty() && (!gvt || m_order.key(m_processed.front().input.event, gvt->event) < 0))
            {
                auto &rec = m_processed.front();
                m_committed.push_back(rec.input.event);
                m_processed_uids.erase(rec.input.uid);
                m_undo_counts.erase(rec.input.uid);
                m_last_committed = std::move(rec.input);
                m_processed.pop_front();
                ++count;
            }
            if (!gvt)
            {
                m_beyond.clear();
            }
            return count;
        }

        // Smallest pending event; empty when nothing is pending.
        GvtEstimate local_min() const
        {
            if (m_pending.empty())
            {
                return std::nullopt;
            }
            return *m_pending.begin();
        }

        void check_no_orphans() const
        {
            if (!m_orphan_antis.empty())
            {
                const auto &e = m_orphan_antis.begin()->second.event;
                throw SimError(ErrorCode::UnmatchedAntiMessage,
                               "anti-message for " + std::to_string(e.identity.source_lp) + "/" +
                                   std::to_string(e.identity.serial) + " never met its event");
            }
        }

        const detail::MessageOrder &order() const noexcept { return m_order; }
        const std::vector<Event> &committed() const noexcept { return m_committed; }
        const RunMetrics &metrics() const noexcept { return m_metrics; }

        void collect_states(std::vector<LpState> &out) const
        {
            for (std::size_t i = 0; i < m_lps.size(); ++i)
            {
                out[m_id + i * m_pe_count] = m_lps[i].state;
            }
        }

    private:
        bool is_straggler(const Message &msg) const
        {
            const Message &clock = m_processed.back().input;
            if (m_cfg.mode == OrderingMode::none)
            {
                return msg.event.signature.timestamp < clock.event.signature.timestamp;
            }
            return m_order(msg, clock);
        }

        bool undo_needed(const Message &processed, const Message &straggler) const
        {
            if (m_cfg.mode == OrderingMode::none)
            {
                // Timestamp-only time cannot separate ties, so all of them go.
                return processed.event.signature.timestamp >= straggler.event.signature.timestamp;
            }
            return m_order(straggler, processed);
        }

        std::size_t undo_from(std::size_t first)
        {
            const std::size_t count = m_processed.size() - first;
            if (count == 0)
            {
                return 0;
            }
            ++m_metrics.rollbacks;
            while (m_processed.size() > first)
            {
                ProcessedRecord rec = std::move(m_processed.back());
                m_processed.pop_back();
                m_processed_uids.erase(rec.input.uid);

                const auto undos = ++m_undo_counts[rec.input.uid];
                m_metrics.max_event_undos = std::max(m_metrics.max_event_undos, undos);
                if (undos > m_cfg.livelock_bound)
                {
                    throw SimError(ErrorCode::LivelockDetected,
                                   "event " + format_signature(rec.input.event.signature) + " rolled back more than " +
                                       std::to_string(m_cfg.livelock_bound) + " times");
                }
                lp(rec.input.event.dest_lp).restore(rec.pre);
                for (const auto &s : rec.outputs)
                {
                    send_anti(s);
                }
                ++m_metrics.events_undone;
                insert_pending(std::move(rec.input));
            }
            return count;
        }

        void insert_pending(Message msg)
        {
            const auto uid = msg.uid;
            auto [it, inserted] = m_pending.insert(std::move(msg));
            m_pending_index.emplace(uid, it);
        }

        void annihilated(std::uint64_t uid)
        {
            m_annihilated.insert(uid);
            ++m_metrics.annihilations;
        }

        SentRecord make_sent(LpRuntime<Source> &rt, LpId creator, const Event *parent, const Emission &em)
        {
            if (em.dest >= m_model.lp_count())
            {
                throw SimError(ErrorCode::ConfigError, "event addressed to unknown LP " + std::to_string(em.dest));
            }
            Event ev = materialize(rt, creator, m_id, parent, em, m_cfg.policy());
            const PeId dest_pe = owner(ev.dest_lp);
            return SentRecord{next_uid(), dest_pe, std::move(ev)};
        }

        std::uint64_t next_uid() noexcept { return (static_cast<std::uint64_t>(m_id) << 44) | m_uid_counter++; }

        void deliver(const SentRecord &s)
        {
            Message msg{s.event, s.uid, false, 0};
            if (s.dest_pe == m_id)
            {
                receive(std::move(msg));
            }
            else
            {
                m_remote(s.dest_pe, std::move(msg));
            }
        }

        void send_anti(const SentRecord &s)
        {
            ++m_metrics.anti_messages;
            Message anti{s.event, s.uid, true, 0};
            anti.event.anti = true;
            if (s.dest_pe == m_id)
            {
                // A local output of an undone event is never itself processed:
                // it is ordered after its parent, so it was undone first.
                if (m_processed_uids.contains(s.uid))
                {
                    throw std::logic_error("local output still processed while undoing its parent");
                }
                receive_anti(anti);
            }
            else
            {
                m_remote(s.dest_pe, std::move(anti));
            }
        }

        const Model &m_model;
        RunConfig m_cfg;
        PeId m_id;
        std::uint32_t m_pe_count;
        RemoteSink m_remote;
        RunMetrics m_metrics;
        detail::MessageOrder m_order;

        std::vector<LpRuntime<Source>> m_lps;
        std::set<Message, detail::MessageOrder> m_pending;
        std::unordered_map<std::uint64_t, typename std::set<Message, detail::MessageOrder>::iterator> m_pending_index;
        std::deque<ProcessedRecord> m_processed;
        std::unordered_set<std::uint64_t> m_processed_uids;
        std::unordered_map<std::uint64_t, Message> m_orphan_antis;
        std::unordered_map<std::uint64_t, Message> m_beyond;
        std::unordered_set<std::uint64_t> m_annihilated;
        std::unordered_map<std::uint64_t, std::uint64_t> m_undo_counts;
        std::vector<Event> m_committed;
        std::optional<Message> m_last_committed;
        std::vector<Emission> m_outbox;
        std::uint64_t m_next_seq = 0;
        std::uint64_t m_uid_counter = 0;
    };

    namespace detail
    {
        // Appends all[first, last) keeping the given order except that every
        // event follows its parent when both are in the range.
        inline void append_causal(std::vector<Event> &all, std::size_t first, std::size_t last, std::vector<Event> &out)
        {
            const std::size_t n = last - first;
            std::unordered_map<EventRef, std::size_t, EventRefHash> index;
            index.reserve(n);
            for (std::size_t i = 0; i < n; ++i)
            {
                index.emplace(ref_of(all[first + i].identity), i);
            }
            std::vector<std::vector<std::size_t>> children(n);
            std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
            for (std::size_t i = 0; i < n; ++i)
            {
                const Event &e = all[first + i];
                const auto it = e.has_parent ? index.find(e.parent) : index.end();
                if (it == index.end())
                {
                    ready.push(i);
                }
                else
                {
                    children[it->second].push_back(i);
                }
            }
            std::size_t emitted = 0;
            while (!ready.empty())
            {
                const std::size_t i = ready.top();
                ready.pop();
                out.push_back(std::move(all[first + i]));
                ++emitted;
                for (std::size_t c : children[i])
                {
                    ready.push(c);
                }
            }
            if (emitted != n)
            {
                throw std::logic_error("cyclic parent links among committed events");
            }
        }
    }

    // Minimum over per-PE lower bounds; empty inputs are +infinity.
    inline GvtEstimate compute_gvt(std::span<const GvtEstimate> local_mins, const detail::MessageOrder &order)
    {
        GvtEstimate best;
        for (const auto &m : local_mins)
        {
            if (m && (!best || order.key(m->event, best->event) < 0))
            {
                best = m;
            }
        }
        return best;
    }

    // Merges per-PE commit lists into one trace order. Mode none has no global
    // order for ties, so those fall back to PE order then local commit order.
    inline std::vector<Event> merge_commits(std::vector<std::vector<Event>> per_pe, OrderingMode mode,
                                            std::size_t cap = default_sequence_cap)
    {
        std::vector<Event> all;
        for (auto &list : per_pe)
        {
            std::move(list.begin(), list.end(), std::back_inserter(all));
        }
        if (mode == OrderingMode::none)
        {
            std::stable_sort(all.begin(), all.end(), [](const Event &a, const Event &b) {
                return a.signature.timestamp < b.signature.timestamp;
            });
            std::vector<Event> out;
            out.reserve(all.size());
            for (std::size_t first = 0; first < all.size();)
            {
                std::size_t last = first;
                while (last < all.size() && all[last].signature.timestamp == all[first].signature.timestamp)
                {
                    ++last;
                }
                detail::append_causal(all, first, last, out);
                first = last;
            }
            return out;
        }
        else
        {
            std::stable_sort(all.begin(), all.end(), [&](const Event &a, const Event &b) {
                return compare_events(a.signature, a.identity, b.signature, b.identity, mode, nullptr, cap) < 0;
            });
        }
        return all;
    }

    // Multi-worker Time Warp: one thread per PE, message passing through
    // mailboxes, stop-and-reduce GVT every `gvt_interval` processed events.
    template <SimModel Model, DrawSource Source = PhiloxSource>
    class OptimisticKernel
    {
    public:
        OptimisticKernel(const Model &model, RunConfig cfg, std::uint32_t workers, ChaosConfig chaos = {},
                         Source source = {})
            : m_model(model), m_cfg(cfg), m_workers(workers), m_chaos(chaos), m_source(std::move(source)),
              m_barrier(workers)
        {
            if (workers == 0)
            {
                throw SimError(ErrorCode::ConfigError, "at least one worker is required");
            }
            if (cfg.gvt_interval == 0)
            {
                throw SimError(ErrorCode::ConfigError, "gvt interval must be positive");
            }
            if (cfg.optimism_window == 0)
            {
                throw SimError(ErrorCode::ConfigError, "optimism window must be positive");
            }
        }

        Trace run()
        {
            const auto started = std::chrono::steady_clock::now();

            m_mailboxes.clear();
            m_workers_state.clear();
            for (std::uint32_t i = 0; i < m_workers; ++i)
            {
                m_mailboxes.push_back(std::make_unique<Mailbox>());
            }
            for (PeId i = 0; i < m_workers; ++i)
            {
                auto w = std::make_unique<Worker>();
                w->pe = std::make_unique<PeRuntime<Model, Source>>(
                    m_model, m_cfg, i, m_workers, [this](PeId dest, Message msg) { post(dest, std::move(msg)); },
                    m_source);
                w->rng.seed(splitmix64(m_chaos.chaos_seed ^ (0x5bd1e995ULL * (i + 1))));
                m_workers_state.push_back(std::move(w));
            }
            for (auto &w : m_workers_state)
            {
                w->pe->initialize();
            }

            m_local_mins.assign(m_workers, std::nullopt);
            m_quiet.assign(m_workers, 0);
            m_gvt.reset();
            m_stalled = false;
            m_gvt_requested = false;
            m_aborted = false;
            m_error = nullptr;

            std::vector<std::thread> threads;
            threads.reserve(m_workers);
            for (std::uint32_t i = 0; i < m_workers; ++i)
            {
                threads.emplace_back([this, i] { worker_main(i); });
            }
            for (auto &t : threads)
            {
                t.join();
            }
            if (m_error)
            {
                std::rethrow_exception(m_error);
            }

            Trace trace;
            trace.mode = m_cfg.mode;
            trace.global_seed = m_cfg.global_seed;
            std::vector<std::vector<Event>> per_pe;
            trace.final_states.resize(m_model.lp_count());
            for (auto &w : m_workers_state)
            {
                per_pe.push_back(w->pe->committed());
                w->pe->collect_states(trace.final_states);
                trace.metrics += w->pe->metrics();
            }
            auto merged = merge_commits(std::move(per_pe), m_cfg.mode, m_cfg.sequence_cap);
            trace.committed.reserve(merged.size());
            for (std::size_t i = 0; i < merged.size(); ++i)
            {
                trace.committed.push_back(to_trace_entry(merged[i], i));
            }
            trace.metrics.gvt_rounds = m_gvt_rounds;
            trace.metrics.wall_time_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            return trace;
        }

    private:
        struct Mailbox
        {
            std::mutex mutex;
            std::vector<Message> items;
        };

        struct Held
        {
            std::uint32_t ticks;
            Message msg;
        };

        struct Worker
        {
            std::unique_ptr<PeRuntime<Model, Source>> pe;
            std::vector<Held> limbo;
            std::mt19937_64 rng;
            std::vector<Message> inbox;
        };

        void post(PeId dest, Message msg)
        {
            auto &box = *m_mailboxes[dest];
            std::lock_guard lock(box.mutex);
            box.items.push_back(std::move(msg));
        }

        // Moves mailbox contents through the chaos layer and delivers whatever
        // is due this pass.
        void pump(std::uint32_t i)
        {
            auto &w = *m_workers_state[i];
            {
                auto &box = *m_mailboxes[i];
                std::lock_guard lock(box.mutex);
                w.inbox.swap(box.items);
            }
            const bool chaos = m_chaos.chaos_seed != 0;
            for (auto &msg : w.inbox)
            {
                const std::uint32_t ticks =
                    chaos && m_chaos.max_delay > 0
                        ? static_cast<std::uint32_t>(w.rng() % (static_cast<std::uint64_t>(m_chaos.max_delay) + 1))
                        : 0;
                w.limbo.push_back(Held{ticks, std::move(msg)});
            }
            w.inbox.clear();
            if (w.limbo.empty())
            {
                return;
            }
            if (chaos)
            {
                std::shuffle(w.limbo.begin(), w.limbo.end(), w.rng);
            }
            std::vector<Held> due;
            std::vector<Held> keep;
            for (auto &h : w.limbo)
            {
                if (h.ticks == 0)
                {
                    due.push_back(std::move(h));
                }
                else
                {
                    --h.ticks;
                    keep.push_back(std::move(h));
                }
            }
            w.limbo = std::move(keep);
            for (auto &h : due)
            {
                if (h.msg.anti)
                {
                    w.pe->receive_anti(h.msg);
                }
                else
                {
                    w.pe->receive(std::move(h.msg));
                }
            }
        }

        GvtEstimate worker_local_min(std::uint32_t i)
        {
            auto &w = *m_workers_state[i];
            const auto &order = w.pe->order();
            std::vector<GvtEstimate> candidates;
            candidates.push_back(w.pe->local_min());
            auto consider = [&](const Message &m) {
                // Beyond-horizon positives are never processed; anti-messages
                // can still force a rollback.
                if (!m.anti && m.event.signature.timestamp > m_cfg.end_time)
                {
                    return;
                }
                candidates.emplace_back(m);
            };
            for (const auto &h : w.limbo)
            {
                consider(h.msg);
            }
            {
                auto &box = *m_mailboxes[i];
                std::lock_guard lock(box.mutex);
                for (const auto &m : box.items)
                {
                    consider(m);
                }
            }
            return compute_gvt(candidates, order);
        }

        bool is_quiet(std::uint32_t i)
        {
            auto &w = *m_workers_state[i];
            if (!w.limbo.empty())
            {
                return false;
            }
            {
                auto &box = *m_mailboxes[i];
                std::lock_guard lock(box.mutex);
                if (!box.items.empty())
                {
                    return false;
                }
            }
            return !w.pe->has_work() || throttled(w);
        }

        // Mode none commits a whole timestamp at once, so events at the GVT
        // timestamp are never held back.
        bool throttled(const Worker &w) const
        {
            if (w.pe->processed_count() < m_cfg.optimism_window)
            {
                return false;
            }
            if (m_cfg.mode != OrderingMode::none || !m_gvt)
            {
                return true;
            }
            const Message *next = w.pe->next_pending();
            return next == nullptr || next->event.signature.timestamp > m_gvt->event.signature.timestamp;
        }

        // Returns false once the run is over (termination or abort).
        bool gvt_round(std::uint32_t i)
        {
            if (!m_barrier.arrive_and_wait([] {}))
            {
                return false;
            }
            m_local_mins[i] = worker_local_min(i);
            m_quiet[i] = is_quiet(i);
            if (!m_barrier.arrive_and_wait([this] {
                    auto gvt = compute_gvt(m_local_mins, m_workers_state.front()->pe->order());
                    // The holder of the GVT event is never quiet; a quiet round
                    // at an unchanged GVT would repeat forever.
                    m_stalled = gvt && m_gvt && gvt->uid == m_gvt->uid && gvt->anti == m_gvt->anti &&
                                std::all_of(m_quiet.begin(), m_quiet.end(), [](char q) { return q != 0; });
                    m_gvt = std::move(gvt);
                    m_gvt_requested = false;
                    ++m_gvt_rounds;
                }))
            {
                return false;
            }
            if (m_stalled)
            {
                if (i == 0)
                {
                    throw std::logic_error("optimistic kernel stalled at " +
                                           format_signature(m_gvt->event.signature));
                }
                return false;
            }
            auto &pe = *m_workers_state[i]->pe;
            pe.fossil_collect(m_gvt);
            if (!m_gvt)
            {
                pe.check_no_orphans();
                return false;
            }
            return true;
        }

        void worker_main(std::uint32_t i)
        {
            try
            {
                auto &w = *m_workers_state[i];
                std::uint64_t since_gvt = 0;
                std::uint32_t idle = 0;
                while (!m_aborted.load(std::memory_order_relaxed))
                {
                    if (m_gvt_requested.load(std::memory_order_acquire))
                    {
                        if (!gvt_round(i))
                        {
                            return;
                        }
                        since_gvt = 0;
                        continue;
                    }
                    pump(i);
                    const bool held = throttled(w);
                    if (w.pe->has_work() && !held)
                    {
                        w.pe->process_next();
                        idle = 0;
                        if (++since_gvt >= m_cfg.gvt_interval)
                        {
                            m_gvt_requested.store(true, std::memory_order_release);
                        }
                    }
                    else if (w.limbo.empty() || held)
                    {
                        if (++idle >= idle_spins_before_gvt)
                        {
                            idle = 0;
                            m_gvt_requested.store(true, std::memory_order_release);
                        }
                        std::this_thread::yield();
                    }
                }
            }
            catch (...)
            {
                {
                    std::lock_guard lock(m_error_mutex);
                    if (!m_error)
                    {
                        m_error = std::current_exception();
                    }
                }
                m_aborted = true;
                m_barrier.abort();
            }
        }

        static constexpr std::uint32_t idle_spins_before_gvt = 64;

        const Model &m_model;
        RunConfig m_cfg;
        std::uint32_t m_workers;
        ChaosConfig m_chaos;
        Source m_source;

        std::vector<std::unique_ptr<Mailbox>> m_mailboxes;
        std::vector<std::unique_ptr<Worker>> m_workers_state;
        detail::EpochBarrier m_barrier;
        std::vector<GvtEstimate> m_local_mins;
        std::vector<char> m_quiet;
        GvtEstimate m_gvt;
        bool m_stalled = false;
        std::atomic<bool> m_gvt_requested{false};
        std::atomic<bool> m_aborted{false};
        std::uint64_t m_gvt_rounds = 0;
        std::mutex m_error_mutex;
        std::exception_ptr m_error;
    };

    template <SimModel Model, DrawSource Source = PhiloxSource>
    Trace run_optimistic(const Model &model, const RunConfig &cfg, std::uint32_t workers, ChaosConfig chaos = {},
                         Source source = {})
    {
        return OptimisticKernel<Model, Source>(model, cfg, workers, chaos, std::move(source)).run();
    }
}

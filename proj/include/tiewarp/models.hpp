#pragma once

#include "event.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace tiewarp::models
{
    inline double mean_of(double a, double b) noexcept { return (a + b) / 2.0; }

    // Offset from `now` that every model uses for the first event of each LP.
    inline constexpr VirtualTime initial_timestamp = 1.0;

    // ---- PHOLD ----

    struct PholdConfig
    {
        std::uint64_t n_lps = 16;
        double remote_prob = 0.1;
        double mean_offset = 1.0;
        std::uint32_t initial_events = 1;
    };

    // Classic hold model: each received event schedules exactly one new event
    // an exponential (strictly positive) delay later. LP state never changes.
    class Phold
    {
    public:
        explicit Phold(PholdConfig cfg) : m_cfg(cfg)
        {
            if (cfg.n_lps == 0 || !(cfg.mean_offset > 0.0) || cfg.remote_prob < 0.0 || cfg.remote_prob > 1.0)
            {
                throw SimError(ErrorCode::ConfigError, "invalid PHOLD configuration");
            }
        }

        std::uint64_t lp_count() const noexcept { return m_cfg.n_lps; }
        const PholdConfig &config() const noexcept { return m_cfg; }

        template <typename Ctx>
        void initialize(LpState &, Ctx &ctx) const
        {
            for (std::uint32_t i = 0; i < m_cfg.initial_events; ++i)
            {
                ctx.send(ctx.self(), ctx.exponential(m_cfg.mean_offset), Payload{});
            }
        }

        template <typename Ctx>
        void handle(LpState &, const Event &, Ctx &ctx) const
        {
            const bool remote = ctx.uniform() < m_cfg.remote_prob;
            const LpId dest = remote ? ctx.random_other_lp() : ctx.self();
            ctx.send(dest, ctx.exponential(m_cfg.mean_offset), Payload{});
        }

    private:
        PholdConfig m_cfg;
    };

    // ---- Event-Ties ----

    struct EventTiesConfig
    {
        std::uint64_t n_lps = 256;
        double remote_threshold = 0.5;
        // Events per zero-offset chain, counting the regular-offset head.
        std::uint32_t chain_length = 2;
        // Remote destination taken from the LP's running mean instead of a draw.
        bool coupled = false;
    };

    // Each received value is folded into a running mean of means, which is
    // order-sensitive, so any change in the order of tied events shows up in
    // the final state. Chains of `chain_length` simultaneous events per LP per
    // integer timestep.
    class EventTies
    {
    public:
        explicit EventTies(EventTiesConfig cfg) : m_cfg(cfg)
        {
            if (cfg.n_lps == 0 || cfg.chain_length == 0 || cfg.remote_threshold < 0.0 || cfg.remote_threshold > 1.0)
            {
                throw SimError(ErrorCode::ConfigError, "invalid Event-Ties configuration");
            }
        }

        std::uint64_t lp_count() const noexcept { return m_cfg.n_lps; }
        const EventTiesConfig &config() const noexcept { return m_cfg; }

        template <typename Ctx>
        void initialize(LpState &, Ctx &ctx) const
        {
            Payload p;
            p.val = static_cast<std::int32_t>(ctx.uniform_int(101));
            ctx.send(ctx.self(), initial_timestamp, p);
        }

        template <typename Ctx>
        void handle(LpState &state, const Event &ev, Ctx &ctx) const
        {
            state.mean_val = mean_of(state.mean_val, ev.payload.val);

            Payload next;
            next.val = static_cast<std::int32_t>(ctx.uniform_int(101));
            const LpId dest = pick_destination(state, ctx);
            const bool chain_done = ev.zero_offset_depth + 1 >= m_cfg.chain_length;
            ctx.send(dest, chain_done ? 1.0 : 0.0, next);
        }

        // Closed-form committed event count for a run ending at `end_time`.
        std::uint64_t expected_net_events(VirtualTime end_time) const noexcept
        {
            const auto steps = end_time < initial_timestamp
                                   ? 0
                                   : static_cast<std::uint64_t>(std::floor(end_time - initial_timestamp)) + 1;
            return m_cfg.n_lps * steps * m_cfg.chain_length;
        }

    private:
        template <typename Ctx>
        LpId pick_destination(const LpState &state, Ctx &ctx) const
        {
            if (!(ctx.uniform() < m_cfg.remote_threshold))
            {
                return ctx.self();
            }
            if (m_cfg.coupled)
            {
                return static_cast<LpId>(std::floor(state.mean_val)) % m_cfg.n_lps;
            }
            return ctx.random_other_lp();
        }

        EventTiesConfig m_cfg;
    };

    // ---- Event-Ties-Stress ----

    struct StressConfig
    {
        std::uint64_t n_lps = 64;
        double remote_threshold = 0.1;
        // Root sits at level 0, leaves at level `height`.
        std::uint32_t height = 2;
        std::uint32_t arity = 3;
    };

    // Nodes in one zero-offset tree: 1 + c + c^2 + ... + c^h.
    inline std::uint64_t tree_node_count(std::uint32_t height, std::uint32_t arity) noexcept
    {
        std::uint64_t total = 0;
        std::uint64_t level_width = 1;
        for (std::uint32_t level = 0; level <= height; ++level)
        {
            total += level_width;
            level_width *= arity;
        }
        return total;
    }

    // Every event below the leaf level fans out into `arity` zero-offset
    // children. Only the all-first-child leaf (descendant_sum == 0) seeds the
    // next tree one time unit later, so each LP keeps one tree per timestep.
    class EventTiesStress
    {
    public:
        explicit EventTiesStress(StressConfig cfg) : m_cfg(cfg)
        {
            if (cfg.n_lps == 0 || cfg.arity == 0 || cfg.remote_threshold < 0.0 || cfg.remote_threshold > 1.0)
            {
                throw SimError(ErrorCode::ConfigError, "invalid Event-Ties-Stress configuration");
            }
        }

        std::uint64_t lp_count() const noexcept { return m_cfg.n_lps; }
        const StressConfig &config() const noexcept { return m_cfg; }

        template <typename Ctx>
        void initialize(LpState &, Ctx &ctx) const
        {
            Payload p;
            p.val = static_cast<std::int32_t>(ctx.uniform_int(101));
            ctx.send(ctx.self(), initial_timestamp, p);
        }

        template <typename Ctx>
        void handle(LpState &state, const Event &ev, Ctx &ctx) const
        {
            state.mean_val = mean_of(state.mean_val, ev.payload.val);

            if (ev.payload.level < m_cfg.height)
            {
                for (std::uint32_t i = 0; i < m_cfg.arity; ++i)
                {
                    Payload child;
                    child.val = static_cast<std::int32_t>(ctx.uniform_int(101));
                    child.level = ev.payload.level + 1;
                    child.descendant_sum = ev.payload.descendant_sum + i;
                    ctx.send(pick_destination(ctx), 0.0, child);
                }
                return;
            }
            if (ev.payload.descendant_sum == 0)
            {
                Payload root;
                root.val = static_cast<std::int32_t>(ctx.uniform_int(101));
                ctx.send(pick_destination(ctx), 1.0, root);
            }
        }

        std::uint64_t expected_net_events(VirtualTime end_time) const noexcept
        {
            const auto steps = end_time < initial_timestamp
                                   ? 0
                                   : static_cast<std::uint64_t>(std::floor(end_time - initial_timestamp)) + 1;
            return m_cfg.n_lps * steps * tree_node_count(m_cfg.height, m_cfg.arity);
        }

    private:
        template <typename Ctx>
        LpId pick_destination(Ctx &ctx) const
        {
            return ctx.uniform() < m_cfg.remote_threshold ? ctx.random_other_lp() : ctx.self();
        }

        StressConfig m_cfg;
    };

    // ---- Tied chains ----

    // One LP per chain. Each LP seeds one event at t=1 and extends it into a
    // zero-offset chain of the configured length on itself. With chains {3, 2}
    // this is the A, A', A'' / B, B' scenario used to contrast the ordering modes.
    class TiedChains
    {
    public:
        explicit TiedChains(std::vector<std::uint32_t> chain_lengths) : m_lengths(std::move(chain_lengths))
        {
            if (m_lengths.empty())
            {
                throw SimError(ErrorCode::ConfigError, "tied chains need at least one chain");
            }
            for (auto len : m_lengths)
            {
                if (len == 0)
                {
                    throw SimError(ErrorCode::ConfigError, "chain length must be at least one");
                }
            }
        }

        std::uint64_t lp_count() const noexcept { return m_lengths.size(); }

        template <typename Ctx>
        void initialize(LpState &, Ctx &ctx) const
        {
            ctx.send(ctx.self(), initial_timestamp, Payload{});
        }

        template <typename Ctx>
        void handle(LpState &state, const Event &ev, Ctx &ctx) const
        {
            state.mean_val += 1.0;
            if (ev.zero_offset_depth + 1 < m_lengths[ctx.self()])
            {
                ctx.send(ctx.self(), 0.0, Payload{});
            }
        }

    private:
        std::vector<std::uint32_t> m_lengths;
    };

    static_assert(SimModel<Phold>);
    static_assert(SimModel<EventTies>);
    static_assert(SimModel<EventTiesStress>);
    static_assert(SimModel<TiedChains>);
}

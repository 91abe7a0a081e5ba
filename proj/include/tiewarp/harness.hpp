#pragma once

#include "kernel_optimistic.hpp"
#include "kernel_seq.hpp"
#include "models.hpp"
#include "trace_io.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tiewarp::harness
{
    inline constexpr std::string_view summary_schema = "tiewarp.summary/1";
    inline constexpr std::string_view report_schema = "tiewarp.report/1";

    enum class ModelKind
    {
        phold,
        event_ties,
        event_ties_stress,
    };

    inline constexpr std::string_view to_string(ModelKind m) noexcept
    {
        switch (m)
        {
        case ModelKind::phold:
            return "phold";
        case ModelKind::event_ties:
            return "event-ties";
        case ModelKind::event_ties_stress:
            return "event-ties-stress";
        }
        return "unknown";
    }

    inline std::optional<ModelKind> parse_model_kind(std::string_view text) noexcept
    {
        for (auto m : {ModelKind::phold, ModelKind::event_ties, ModelKind::event_ties_stress})
        {
            if (to_string(m) == text)
            {
                return m;
            }
        }
        return std::nullopt;
    }

    enum class KernelKind
    {
        sequential,
        optimistic,
    };

    inline constexpr std::string_view to_string(KernelKind k) noexcept
    {
        return k == KernelKind::sequential ? "sequential" : "optimistic";
    }

    // Everything that determines a run's trace, plus where to write it.
    struct RunSpec
    {
        ModelKind model = ModelKind::event_ties;
        std::uint64_t lps = 256;
        double remote_prob = 0.5;
        double mean_offset = 1.0;
        std::uint32_t initial_events = 1;
        std::uint32_t chain = 2;
        std::uint32_t height = 2;
        std::uint32_t arity = 3;
        bool coupled = false;
        RunConfig run;
        std::uint32_t workers = 1;
        ChaosConfig chaos;
        // Use the Time Warp kernel even with a single worker.
        bool force_optimistic = false;
        std::string trace_out;
        std::string summary_out;
    };

    inline nlohmann::json to_json(const RunSpec &s)
    {
        return {
            {"model", to_string(s.model)},
            {"mode", to_string(s.run.mode)},
            {"lps", s.lps},
            {"remote_prob", s.remote_prob},
            {"mean_offset", s.mean_offset},
            {"initial_events", s.initial_events},
            {"chain", s.chain},
            {"height", s.height},
            {"arity", s.arity},
            {"coupled", s.coupled},
            {"end", s.run.end_time},
            {"seed", s.run.global_seed},
            {"seq_cap", s.run.sequence_cap},
            {"naive_zero_offset", s.run.allow_naive_zero_offset},
            {"gvt_interval", s.run.gvt_interval},
            {"livelock_bound", s.run.livelock_bound},
            {"optimism_window", s.run.optimism_window},
            {"workers", s.workers},
            {"chaos_seed", s.chaos.chaos_seed},
            {"max_delay", s.chaos.max_delay},
        };
    }

    // Builds the configured model and hands it to `f`.
    template <typename F>
    decltype(auto) with_model(const RunSpec &spec, F &&f)
    {
        switch (spec.model)
        {
        case ModelKind::phold:
        {
            const models::Phold m({spec.lps, spec.remote_prob, spec.mean_offset, spec.initial_events});
            return f(m);
        }
        case ModelKind::event_ties:
        {
            const models::EventTies m({spec.lps, spec.remote_prob, spec.chain, spec.coupled});
            return f(m);
        }
        case ModelKind::event_ties_stress:
        {
            const models::EventTiesStress m({spec.lps, spec.remote_prob, spec.height, spec.arity});
            return f(m);
        }
        }
        throw SimError(ErrorCode::ConfigError, "unknown model");
    }

    struct RunOutcome
    {
        Trace trace;
        std::string digest;
        KernelKind kernel = KernelKind::sequential;
    };

    inline KernelKind default_kernel(const RunSpec &spec) noexcept
    {
        return spec.workers <= 1 && !spec.force_optimistic ? KernelKind::sequential : KernelKind::optimistic;
    }

    inline RunOutcome execute(const RunSpec &spec, std::optional<KernelKind> kernel = std::nullopt)
    {
        const KernelKind kind = kernel.value_or(default_kernel(spec));
        RunOutcome out;
        out.kernel = kind;
        out.trace = with_model(spec, [&](const auto &model) {
            if (kind == KernelKind::sequential)
            {
                return run_sequential(model, spec.run);
            }
            return run_optimistic(model, spec.run, std::max<std::uint32_t>(spec.workers, 1), spec.chaos);
        });
        out.digest = trace_digest(out.trace);
        return out;
    }

    inline nlohmann::json to_json(const RunMetrics &m)
    {
        return {
            {"processed", m.processed},
            {"rollbacks", m.rollbacks},
            {"events_undone", m.events_undone},
            {"anti_messages", m.anti_messages},
            {"annihilations", m.annihilations},
            {"gvt_rounds", m.gvt_rounds},
            {"fallback_activations", m.fallback_activations},
            {"max_event_undos", m.max_event_undos},
            {"wall_time_s", m.wall_time_s},
        };
    }

    inline nlohmann::json summary_json(const RunSpec &spec, const RunOutcome &out)
    {
        nlohmann::json finals = nlohmann::json::array();
        for (const auto &s : out.trace.final_states)
        {
            finals.push_back(s.mean_val);
        }
        return {
            {"schema", summary_schema},
            {"generator", {{"name", generator_name}, {"version", generator_version}}},
            {"spec", to_json(spec)},
            {"kernel", to_string(out.kernel)},
            {"net_events", out.trace.net_event_count()},
            {"final_values", std::move(finals)},
            {"digest", out.digest},
            {"metrics", to_json(out.trace.metrics)},
        };
    }

    // ---- determinism ----

    struct DeterminismCell
    {
        std::uint32_t workers = 1;
        std::uint64_t chaos_seed = 0;
        std::uint32_t repeat = 0;
        std::string digest;
        std::uint64_t net_events = 0;
        // Error code name when the run aborted.
        std::string error;
    };

    struct DeterminismReport
    {
        OrderingMode mode = OrderingMode::lex_sequence;
        std::string reference_digest;
        std::uint64_t reference_net_events = 0;
        std::vector<DeterminismCell> cells;
        bool all_equal = true;
        bool net_events_equal = true;
        bool livelock = false;
        // PASS / FAIL when ties are ordered; DIVERGED / LIVELOCK / IDENTICAL for mode none.
        std::string verdict;
        double wall_time_s = 0.0;

        bool pass() const noexcept { return verdict == "PASS"; }
    };

    // Sees the reference trace (null cell) and then every completed cell's trace.
    using TraceObserver = std::function<void(const DeterminismCell *, const Trace &)>;

    // Runs the sequential reference and then the optimistic kernel over every
    // (workers, chaos seed, repeat) cell, comparing digests to the reference.
    inline DeterminismReport verify_determinism(RunSpec spec, std::span<const std::uint32_t> workers,
                                                std::span<const std::uint64_t> chaos_seeds, std::uint32_t repeats,
                                                const TraceObserver &observe = {})
    {
        const auto started = std::chrono::steady_clock::now();
        DeterminismReport report;
        report.mode = spec.run.mode;

        const auto reference = execute(spec, KernelKind::sequential);
        report.reference_digest = reference.digest;
        report.reference_net_events = reference.trace.net_event_count();
        if (observe)
        {
            observe(nullptr, reference.trace);
        }

        for (auto w : workers)
        {
            for (auto cs : chaos_seeds)
            {
                for (std::uint32_t r = 0; r < repeats; ++r)
                {
                    DeterminismCell cell{w, cs, r, {}, 0, {}};
                    RunSpec cell_spec = spec;
                    cell_spec.workers = w;
                    cell_spec.chaos.chaos_seed = cs;
                    try
                    {
                        auto out = execute(cell_spec, KernelKind::optimistic);
                        cell.digest = out.digest;
                        cell.net_events = out.trace.net_event_count();
                        report.all_equal = report.all_equal && cell.digest == report.reference_digest;
                        report.net_events_equal =
                            report.net_events_equal && cell.net_events == report.reference_net_events;
                        if (observe)
                        {
                            observe(&cell, out.trace);
                        }
                    }
                    catch (const SimError &e)
                    {
                        cell.error = std::string(tiewarp::to_string(e.code()));
                        report.all_equal = false;
                        report.livelock = report.livelock || e.code() == ErrorCode::LivelockDetected;
                    }
                    report.cells.push_back(std::move(cell));
                }
            }
        }

        if (spec.run.mode != OrderingMode::none)
        {
            report.verdict = report.all_equal ? "PASS" : "FAIL";
        }
        else if (report.livelock)
        {
            report.verdict = "LIVELOCK";
        }
        else
        {
            report.verdict = report.all_equal ? "IDENTICAL" : "DIVERGED";
        }
        report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        return report;
    }

    inline nlohmann::json to_json(const DeterminismReport &r)
    {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto &c : r.cells)
        {
            cells.push_back({{"workers", c.workers},
                             {"chaos_seed", c.chaos_seed},
                             {"repeat", c.repeat},
                             {"digest", c.digest},
                             {"net_events", c.net_events},
                             {"error", c.error}});
        }
        return {{"schema", report_schema},
                {"kind", "determinism"},
                {"mode", to_string(r.mode)},
                {"reference_digest", r.reference_digest},
                {"reference_net_events", r.reference_net_events},
                {"all_equal", r.all_equal},
                {"net_events_equal", r.net_events_equal},
                {"livelock", r.livelock},
                {"verdict", r.verdict},
                {"wall_time_s", r.wall_time_s},
                {"cells", std::move(cells)}};
    }

    // ---- fairness ----

    struct FairnessReport
    {
        std::string pair;
        OrderingMode mode = OrderingMode::lex_sequence;
        std::uint64_t samples = 0;
        double p_hat = 0.0;
        double expected = 0.0;
        double half_width = 0.0;
        bool pass = false;
    };

    inline double factorial(unsigned n) noexcept
    {
        double f = 1.0;
        for (unsigned i = 2; i <= n; ++i)
        {
            f *= i;
        }
        return f;
    }

    // Probability that the depth-d zero-offset descendant of A is committed
    // before an independent tied event B. Additive mode compares a sum of d+1
    // uniforms against one: P(U_1 + ... + U_{d+1} < U) = 1/(d+2)!.
    inline double expected_precedence(OrderingMode mode, std::uint32_t depth)
    {
        switch (mode)
        {
        case OrderingMode::unbiased_single:
        case OrderingMode::lex_sequence:
            return 0.5;
        case OrderingMode::additive:
            return 1.0 / factorial(depth + 2);
        default:
            throw SimError(ErrorCode::ConfigError, "fairness is measured for unbiased-single, additive and lex");
        }
    }

    inline std::string pair_label(std::uint32_t depth)
    {
        return "A" + std::string(depth, '\'') + "-vs-B";
    }

    // Index of the event (lp, serial) in the committed order.
    inline std::optional<std::size_t> commit_position(const Trace &t, LpId lp, std::uint64_t serial)
    {
        for (std::size_t i = 0; i < t.committed.size(); ++i)
        {
            if (t.committed[i].identity.source_lp == lp && t.committed[i].identity.serial == serial)
            {
                return i;
            }
        }
        return std::nullopt;
    }

    // Runs the two-chain scenario (A with a zero-offset chain of `depth`
    // descendants on LP 0, a lone B on LP 1) over `n_seeds` global seeds and
    // measures how often the depth-d descendant of A commits before B.
    inline FairnessReport fairness(OrderingMode mode, std::uint32_t depth, std::uint64_t n_seeds,
                                   std::uint64_t base_seed = 1)
    {
        if (n_seeds < 100)
        {
            throw SimError(ErrorCode::InsufficientSamples, "fairness needs at least 100 seeds");
        }
        FairnessReport report;
        report.pair = pair_label(depth);
        report.mode = mode;
        report.samples = n_seeds;
        report.expected = expected_precedence(mode, depth);

        const models::TiedChains model({depth + 1, 1});
        RunConfig cfg;
        cfg.mode = mode;
        cfg.end_time = models::initial_timestamp;

        std::uint64_t before = 0;
        for (std::uint64_t s = 0; s < n_seeds; ++s)
        {
            cfg.global_seed = base_seed + s;
            const auto trace = run_sequential(model, cfg);
            const auto target = commit_position(trace, 0, depth);
            const auto other = commit_position(trace, 1, 0);
            if (!target || !other)
            {
                throw std::logic_error("fairness scenario lost an event");
            }
            before += *target < *other ? 1 : 0;
        }
        report.p_hat = static_cast<double>(before) / static_cast<double>(n_seeds);
        report.half_width = 3.0 * std::sqrt(report.expected * (1.0 - report.expected) / static_cast<double>(n_seeds));
        report.pass = std::abs(report.p_hat - report.expected) <= report.half_width;
        return report;
    }

    inline nlohmann::json to_json(const FairnessReport &r)
    {
        return {{"schema", report_schema},
                {"kind", "fairness"},
                {"pair", r.pair},
                {"mode", to_string(r.mode)},
                {"samples", r.samples},
                {"p_hat", r.p_hat},
                {"expected", r.expected},
                {"half_width", r.half_width},
                {"verdict", r.pass ? "PASS" : "FAIL"}};
    }

    // ---- sequential vs optimistic ----

    struct LpDiff
    {
        LpId lp = 0;
        double sequential = 0.0;
        double optimistic = 0.0;
    };

    struct CompareReport
    {
        bool identical = false;
        std::optional<std::uint64_t> first_divergence;
        std::vector<LpDiff> lp_diffs;
        std::string sequential_digest;
        std::string optimistic_digest;
        std::uint64_t sequential_events = 0;
        std::uint64_t optimistic_events = 0;
    };

    inline CompareReport compare_traces(const Trace &seq, const Trace &opt)
    {
        CompareReport r;
        r.sequential_digest = trace_digest(seq);
        r.optimistic_digest = trace_digest(opt);
        r.sequential_events = seq.net_event_count();
        r.optimistic_events = opt.net_event_count();
        r.identical = r.sequential_digest == r.optimistic_digest;

        const auto n = std::min(seq.committed.size(), opt.committed.size());
        std::string a, b;
        for (std::size_t i = 0; i < n; ++i)
        {
            a.clear();
            b.clear();
            write_trace_row(a, seq.committed[i]);
            write_trace_row(b, opt.committed[i]);
            if (a != b)
            {
                r.first_divergence = i;
                break;
            }
        }
        if (!r.first_divergence && seq.committed.size() != opt.committed.size())
        {
            r.first_divergence = n;
        }
        for (std::size_t lp = 0; lp < std::min(seq.final_states.size(), opt.final_states.size()); ++lp)
        {
            if (!(seq.final_states[lp] == opt.final_states[lp]))
            {
                r.lp_diffs.push_back({lp, seq.final_states[lp].mean_val, opt.final_states[lp].mean_val});
            }
        }
        return r;
    }

    inline CompareReport compare_kernels(const RunSpec &spec)
    {
        const auto seq = execute(spec, KernelKind::sequential);
        const auto opt = execute(spec, KernelKind::optimistic);
        return compare_traces(seq.trace, opt.trace);
    }

    inline nlohmann::json to_json(const CompareReport &r)
    {
        nlohmann::json diffs = nlohmann::json::array();
        for (const auto &d : r.lp_diffs)
        {
            diffs.push_back({{"lp", d.lp}, {"sequential", d.sequential}, {"optimistic", d.optimistic}});
        }
        nlohmann::json j{{"schema", report_schema},
                         {"kind", "compare"},
                         {"result", r.identical ? "identical" : "diverged"},
                         {"sequential_digest", r.sequential_digest},
                         {"optimistic_digest", r.optimistic_digest},
                         {"sequential_events", r.sequential_events},
                         {"optimistic_events", r.optimistic_events},
                         {"lp_diffs", std::move(diffs)}};
        j["first_divergence"] = r.first_divergence ? nlohmann::json(*r.first_divergence) : nlohmann::json(nullptr);
        return j;
    }

    // CLI exit status for an engine error.
    inline int exit_code_for(ErrorCode code) noexcept
    {
        switch (code)
        {
        case ErrorCode::ConfigError:
        case ErrorCode::ZeroOffsetForbidden:
        case ErrorCode::InsufficientSamples:
            return 2;
        case ErrorCode::CausalityViolation:
            return 3;
        case ErrorCode::LivelockDetected:
            return 4;
        default:
            return 1;
        }
    }
}

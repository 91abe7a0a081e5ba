// Command-line front end: run, verify, fairness, compare.

#include <tiewarp/harness.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace tiewarp;
using namespace tiewarp::harness;

namespace
{
    struct Options
    {
        RunSpec spec;
        std::string model = "event-ties";
        std::string mode = "lex";
        std::string report_out;
        std::string csv_out;
        // verify
        std::vector<std::uint32_t> worker_list{1, 2, 4};
        std::vector<std::uint64_t> chaos_list{1, 2, 3};
        std::uint32_t repeat = 2;
        // fairness
        std::vector<std::uint32_t> depths{0};
        std::uint64_t seeds = 1000;
        std::uint64_t base_seed = 1;
    };

    const std::vector<std::string> model_names{"phold", "event-ties", "event-ties-stress"};
    const std::vector<std::string> mode_names{"none", "biased", "unbiased-single", "additive", "lex"};

    void add_spec_options(CLI::App &app, Options &o)
    {
        auto &s = o.spec;
        app.add_option("--model", o.model, "Benchmark model")->check(CLI::IsMember(model_names))->capture_default_str();
        app.add_option("--mode", o.mode, "Tie-breaking mode")->check(CLI::IsMember(mode_names))->capture_default_str();
        app.add_option("--lps", s.lps, "Number of logical processes")->check(CLI::PositiveNumber)->capture_default_str();
        app.add_option("--remote-prob", s.remote_prob, "Probability an event is sent to another LP")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
        app.add_option("--chain", s.chain, "Event-Ties events per zero-offset chain")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        app.add_option("--height", s.height, "Stress tree height; the root is level 0")->capture_default_str();
        app.add_option("--arity", s.arity, "Stress tree fan-out")->check(CLI::PositiveNumber)->capture_default_str();
        app.add_flag("--coupled", s.coupled, "Event-Ties remote destination follows the LP's mean");
        app.add_option("--mean-offset", s.mean_offset, "PHOLD mean exponential offset")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        app.add_option("--initial-events", s.initial_events, "PHOLD events seeded per LP")->capture_default_str();
        app.add_option("--end", s.run.end_time, "Virtual end time")->capture_default_str();
        app.add_option("--seed", s.run.global_seed, "Global seed")->capture_default_str();
        app.add_option("--workers", s.workers, "Worker threads; 1 runs the sequential kernel")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        app.add_flag("--force-optimistic", s.force_optimistic, "Use the Time Warp kernel even with one worker");
        app.add_option("--chaos-seed", s.chaos.chaos_seed, "Message delivery perturbation seed; 0 disables")
            ->capture_default_str();
        app.add_option("--max-delay", s.chaos.max_delay, "Longest chaos hold, in receive passes")
            ->capture_default_str();
        app.add_option("--gvt-interval", s.run.gvt_interval, "Processed events between GVT rounds")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        app.add_option("--seq-cap", s.run.sequence_cap, "Tie-break sequence length cap")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        app.add_option("--livelock-bound", s.run.livelock_bound, "Rollbacks of one event before giving up")
            ->capture_default_str();
        app.add_option("--optimism-window", s.run.optimism_window,
                       "Uncommitted events a worker may hold before waiting for GVT")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        app.add_flag("--naive-zero-offset", s.run.allow_naive_zero_offset,
                     "Let unbiased-single give zero-offset events independent draws");
        app.add_option("--trace-out", s.trace_out, "Write the committed trace as CSV");
        app.add_option("--summary-out", s.summary_out, "Write the run summary as JSON");
    }

    void finalize(Options &o)
    {
        o.spec.model = *parse_model_kind(o.model);
        o.spec.run.mode = *parse_ordering_mode(o.mode);
    }

    void write_file(const std::string &path, const std::string &text)
    {
        std::ofstream f(path, std::ios::binary);
        if (!f)
        {
            throw SimError(ErrorCode::ConfigError, "cannot open " + path + " for writing");
        }
        f << text;
        if (!f)
        {
            throw SimError(ErrorCode::ConfigError, "failed writing " + path);
        }
    }

    void emit(const nlohmann::json &j, const std::string &path)
    {
        std::cout << j.dump(2) << '\n';
        if (!path.empty())
        {
            write_file(path, j.dump(2) + "\n");
        }
    }

    int cmd_run(Options &o)
    {
        const auto out = execute(o.spec);
        const auto summary = summary_json(o.spec, out);
        if (!o.spec.trace_out.empty())
        {
            std::ostringstream os;
            write_trace_csv(os, out.trace, to_string(o.spec.model));
            write_file(o.spec.trace_out, os.str());
        }
        emit(summary, o.spec.summary_out);
        return 0;
    }

    int cmd_verify(Options &o)
    {
        const auto r = verify_determinism(o.spec, o.worker_list, o.chaos_list, o.repeat);
        if (!o.csv_out.empty())
        {
            std::string csv = "workers,chaos_seed,repeat,digest,net_events,error,matches_reference\n";
            for (const auto &c : r.cells)
            {
                csv += std::to_string(c.workers) + "," + std::to_string(c.chaos_seed) + "," + std::to_string(c.repeat) +
                       "," + c.digest + "," + std::to_string(c.net_events) + "," + c.error + "," +
                       (c.digest == r.reference_digest ? "1" : "0") + "\n";
            }
            write_file(o.csv_out, csv);
        }
        emit(to_json(r), o.report_out);
        return r.verdict == "FAIL" ? 1 : 0;
    }

    int cmd_fairness(Options &o)
    {
        nlohmann::json reports = nlohmann::json::array();
        std::string csv = "pair,mode,samples,p_hat,expected,half_width,verdict\n";
        bool all_pass = true;
        for (auto depth : o.depths)
        {
            const auto r = fairness(o.spec.run.mode, depth, o.seeds, o.base_seed);
            all_pass = all_pass && r.pass;
            reports.push_back(to_json(r));
            char row[256];
            std::snprintf(row, sizeof(row), "%s,%s,%llu,%.6f,%.6f,%.6f,%s\n", r.pair.c_str(),
                          std::string(to_string(r.mode)).c_str(), static_cast<unsigned long long>(r.samples), r.p_hat,
                          r.expected, r.half_width, r.pass ? "PASS" : "FAIL");
            csv += row;
        }
        if (!o.csv_out.empty())
        {
            write_file(o.csv_out, csv);
        }
        emit(reports, o.report_out);
        return all_pass ? 0 : 1;
    }

    int cmd_compare(Options &o)
    {
        if (o.spec.workers <= 1)
        {
            o.spec.force_optimistic = true;
        }
        emit(to_json(compare_kernels(o.spec)), o.report_out);
        return 0;
    }
}

int main(int argc, char **argv)
{
    CLI::App app{"Time Warp simulator with reproducible tie-breaking"};
    app.set_config("--config", "", "TOML key = value file mirroring the command-line flags");
    app.require_subcommand(1);

    Options o;
    add_spec_options(app, o);
    app.add_option("--report-out", o.report_out, "Write the verify/fairness/compare report as JSON");
    app.add_option("--csv-out", o.csv_out, "Write verify/fairness results as CSV");

    auto *run = app.add_subcommand("run", "Run one configuration and print its summary");
    auto *verify = app.add_subcommand("verify", "Compare optimistic digests against the sequential reference");
    verify->add_option("--worker-list", o.worker_list, "Worker counts to try")->delimiter(',')->capture_default_str();
    verify->add_option("--chaos-list", o.chaos_list, "Chaos seeds to try")->delimiter(',')->capture_default_str();
    verify->add_option("--repeat", o.repeat, "Repeats per cell")->check(CLI::PositiveNumber)->capture_default_str();
    auto *fair = app.add_subcommand("fairness", "Measure how often a tied event precedes an independent one");
    fair->add_option("--depth", o.depths, "Zero-offset depth of the target event")
        ->delimiter(',')
        ->capture_default_str();
    fair->add_option("--seeds", o.seeds, "Number of seeds (at least 100)")->capture_default_str();
    fair->add_option("--base-seed", o.base_seed, "First seed")->capture_default_str();
    auto *compare = app.add_subcommand("compare", "Diff sequential and optimistic traces");
    for (auto *sub : {run, verify, fair, compare})
    {
        sub->fallthrough();
    }

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try
    {
        finalize(o);
        if (*run)
        {
            return cmd_run(o);
        }
        if (*verify)
        {
            return cmd_verify(o);
        }
        if (*fair)
        {
            return cmd_fairness(o);
        }
        return cmd_compare(o);
    }
    catch (const SimError &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

// Command-line front end: run scenarios, explore schedules, and run the
// propagation micro-benchmark. Exit codes: 0 ok, 1 expectation mismatch or
// rejection, 2 parse/usage errors.

#include <errprop/scenario.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

std::string slurp(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw errprop::ParseError("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

errprop::Mode parse_mode(const std::string& mode)
{
    if (mode == "black-channel")
        return errprop::Mode::black_channel;
    if (mode == "ulfm")
        return errprop::Mode::ulfm;
    throw errprop::ParseError("unknown mode '" + mode + "' (use black-channel or ulfm)");
}

std::vector<errprop::Mode> modes_to_run(const errprop::Scenario& s, const std::string& flag)
{
    if (!flag.empty())
        return {parse_mode(flag)};
    switch (s.mode) {
    case errprop::RunMode::black_channel: return {errprop::Mode::black_channel};
    case errprop::RunMode::ulfm: return {errprop::Mode::ulfm};
    case errprop::RunMode::both:
        return {errprop::Mode::black_channel, errprop::Mode::ulfm};
    }
    return {};
}

int cmd_run(const std::string& file, const std::string& mode_flag, std::uint64_t seed,
            const std::string& trace_path)
{
    const auto scn = errprop::Scenario::parse(slurp(file));
    int rc = 0;
    for (const auto mode : modes_to_run(scn, mode_flag)) {
        std::cout << "scenario=" << scn.name << " mode=" << to_string(mode) << " seed=" << seed
                  << '\n';
        const auto verdict = errprop::run_scenario(scn, mode, seed);
        std::cout << verdict.to_text();
        if (verdict.rejected)
            std::cout << "diagnostic: " << verdict.reject_reason << '\n';
        if (!verdict.rejected && !trace_path.empty()) {
            const auto trace = errprop::run_scenario_trace(scn, mode, seed);
            std::ofstream out(trace_path, std::ios::binary);
            out << trace.serialize();
        }
        const auto bad = errprop::check_expectations(scn, verdict);
        for (const auto& b : bad)
            std::cout << "mismatch: " << b << '\n';
        if (!bad.empty() || verdict.rejected)
            rc = 1;
    }
    return rc;
}

int cmd_explore(const std::string& file, const std::string& mode_flag, std::uint64_t budget,
                std::uint64_t max_runs)
{
    const auto scn = errprop::Scenario::parse(slurp(file));
    errprop::ExploreOptions opts;
    opts.max_steps_per_run = budget;
    opts.max_runs = max_runs;
    int rc = 0;
    for (const auto mode : modes_to_run(scn, mode_flag)) {
        const auto out = errprop::explore_scenario(scn, mode, opts);
        std::cout << "scenario=" << scn.name << " mode=" << to_string(mode)
                  << " runs=" << out.stats.runs << " choice_points=" << out.stats.choice_points
                  << " truncated=" << out.stats.truncated_runs
                  << " partial=" << out.stats.partial << " distinct=" << out.verdicts.size()
                  << '\n';
        bool deadlock = false;
        for (std::size_t i = 0; i < out.verdicts.size(); ++i) {
            std::cout << "--- verdict " << i << " ---\n" << out.verdicts[i].to_text();
            deadlock = deadlock || out.verdicts[i].deadlocked;
        }
        if (deadlock || out.stats.partial)
            rc = 1;
    }
    return rc;
}

int cmd_bench(std::uint32_t ranks, std::uint64_t iters, const std::string& mode_flag,
              const std::string& out_path)
{
    const auto mode = mode_flag.empty() ? errprop::Mode::black_channel : parse_mode(mode_flag);
    const auto rows = errprop::run_bench(ranks, iters, mode);
    const auto csv = errprop::bench_csv(rows);
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        std::ofstream out(out_path, std::ios::binary);
        out << csv;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"rank-local error propagation over a deterministic simulated transport"};
    app.require_subcommand(1);

    std::string file, mode_flag, trace_path, bench_out;
    std::uint64_t seed = 0;
    std::uint64_t budget = 100000;
    std::uint64_t max_runs = 2000000;
    std::uint32_t ranks = 4;
    std::uint64_t iters = 1000;

    auto* run = app.add_subcommand("run", "run one scenario and check its expectations");
    run->add_option("scenario", file, "scenario file")->required();
    run->add_option("--mode", mode_flag, "black-channel or ulfm (default: scenario's modes)");
    run->add_option("--seed", seed, "schedule seed");
    run->add_option("--trace", trace_path, "dump the transport trace to this path");

    auto* explore = app.add_subcommand("explore", "enumerate schedules for one scenario");
    explore->add_option("scenario", file, "scenario file")->required();
    explore->add_option("--mode", mode_flag, "black-channel or ulfm");
    explore->add_option("--budget", budget, "event budget per interleaving");
    explore->add_option("--max-runs", max_runs, "cap on explored interleavings");

    auto* bench = app.add_subcommand("bench", "time duplicate+propagate+teardown, CSV output");
    bench->add_option("--ranks", ranks, "communicator size")->check(CLI::Range(2u, 512u));
    bench->add_option("--iters", iters, "repetitions");
    bench->add_option("--mode", mode_flag, "black-channel or ulfm");
    bench->add_option("--out", bench_out, "write CSV here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(file, mode_flag, seed, trace_path);
        if (explore->parsed())
            return cmd_explore(file, mode_flag, budget, max_runs);
        if (bench->parsed())
            return cmd_bench(ranks, iters, mode_flag, bench_out);
    } catch (const errprop::ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return 2;
    } catch (const errprop::UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}

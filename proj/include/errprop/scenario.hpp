#pragma once

#include <errprop/comm.hpp>
#include <errprop/fault_script.hpp>
#include <errprop/sim.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace errprop {

enum class RunMode : std::uint8_t { black_channel, ulfm, both };

const char* to_string(RunMode m);
const char* to_string(Mode m);

struct ProgStep {
    enum class Kind : std::uint8_t {
        isend,
        irecv,
        wait_one,
        wait_all,
        signal,
        unwind,
        delay,
        shrink,
        allreduce,
        barrier,
    };

    Kind kind = Kind::wait_one;
    RankId peer = 0; // isend dest / irecv source (kAnySource = any)
    Tag tag = 0;
    std::string payload;
    std::size_t capacity = 0;
    std::uint64_t value = 0; // signal code / allreduce value / delay ticks
    ReduceOp op = ReduceOp::sum;
};

// Embedded pass/fail conditions checked by `run` against the verdict.
struct Expectations {
    std::optional<bool> deadlock;
    std::optional<std::string> outcome_all; // label prefix required on every rank
    std::map<RankId, std::string> outcome;  // per-rank label prefix
    std::optional<std::string> report;
    std::optional<bool> leaks_positive;
    std::map<RankId, std::uint64_t> errsends;
    std::optional<std::string> rejected_substr;
};

struct Scenario {
    std::string name = "scenario";
    std::uint32_t ranks = 2;
    RunMode mode = RunMode::both;
    std::vector<std::vector<ProgStep>> programs;
    FaultScript faults;
    Expectations expect;

    static Scenario parse(std::string_view text);
    std::string format() const;
};

// Everything a run claims, derived purely from the trace plus recorded
// outcome notes.
struct Verdict {
    bool rejected = false;
    std::string reject_reason;
    bool deadlocked = false;
    bool truncated = false;
    std::uint64_t steps = 0;
    std::uint64_t leak_count = 0;
    std::uint64_t data_sends = 0;
    std::uint64_t err_sends = 0; // any tag, error-kind channels
    std::uint64_t ctrl_sends = 0;
    std::uint64_t deliveries = 0;
    std::uint64_t err_tag0_sends_total = 0;
    std::vector<std::uint64_t> err_tag0_sends_by_rank;
    std::vector<std::string> outcome; // canonical per-rank label or "none"
    std::vector<std::string> rank_end;
    std::map<RankId, std::string> shrink_notes;
    std::optional<std::string> report; // any recorded report
    bool outcome_uniform = true;       // error-outcome kinds agree where present
    bool report_uniform = true;        // recorded reports are identical

    std::string key() const; // dedup identity for explore
    std::string to_text() const;
};

Verdict verdict_from_trace(const Trace& trace);

std::optional<std::string> reject_reason(const Scenario& s, Mode mode);
std::vector<RankProgram> build_programs(const Scenario& s, Mode mode);
Trace run_scenario_trace(const Scenario& s, Mode mode, std::uint64_t seed);
Verdict run_scenario(const Scenario& s, Mode mode, std::uint64_t seed);

struct ExploreOutcome {
    std::vector<Verdict> verdicts; // de-duplicated
    ExploreStats stats;
};
ExploreOutcome explore_scenario(const Scenario& s, Mode mode, const ExploreOptions& opts);

// Independent oracle: direct construction, no message passing.
ErrorReport oracle_failed_ranks(const std::map<RankId, std::uint64_t>& failed);

// Empty when the verdict satisfies the scenario's expectations; otherwise one
// line per mismatch.
std::vector<std::string> check_expectations(const Scenario& s, const Verdict& v);

// scenario corpus
Scenario make_ring_exchange(std::uint32_t n);
Scenario make_single_signaller(std::uint32_t n, std::uint64_t code = 42);
Scenario make_two_signallers(std::uint32_t n, std::uint64_t c1 = 7, std::uint64_t c2 = 9);
Scenario make_unwind(std::uint32_t n);
Scenario make_signal_plus_unwind(std::uint32_t n);
Scenario make_error_mid_collective(std::uint32_t n);
Scenario make_allreduce_clean(std::uint32_t n);
Scenario make_kill_one(std::uint32_t n, RankId victim);
Scenario make_size1_signal();

// Propagation micro-benchmark: duplicate, signal from rank 0, resolve,
// tear down. Step counts are deterministic; wall time is informational.
struct BenchRow {
    std::uint64_t iter = 0;
    Mode mode = Mode::black_channel;
    std::uint32_t ranks = 0;
    std::uint64_t sim_steps = 0;
    std::uint64_t messages = 0;
    std::uint64_t err_sends = 0;
    std::uint64_t wall_ns = 0;
};
std::vector<BenchRow> run_bench(std::uint32_t ranks, std::uint64_t iters, Mode mode);
std::string bench_csv(const std::vector<BenchRow>& rows);

} // namespace errprop

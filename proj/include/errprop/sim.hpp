#pragma once

#include <errprop/fault_script.hpp>
#include <errprop/trace.hpp>
#include <errprop/transport.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace errprop {

// One entry program per rank; receives that rank's endpoint.
using RankProgram = std::function<void(Endpoint&)>;

struct SimOptions {
    std::uint32_t ranks = 2;
    bool liveness = false;               // required for peer-dead error reporting
    bool runtime_preinitialized = false; // instance acquire then does not own the runtime
    std::uint64_t max_steps = 50'000'000;
    std::size_t fiber_stack_bytes = 128 * 1024;
};

struct ExploreOptions {
    std::uint64_t max_steps_per_run = 100'000; // event-count budget per interleaving
    std::uint64_t max_runs = 4'000'000;
    bool sleep_sets = true; // prune equivalent interleavings
};

struct ExploreStats {
    std::uint64_t runs = 0;            // complete executions visited
    std::uint64_t truncated_runs = 0;  // stopped by the per-run budget
    std::uint64_t choice_points = 0;
    bool partial = false;              // coverage incomplete (budget or run cap hit)
};

// Deterministic in-process transport: cooperative per-rank fibers scheduled
// single-threaded, with fault injection and full schedule control. The same
// (programs, faults, seed) triple always yields a byte-identical trace.
class SimTransport {
public:
    explicit SimTransport(SimOptions opts);
    ~SimTransport();

    SimTransport(const SimTransport&) = delete;
    SimTransport& operator=(const SimTransport&) = delete;

    void set_fault_script(FaultScript script);

    Trace run(const std::vector<RankProgram>& programs, std::uint64_t seed);

    // Enumerates all schedules (up to the budget), invoking on_trace for each
    // complete execution. With sleep_sets, one representative per class of
    // commuting-event reorderings is visited.
    ExploreStats explore(const std::vector<RankProgram>& programs, const ExploreOptions& opts,
                         const std::function<void(const Trace&)>& on_trace);

private:
    SimOptions opts_;
    FaultScript faults_;
};

} // namespace errprop

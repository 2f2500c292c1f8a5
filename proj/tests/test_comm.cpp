#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <errprop/comm.hpp>
#include <errprop/scenario.hpp>
#include <errprop/sim.hpp>
#include <errprop/wire.hpp>

#include <map>
#include <set>

using namespace errprop;

namespace {

Trace run_group(std::uint32_t n, Mode mode, const std::function<void(Endpoint&, Comm&)>& body,
                std::uint64_t seed = 0, bool preinit = false)
{
    SimOptions opts;
    opts.ranks = n;
    opts.liveness = (mode == Mode::ulfm);
    opts.runtime_preinitialized = preinit;
    SimTransport t(opts);
    std::vector<RankProgram> progs;
    for (std::uint32_t r = 0; r < n; ++r)
        progs.push_back([&body, mode](Endpoint& ep) {
            Instance inst = Instance::acquire(ep, mode);
            body(ep, inst.world());
        });
    return t.run(progs, seed);
}

// channel-kind totals for one rank
struct ChanStats {
    std::uint64_t opens_err = 0;
    std::uint64_t opens_total = 0;
    std::uint64_t protocol_recvs = 0; // receives posted on error/control channels
    std::uint64_t err_sends = 0;
};

ChanStats chan_stats(const Trace& trace, RankId rank)
{
    ChanStats cs;
    std::map<ChannelId, ChannelKind> kinds;
    for (const auto& e : trace.events) {
        if (e.kind == TraceEvent::Kind::chan_open) {
            kinds[e.chan] = static_cast<ChannelKind>(e.a);
            if (e.rank == rank) {
                ++cs.opens_total;
                if (kinds[e.chan] == ChannelKind::error)
                    ++cs.opens_err;
            }
        }
        if (e.rank == rank && e.kind == TraceEvent::Kind::post_recv &&
            kinds.count(e.chan) && kinds[e.chan] != ChannelKind::data)
            ++cs.protocol_recvs;
        if (e.kind == TraceEvent::Kind::post_send && e.src == rank && kinds.count(e.chan) &&
            kinds[e.chan] == ChannelKind::error)
            ++cs.err_sends;
    }
    return cs;
}

} // namespace

TEST_CASE("first instance owns the runtime; nested acquire fails")
{
    auto trace = run_group(2, Mode::black_channel, [&](Endpoint& ep, Comm&) {
        CHECK_THROWS_AS(Instance::acquire(ep, Mode::black_channel), UsageError);
    });
    // one runtime init and one finalise per rank
    std::map<RankId, int> inits, finals;
    for (const auto& e : trace.events)
        if (e.kind == TraceEvent::Kind::runtime)
            ++(e.a ? inits[e.rank] : finals[e.rank]);
    CHECK(inits[0] == 1);
    CHECK(finals[0] == 1);
}

TEST_CASE("pre-initialised runtime: acquire does not own it and skips finalisation")
{
    bool owns = true;
    auto trace = run_group(1, Mode::black_channel, [&](Endpoint& ep, Comm&) {
        (void)ep;
    }, 0, true);
    // re-run with visibility into the instance
    SimOptions opts;
    opts.ranks = 1;
    opts.runtime_preinitialized = true;
    SimTransport t(opts);
    std::vector<RankProgram> progs{[&owns](Endpoint& ep) {
        Instance inst = Instance::acquire(ep, Mode::black_channel);
        owns = inst.owns_runtime();
    }};
    auto tr = t.run(progs, 0);
    CHECK_FALSE(owns);
    for (const auto& e : tr.events)
        CHECK(e.kind != TraceEvent::Kind::runtime);
    (void)trace;
}

TEST_CASE("black-channel duplicate allocates two channels and arms one error receive")
{
    auto trace = run_group(4, Mode::black_channel, [&](Endpoint&, Comm& world) {
        auto dup = world.duplicate();
        CHECK(dup->size() == 4);
        CHECK(dup->state() == CommState::healthy);
    });
    for (RankId r = 0; r < 4; ++r) {
        auto cs = chan_stats(trace, r);
        // world + duplicate: two error-kind channels, four channels total
        CHECK(cs.opens_err == 2);
        CHECK(cs.opens_total == 4);
        // one pending protocol receive per communicator
        CHECK(cs.protocol_recvs == 2);
        CHECK(cs.err_sends == 0);
    }
}

TEST_CASE("ulfm duplicate allocates one channel and no protocol receives")
{
    auto trace = run_group(4, Mode::ulfm, [&](Endpoint&, Comm& world) {
        auto dup = world.duplicate();
        CHECK(dup->size() == 4);
    });
    for (RankId r = 0; r < 4; ++r) {
        auto cs = chan_stats(trace, r);
        CHECK(cs.opens_err == 0);
        CHECK(cs.opens_total == 2); // world data + duplicate data
        CHECK(cs.protocol_recvs == 0);
    }
}

TEST_CASE("duplicate on a closed communicator is a usage error")
{
    run_group(1, Mode::black_channel, [&](Endpoint&, Comm& world) {
        (void)world.signal_error(5);
        CHECK_THROWS_AS(world.duplicate(), UsageError);
    });
}

TEST_CASE("matched isend/irecv yields Success on both sides; any-source reports the source")
{
    std::vector<std::string> got(2);
    run_group(2, Mode::black_channel, [&](Endpoint& ep, Comm& world) {
        if (ep.rank() == 0) {
            CommFuture f = world.isend(1, 7, bytes_of("hello"));
            auto out = world.wait(f);
            REQUIRE(std::holds_alternative<Success>(out));
        } else {
            CommFuture f = world.irecv(kAnySource, 7, 16);
            auto out = world.wait(f);
            REQUIRE(std::holds_alternative<Success>(out));
            const auto& s = std::get<Success>(out);
            CHECK(s.source == 0);
            got[1] = string_of(s.payload);
        }
    });
    CHECK(got[1] == "hello");
}

TEST_CASE("signal_error propagates the code to every rank, including the signaller")
{
    for (Mode mode : {Mode::black_channel, Mode::ulfm}) {
        CAPTURE(to_string(mode));
        std::vector<std::string> outcome(4);
        run_group(4, mode, [&](Endpoint& ep, Comm& world) {
            if (ep.rank() == 0) {
                outcome[0] = outcome_label(world.signal_error(42));
            } else {
                CommFuture f = world.irecv(kAnySource, 9, 8);
                outcome[ep.rank()] = outcome_label(world.wait(f));
            }
        });
        const auto want = "propagated" + oracle_failed_ranks({{0, 42}}).to_string();
        for (int r = 0; r < 4; ++r)
            CHECK(outcome[r] == want);
    }
}

TEST_CASE("single-signaller episode posts exactly n-1 error-channel notifications")
{
    for (std::uint32_t n : {2u, 3u, 5u, 8u}) {
        auto v = run_scenario(make_single_signaller(n), Mode::black_channel, 1);
        CHECK(v.err_tag0_sends_by_rank[0] == n - 1);
        for (std::uint32_t r = 1; r < n; ++r)
            CHECK(v.err_tag0_sends_by_rank[r] == 0);
    }
}

TEST_CASE("size-1 communicator: signal_error resolves immediately with no traffic")
{
    std::string out;
    auto trace = run_group(1, Mode::black_channel, [&](Endpoint&, Comm& world) {
        out = outcome_label(world.signal_error(5));
    });
    CHECK(out == "propagated[(0,5)]");
    for (const auto& e : trace.events)
        CHECK(e.kind != TraceEvent::Kind::post_send);
}

TEST_CASE("error code bounds are enforced")
{
    run_group(1, Mode::black_channel, [&](Endpoint&, Comm& world) {
        CHECK_THROWS_AS(world.signal_error(0), UsageError);
        CHECK_THROWS_AS(world.signal_error(0x80000000ull), UsageError);
    });
}

TEST_CASE("waiting twice on a future is a usage error")
{
    run_group(1, Mode::black_channel, [&](Endpoint&, Comm& world) {
        CommFuture f = world.isend(0, 1, bytes_of("x"));
        (void)world.wait(f);
        CHECK_THROWS_AS(world.wait(f), UsageError);
    });
}

TEST_CASE("user request and error notification deliverable together: error wins everywhere")
{
    // rank 0 posts user data and then signals; rank 1 waits with both the
    // data and the notification already in flight
    SimOptions opts;
    opts.ranks = 2;
    SimTransport t(opts);
    std::vector<RankProgram> progs;
    progs.push_back([](Endpoint& ep) {
        Instance inst = Instance::acquire(ep, Mode::black_channel);
        CommFuture f = inst.world().isend(1, 5, bytes_of("data"));
        (void)f;
        (void)inst.world().signal_error(44);
    });
    progs.push_back([](Endpoint& ep) {
        Instance inst = Instance::acquire(ep, Mode::black_channel);
        ep.sleep_for(50); // both messages are in flight by the wake time
        auto f = inst.world().irecv(0, 5, 8);
        ep.note_outcome(outcome_label(inst.world().wait(f)));
    });
    ExploreOptions e;
    std::set<std::string> rank1_notes;
    auto stats = t.explore(progs, e, [&](const Trace& tr) {
        for (const auto& ev : tr.events)
            if (ev.kind == TraceEvent::Kind::outcome && ev.rank == 1)
                rank1_notes.insert(ev.note);
    });
    CHECK_FALSE(stats.partial);
    CHECK(rank1_notes == std::set<std::string>{"propagated[(0,44)]"});
}

TEST_CASE("isend posted after a peer signalled still waits into the error outcome")
{
    std::vector<std::string> out(2);
    run_group(2, Mode::black_channel, [&](Endpoint& ep, Comm& world) {
        if (ep.rank() == 0) {
            out[0] = outcome_label(world.signal_error(21));
        } else {
            ep.sleep_for(40); // the notification is already in flight
            CommFuture f = world.isend(0, 6, bytes_of("late"));
            out[1] = outcome_label(world.wait(f));
        }
    });
    CHECK(out[0] == "propagated[(0,21)]");
    CHECK(out[1] == "propagated[(0,21)]");
}

TEST_CASE("two concurrent signallers among eight ranks agree on the combined report")
{
    for (Mode mode : {Mode::black_channel, Mode::ulfm}) {
        CAPTURE(to_string(mode));
        std::vector<std::string> out(8);
        run_group(8, mode, [&](Endpoint& ep, Comm& world) {
            if (ep.rank() == 1) {
                out[1] = outcome_label(world.signal_error(7));
            } else if (ep.rank() == 3) {
                out[3] = outcome_label(world.signal_error(9));
            } else {
                CommFuture f = world.irecv(kAnySource, 9, 8);
                out[ep.rank()] = outcome_label(world.wait(f));
            }
        });
        const auto want = "propagated" + oracle_failed_ranks({{1, 7}, {3, 9}}).to_string();
        for (int r = 0; r < 8; ++r)
            CHECK(out[r] == want);
    }
}

TEST_CASE("distinct communicators on one rank interleave independently")
{
    std::vector<std::string> got(2);
    run_group(2, Mode::black_channel, [&](Endpoint& ep, Comm& world) {
        auto dup = world.duplicate();
        if (ep.rank() == 0) {
            CommFuture a = world.isend(1, 7, bytes_of("w"));
            CommFuture b = dup->isend(1, 7, bytes_of("d"));
            (void)world.wait(a);
            (void)dup->wait(b);
        } else {
            CommFuture b = dup->irecv(0, 7, 8);
            CommFuture a = world.irecv(0, 7, 8);
            auto ob = dup->wait(b);
            auto oa = world.wait(a);
            REQUIRE(std::holds_alternative<Success>(oa));
            REQUIRE(std::holds_alternative<Success>(ob));
            got[0] = string_of(std::get<Success>(oa).payload);
            got[1] = string_of(std::get<Success>(ob).payload);
        }
    });
    CHECK(got[0] == "w");
    CHECK(got[1] == "d");
}

TEST_CASE("truncation surfaces as a transport error outcome")
{
    std::string out;
    run_group(2, Mode::black_channel, [&](Endpoint& ep, Comm& world) {
        if (ep.rank() == 0) {
            CommFuture f = world.isend(1, 7, bytes_of("oversized"));
            (void)world.wait(f);
        } else {
            CommFuture f = world.irecv(0, 7, 2);
            out = outcome_label(world.wait(f));
        }
    });
    CHECK(out == "transport(truncation)");
}

TEST_CASE("waiting on a foreign future is a usage error")
{
    run_group(1, Mode::black_channel, [&](Endpoint&, Comm& world) {
        auto dup = world.duplicate();
        CommFuture f = world.isend(0, 1, bytes_of("x"));
        CHECK_THROWS_AS(dup->wait(f), UsageError);
        (void)world.wait(f);
    });
}

TEST_CASE("resolve_error: corruption vote polarity")
{
    // all healthy contributions: the propagated path runs
    std::vector<std::string> out(3);
    run_group(3, Mode::black_channel, [&](Endpoint& ep, Comm& world) {
        out[ep.rank()] = outcome_label(
            world.resolve_error(ep.rank() == 1, false, ep.rank() == 1 ? 9 : 0));
    });
    for (auto& s : out)
        CHECK(s == "propagated[(1,9)]");

    // one rank contributes 0: every rank reports a corrupted communicator
    run_group(3, Mode::black_channel, [&](Endpoint& ep, Comm& world) {
        out[ep.rank()] = outcome_label(
            world.resolve_error(ep.rank() == 1, ep.rank() == 2, ep.rank() == 1 ? 9 : 0));
    });
    for (auto& s : out)
        CHECK(s == "corrupted");

    // all ranks contribute 0
    run_group(3, Mode::black_channel, [&](Endpoint& ep, Comm& world) {
        out[ep.rank()] = outcome_label(world.resolve_error(true, true, 7));
    });
    for (auto& s : out)
        CHECK(s == "corrupted");
}

TEST_CASE("determine_failed matches the direct-construction oracle")
{
    auto run_case = [&](std::uint32_t n, const std::map<RankId, std::uint64_t>& failed) {
        std::vector<std::string> got(n);
        run_group(n, Mode::black_channel, [&](Endpoint& ep, Comm& world) {
            auto it = failed.find(ep.rank());
            const bool mine = it != failed.end();
            got[ep.rank()] = world.determine_failed(mine, mine ? it->second : 0).to_string();
        });
        const auto want = oracle_failed_ranks(failed).to_string();
        for (auto& s : got)
            REQUIRE(s == want);
    };
    run_case(8, {{0, 42}, {3, 7}});
    run_case(4, {{3, 9}});
    run_case(4, {{0, 5}}); // rank number 0 equals the array initialiser
    run_case(6, {{1, 1}, {2, 2}, {3, 3}, {4, 4}});
}

TEST_CASE("failed-rank resolution with no failed rank is a hard diagnostic")
{
    auto trace = run_group(2, Mode::black_channel, [&](Endpoint&, Comm& world) {
        (void)world.determine_failed(false, 0);
    });
    for (auto e : trace.rank_end)
        CHECK(e == RankEnd::failed);
}

TEST_CASE("clean scope exit leaves the error channel silent")
{
    auto trace = run_group(3, Mode::black_channel, [&](Endpoint& ep, Comm& world) {
        if (ep.rank() == 0) {
            CommFuture f = world.isend(1, 2, bytes_of("d"));
            (void)world.wait(f);
        } else if (ep.rank() == 1) {
            CommFuture f = world.irecv(0, 2, 8);
            (void)world.wait(f);
        }
    });
    std::map<ChannelId, ChannelKind> kinds;
    for (const auto& e : trace.events) {
        if (e.kind == TraceEvent::Kind::chan_open)
            kinds[e.chan] = static_cast<ChannelKind>(e.a);
        if (e.kind == TraceEvent::Kind::post_send || e.kind == TraceEvent::Kind::deliver)
            CHECK(kinds[e.chan] == ChannelKind::data);
        if (e.kind == TraceEvent::Kind::leak)
            CHECK(e.a == 0);
    }
}

TEST_CASE("unwinding scope exit corrupts the communicator on every rank")
{
    for (Mode mode : {Mode::black_channel, Mode::ulfm}) {
        CAPTURE(to_string(mode));
        auto v = run_scenario(make_unwind(3), mode, 2);
        for (auto& o : v.outcome)
            CHECK(o == "corrupted");
        CHECK_FALSE(v.deadlocked);
    }
}

TEST_CASE("signal and unwind mixed: corruption dominates")
{
    for (Mode mode : {Mode::black_channel, Mode::ulfm}) {
        auto v = run_scenario(make_signal_plus_unwind(4), mode, 3);
        for (auto& o : v.outcome)
            CHECK(o == "corrupted");
    }
}

TEST_CASE("late notification is joined by the clean scope exit")
{
    // rank 1 never waits; the episode is joined when its communicator leaves
    // scope, so rank 0's resolution cannot hang
    std::vector<std::string> out(2);
    run_group(2, Mode::black_channel, [&](Endpoint& ep, Comm& world) {
        if (ep.rank() == 0) {
            out[0] = outcome_label(world.signal_error(17));
        } else {
            ep.sleep_for(40); // let the notification arrive first
            auto o = world.scope_exit(false);
            REQUIRE(o.has_value());
            out[1] = outcome_label(*o);
        }
    });
    CHECK(out[0] == "propagated[(0,17)]");
    CHECK(out[1] == "propagated[(0,17)]");
}

TEST_CASE("error mid-collective: every wait yields the error and internals leak")
{
    for (Mode mode : {Mode::black_channel, Mode::ulfm}) {
        CAPTURE(to_string(mode));
        auto v = run_scenario(make_error_mid_collective(4), mode, 5);
        for (auto& o : v.outcome)
            CHECK(o == "propagated[(0,5)]");
        CHECK(v.leak_count > 0);
    }
}

TEST_CASE("waits after the episode return the cached outcome")
{
    run_group(1, Mode::black_channel, [&](Endpoint&, Comm& world) {
        (void)world.signal_error(3);
        CommFuture f = world.isend(0, 1, bytes_of("x"));
        auto out = world.wait(f);
        CHECK(outcome_label(out) == "propagated[(0,3)]");
    });
}

TEST_CASE("isend on a revoked communicator yields CorruptedComm on wait")
{
    run_group(1, Mode::ulfm, [&](Endpoint&, Comm& world) {
        world.revoke();
        CommFuture f = world.isend(0, 1, bytes_of("x"));
        auto out = world.wait(f);
        CHECK(std::holds_alternative<CorruptedComm>(out));
    });
}

TEST_CASE("wait returning Success implies the request completed beforehand")
{
    auto trace = run_group(2, Mode::black_channel, [&](Endpoint& ep, Comm& world) {
        if (ep.rank() == 0) {
            CommFuture f = world.isend(1, 7, bytes_of("x"));
            (void)world.wait(f);
        } else {
            CommFuture f = world.irecv(0, 7, 8);
            auto out = world.wait(f);
            if (std::holds_alternative<Success>(out))
                ep.note_outcome("success");
        }
    });
    std::uint64_t deliver_step = ~0ull, outcome_step = 0;
    for (const auto& e : trace.events) {
        if (e.kind == TraceEvent::Kind::deliver && e.dst == 1)
            deliver_step = std::min(deliver_step, e.step);
        if (e.kind == TraceEvent::Kind::outcome && e.rank == 1)
            outcome_step = e.step;
    }
    CHECK(deliver_step <= outcome_step);
}

TEST_CASE("report agreement and outcome uniformity on a multi-signaller episode")
{
    for (Mode mode : {Mode::black_channel, Mode::ulfm}) {
        CAPTURE(to_string(mode));
        auto v = run_scenario(make_two_signallers(5), mode, 9);
        CHECK(v.outcome_uniform);
        CHECK(v.report_uniform);
        REQUIRE(v.report.has_value());
        CHECK(*v.report == oracle_failed_ranks({{1, 7}, {2, 9}}).to_string());
        for (auto& o : v.outcome)
            CHECK(o.rfind("propagated", 0) == 0);
    }
}

TEST_CASE("episode leaves no pending requests or messages on the error channel")
{
    auto trace = run_scenario_trace(make_two_signallers(4), Mode::black_channel, 13);
    std::map<ChannelId, ChannelKind> kinds;
    std::map<ReqId, TraceEvent> posted; // pending error-channel requests
    std::set<std::uint64_t> in_flight;  // undelivered error-channel messages
    for (const auto& e : trace.events) {
        switch (e.kind) {
        case TraceEvent::Kind::chan_open:
            kinds[e.chan] = static_cast<ChannelKind>(e.a);
            break;
        case TraceEvent::Kind::post_send:
            if (kinds[e.chan] == ChannelKind::error) {
                posted[e.req] = e;
                if (e.a) // synchronous: message dies with the request
                    in_flight.insert(e.req);
            }
            break;
        case TraceEvent::Kind::post_recv:
            if (kinds[e.chan] == ChannelKind::error)
                posted[e.req] = e;
            break;
        case TraceEvent::Kind::deliver:
            posted.erase(e.req);
            posted.erase(e.req2);
            in_flight.erase(e.req);
            break;
        case TraceEvent::Kind::cancel:
            if (e.a) {
                posted.erase(e.req);
                in_flight.erase(e.req);
            }
            break;
        default:
            break;
        }
    }
    CHECK(in_flight.empty());
    // the black-channel receives were all consumed or retired
    CHECK(posted.empty());
}

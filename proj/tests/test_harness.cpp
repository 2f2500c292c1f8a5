#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <errprop/scenario.hpp>
#include <errprop/wire.hpp>

#include <map>
#include <random>
#include <set>

using namespace errprop;

TEST_CASE("fault script text form round-trips")
{
    const char* text = "0 2 kill\n"
                       "5 0 drop 0->1 tag=7\n"
                       "9 1 delay 1->2 tag=3 by=40\n";
    auto fs = FaultScript::parse(text);
    REQUIRE(fs.events.size() == 3);
    CHECK(fs.events[0].kind == FaultEvent::Kind::kill);
    CHECK(fs.events[1].pattern.dst == 1);
    CHECK(fs.events[2].delay_by == 40);
    CHECK(fs.format() == text);
    CHECK(fs.has_kill());
    CHECK(fs.killed_ranks() == std::vector<RankId>{2});
}

TEST_CASE("fault script rejects malformed lines")
{
    CHECK_THROWS_AS(FaultScript::parse("1 0 explode\n"), ParseError);
    CHECK_THROWS_AS(FaultScript::parse("1 0 drop 0-1 tag=7\n"), ParseError);
    CHECK_THROWS_AS(FaultScript::parse("x 0 kill\n"), ParseError);
    CHECK_THROWS_AS(FaultScript::parse("1 0 delay 0->1 tag=7\n"), ParseError);
}

TEST_CASE("scenario corpus round-trips through the text format")
{
    for (const Scenario& s :
         {make_ring_exchange(3), make_single_signaller(4), make_two_signallers(4),
          make_unwind(3), make_signal_plus_unwind(3), make_error_mid_collective(4),
          make_allreduce_clean(5), make_kill_one(4, 2), make_size1_signal()}) {
        const auto text = s.format();
        const auto back = Scenario::parse(text);
        CHECK(back.format() == text);
    }
}

TEST_CASE("scenario parsing reports errors")
{
    CHECK_THROWS_AS(Scenario::parse("program 0: wait\n"), ParseError);       // ranks missing
    CHECK_THROWS_AS(Scenario::parse("ranks 2\nprogram 5: wait\n"), ParseError);
    CHECK_THROWS_AS(Scenario::parse("ranks 2\nprogram 0: explode\n"), ParseError);
    CHECK_THROWS_AS(Scenario::parse("ranks 2\nmode sideways\n"), ParseError);
    CHECK_THROWS_AS(Scenario::parse("ranks 2\nprogram 0: isend 7 tag=1 \"x\"\n"), ParseError);
    CHECK_THROWS_AS(Scenario::parse("ranks 2\nnonsense\n"), ParseError);
}

TEST_CASE("ring scenario: all success, silence, no leaks")
{
    for (Mode mode : {Mode::black_channel, Mode::ulfm}) {
        auto v = run_scenario(make_ring_exchange(4), mode, 2);
        CHECK_FALSE(v.deadlocked);
        CHECK(v.leak_count == 0);
        CHECK(v.err_sends == 0);
        for (auto& o : v.outcome)
            CHECK(o == "success");
        CHECK(check_expectations(make_ring_exchange(4), v).empty());
    }
}

TEST_CASE("expectation checking flags mismatches")
{
    auto s = make_single_signaller(3);
    auto v = run_scenario(s, Mode::black_channel, 0);
    CHECK(check_expectations(s, v).empty());
    s.expect.report = "[(0,43)]"; // wrong code
    CHECK_FALSE(check_expectations(s, v).empty());
    s.expect.report.reset();
    s.expect.outcome_all = "corrupted";
    CHECK_FALSE(check_expectations(s, v).empty());
}

TEST_CASE("oracle_failed_ranks sorts by rank and rejects an empty set")
{
    auto r = oracle_failed_ranks({{3, 9}});
    CHECK(r.to_string() == "[(3,9)]");
    auto r2 = oracle_failed_ranks({{3, 7}, {0, 42}});
    CHECK(r2.to_string() == "[(0,42),(3,7)]");
    CHECK_THROWS_AS(oracle_failed_ranks({}), UsageError);
}

TEST_CASE("kill scenarios are rejected in black-channel mode with the documented diagnostic")
{
    auto s = make_kill_one(3, 1);
    auto v = run_scenario(s, Mode::black_channel, 0);
    CHECK(v.rejected);
    CHECK(v.reject_reason == "hard faults unsupported in black-channel mode");
    CHECK_THROWS_AS(run_scenario_trace(s, Mode::black_channel, 0), UsageError);
    // and accepted in ulfm mode
    auto v2 = run_scenario(s, Mode::ulfm, 0);
    CHECK_FALSE(v2.rejected);
}

TEST_CASE("verdict text is a flat key/value record")
{
    auto v = run_scenario(make_single_signaller(2), Mode::black_channel, 0);
    auto text = v.to_text();
    CHECK(text.find("deadlocked=0") != std::string::npos);
    CHECK(text.find("outcome.0=propagated[(0,42)]") != std::string::npos);
    CHECK(text.find("errsends.tag0=1") != std::string::npos);
    CHECK(text.find("report=[(0,42)]") != std::string::npos);
}

TEST_CASE("explore of a matched pair yields exactly one verdict class")
{
    ExploreOptions opts;
    auto out = explore_scenario(make_ring_exchange(2), Mode::black_channel, opts);
    CHECK_FALSE(out.stats.partial);
    CHECK(out.verdicts.size() == 1);
    CHECK_FALSE(out.verdicts[0].deadlocked);
    for (auto& o : out.verdicts[0].outcome)
        CHECK(o == "success");
}

TEST_CASE("explore of simultaneous signallers: every verdict carries the same report")
{
    ExploreOptions opts;
    auto out = explore_scenario(make_two_signallers(3), Mode::black_channel, opts);
    CHECK_FALSE(out.stats.partial);
    REQUIRE(!out.verdicts.empty());
    const auto want = oracle_failed_ranks({{1, 7}, {2, 9}}).to_string();
    for (const auto& v : out.verdicts) {
        CHECK_FALSE(v.deadlocked);
        REQUIRE(v.report.has_value());
        CHECK(*v.report == want);
        CHECK(v.report_uniform);
        CHECK(v.outcome_uniform);
    }
}

TEST_CASE("explore pruning preserves the verdict set of scenario runs")
{
    for (Mode mode : {Mode::black_channel, Mode::ulfm}) {
        CAPTURE(to_string(mode));
        ExploreOptions pruned;
        ExploreOptions full;
        full.sleep_sets = false;
        auto a = explore_scenario(make_single_signaller(2), mode, pruned);
        auto b = explore_scenario(make_single_signaller(2), mode, full);
        auto keys = [](const ExploreOutcome& o) {
            std::set<std::string> k;
            for (const auto& v : o.verdicts)
                k.insert(v.key());
            return k;
        };
        CHECK(keys(a) == keys(b));
        CHECK(a.stats.runs <= b.stats.runs);
    }
}

TEST_CASE("scenario text drives drop and delay faults")
{
    const char* text = "name droppy\n"
                       "ranks 2\n"
                       "mode black-channel\n"
                       "0 0 drop 0->1 tag=7\n"
                       "program 0: isend 1 tag=7 \"x\"\n"
                       "program 1: irecv 0 tag=7 cap=8; wait\n";
    auto s = Scenario::parse(text);
    auto v = run_scenario(s, Mode::black_channel, 0);
    CHECK(v.deadlocked); // the only message was dropped, the waiter starves
}

TEST_CASE("error-mid-collective leaks under every explored schedule")
{
    for (Mode mode : {Mode::black_channel, Mode::ulfm}) {
        CAPTURE(to_string(mode));
        ExploreOptions opts;
        auto out = explore_scenario(make_error_mid_collective(3), mode, opts);
        CHECK_FALSE(out.stats.partial);
        REQUIRE(!out.verdicts.empty());
        for (const auto& v : out.verdicts) {
            CHECK_FALSE(v.deadlocked);
            CHECK(v.leak_count > 0);
        }
    }
}

TEST_CASE("seeded scenario runs are reproducible byte for byte")
{
    auto s = make_error_mid_collective(3);
    auto a = run_scenario_trace(s, Mode::ulfm, 77).serialize();
    auto b = run_scenario_trace(s, Mode::ulfm, 77).serialize();
    CHECK(a == b);
}

TEST_CASE("bench produces one row per iteration plus a summary")
{
    auto rows = run_bench(2, 3, Mode::black_channel);
    REQUIRE(rows.size() == 3);
    auto csv = bench_csv(rows);
    // header + 3 data rows + 1 summary row
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK(csv.rfind("summary,black-channel,2,", 0) == std::string::npos); // not first line
    CHECK(csv.find("iter,mode,ranks,sim_steps,messages,err_sends,wall_ns\n") == 0);
    CHECK(csv.find("summary,black-channel,2,") != std::string::npos);
}

TEST_CASE("bench step counts are deterministic and count n-1 notifications")
{
    auto a = run_bench(8, 4, Mode::black_channel);
    auto b = run_bench(8, 4, Mode::black_channel);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].sim_steps == b[i].sim_steps);
        CHECK(a[i].messages == b[i].messages);
        CHECK(a[i].err_sends == 7);
    }
    // ulfm mode reports its own counts; no cross-mode assertion
    auto u = run_bench(8, 2, Mode::ulfm);
    CHECK(u.size() == 2);
}

TEST_CASE("bench rejects degenerate group sizes")
{
    CHECK_THROWS_AS(run_bench(1, 1, Mode::black_channel), UsageError);
}

TEST_CASE("random signaller subsets: agreement, oracle reports and mode equivalence")
{
    std::mt19937_64 rng(424242);
    for (int trial = 0; trial < 25; ++trial) {
        const std::uint32_t n = 2 + static_cast<std::uint32_t>(rng() % 7);
        std::map<RankId, std::uint64_t> signallers;
        const std::uint32_t k = 1 + static_cast<std::uint32_t>(rng() % n);
        while (signallers.size() < k)
            signallers[static_cast<RankId>(rng() % n)] = 1 + (rng() & 0xffff);
        Scenario s;
        s.name = "random-signallers";
        s.ranks = n;
        s.programs.assign(n, {});
        for (std::uint32_t r = 0; r < n; ++r) {
            auto it = signallers.find(r);
            if (it != signallers.end()) {
                ProgStep st;
                st.kind = ProgStep::Kind::signal;
                st.value = it->second;
                s.programs[r] = {st};
            } else {
                ProgStep recv;
                recv.kind = ProgStep::Kind::irecv;
                recv.peer = kAnySource;
                recv.tag = 9;
                recv.capacity = 8;
                ProgStep wait;
                wait.kind = ProgStep::Kind::wait_one;
                s.programs[r] = {recv, wait};
            }
        }
        CAPTURE(trial);
        CAPTURE(n);
        const auto want = "propagated" + oracle_failed_ranks(signallers).to_string();
        const std::uint64_t seed = rng();
        auto bc = run_scenario(s, Mode::black_channel, seed);
        auto ul = run_scenario(s, Mode::ulfm, seed);
        REQUIRE_FALSE(bc.deadlocked);
        REQUIRE_FALSE(ul.deadlocked);
        for (std::uint32_t r = 0; r < n; ++r) {
            REQUIRE(bc.outcome[r] == want);
            REQUIRE(ul.outcome[r] == want);
        }
    }
}

TEST_CASE("mode equivalence on the soft-fault corpus for a handful of seeds")
{
    for (std::uint64_t seed : {0ull, 3ull, 11ull}) {
        for (const Scenario& s :
             {make_single_signaller(3), make_two_signallers(4), make_unwind(3),
              make_error_mid_collective(3), make_size1_signal()}) {
            CAPTURE(s.name);
            auto bc = run_scenario(s, Mode::black_channel, seed);
            auto ul = run_scenario(s, Mode::ulfm, seed);
            CHECK(bc.outcome == ul.outcome);
            CHECK(bc.report == ul.report);
        }
    }
}

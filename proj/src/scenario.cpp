#include <errprop/scenario.hpp>
#include <errprop/wire.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <deque>
#include <set>
#include <sstream>

namespace errprop {

const char* to_string(RunMode m)
{
    switch (m) {
    case RunMode::black_channel: return "black-channel";
    case RunMode::ulfm: return "ulfm";
    case RunMode::both: return "both";
    }
    return "?";
}

const char* to_string(Mode m)
{
    return m == Mode::black_channel ? "black-channel" : "ulfm";
}

namespace {

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_ws(std::string_view s)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t'))
            ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t')
            ++j;
        if (j > i)
            out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

std::uint64_t to_u64(std::string_view tok, std::string_view what)
{
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw ParseError("bad " + std::string(what) + ": '" + std::string(tok) + "'");
    return v;
}

std::string_view kv(std::string_view tok, std::string_view key)
{
    if (tok.substr(0, key.size()) != key || tok.size() <= key.size() || tok[key.size()] != '=')
        throw ParseError("expected '" + std::string(key) + "=...', got '" + std::string(tok) + "'");
    return tok.substr(key.size() + 1);
}

ReduceOp op_of(std::string_view tok)
{
    if (tok == "sum")
        return ReduceOp::sum;
    if (tok == "max")
        return ReduceOp::max;
    if (tok == "band")
        return ReduceOp::band;
    throw ParseError("unknown reduce op: '" + std::string(tok) + "'");
}

ProgStep parse_step(std::string_view text)
{
    auto toks = split_ws(trim(text));
    if (toks.empty())
        throw ParseError("empty program step");
    ProgStep st;
    const auto head = toks[0];
    if (head == "isend") {
        if (toks.size() < 3)
            throw ParseError("isend needs '<dst> tag=<t> \"payload\"'");
        st.kind = ProgStep::Kind::isend;
        st.peer = static_cast<RankId>(to_u64(toks[1], "dest"));
        st.tag = static_cast<Tag>(to_u64(kv(toks[2], "tag"), "tag"));
        auto q1 = text.find('"');
        auto q2 = text.rfind('"');
        if (q1 != std::string_view::npos && q2 > q1)
            st.payload = std::string(text.substr(q1 + 1, q2 - q1 - 1));
    } else if (head == "irecv") {
        if (toks.size() != 4)
            throw ParseError("irecv needs '<src|any> tag=<t> cap=<k>'");
        st.kind = ProgStep::Kind::irecv;
        st.peer = toks[1] == "any" ? kAnySource : static_cast<RankId>(to_u64(toks[1], "source"));
        st.tag = static_cast<Tag>(to_u64(kv(toks[2], "tag"), "tag"));
        st.capacity = to_u64(kv(toks[3], "cap"), "cap");
    } else if (head == "wait") {
        st.kind = (toks.size() > 1 && toks[1] == "all") ? ProgStep::Kind::wait_all
                                                        : ProgStep::Kind::wait_one;
    } else if (head == "signal") {
        if (toks.size() != 2)
            throw ParseError("signal needs '<code>'");
        st.kind = ProgStep::Kind::signal;
        st.value = to_u64(toks[1], "code");
    } else if (head == "unwind") {
        st.kind = ProgStep::Kind::unwind;
    } else if (head == "delay") {
        if (toks.size() != 2)
            throw ParseError("delay needs '<ticks>'");
        st.kind = ProgStep::Kind::delay;
        st.value = to_u64(toks[1], "ticks");
    } else if (head == "shrink") {
        st.kind = ProgStep::Kind::shrink;
    } else if (head == "allreduce") {
        if (toks.size() != 3)
            throw ParseError("allreduce needs '<sum|max|band> <value>'");
        st.kind = ProgStep::Kind::allreduce;
        st.op = op_of(toks[1]);
        st.value = to_u64(toks[2], "value");
    } else if (head == "barrier") {
        st.kind = ProgStep::Kind::barrier;
    } else {
        throw ParseError("unknown program step: '" + std::string(head) + "'");
    }
    return st;
}

std::string format_step(const ProgStep& st)
{
    std::ostringstream os;
    switch (st.kind) {
    case ProgStep::Kind::isend:
        os << "isend " << st.peer << " tag=" << st.tag << " \"" << st.payload << '"';
        break;
    case ProgStep::Kind::irecv:
        os << "irecv ";
        if (st.peer == kAnySource)
            os << "any";
        else
            os << st.peer;
        os << " tag=" << st.tag << " cap=" << st.capacity;
        break;
    case ProgStep::Kind::wait_one:
        os << "wait";
        break;
    case ProgStep::Kind::wait_all:
        os << "wait all";
        break;
    case ProgStep::Kind::signal:
        os << "signal " << st.value;
        break;
    case ProgStep::Kind::unwind:
        os << "unwind";
        break;
    case ProgStep::Kind::delay:
        os << "delay " << st.value;
        break;
    case ProgStep::Kind::shrink:
        os << "shrink";
        break;
    case ProgStep::Kind::allreduce:
        os << "allreduce " << to_string(st.op) << ' ' << st.value;
        break;
    case ProgStep::Kind::barrier:
        os << "barrier";
        break;
    }
    return os.str();
}

void parse_expect(std::string_view rest, Expectations& ex)
{
    auto toks = split_ws(rest);
    if (toks.empty())
        throw ParseError("empty expect line");
    if (toks[0] == "deadlock" && toks.size() == 2) {
        ex.deadlock = (toks[1] == "true");
    } else if (toks[0] == "outcome" && toks.size() == 3) {
        if (toks[1] == "all")
            ex.outcome_all = std::string(toks[2]);
        else
            ex.outcome[static_cast<RankId>(to_u64(toks[1], "rank"))] = std::string(toks[2]);
    } else if (toks[0] == "report" && toks.size() == 2) {
        ex.report = std::string(toks[1]);
    } else if (toks[0] == "leaks" && toks.size() == 2) {
        if (toks[1] == "0" || toks[1] == "zero")
            ex.leaks_positive = false;
        else if (toks[1] == ">0" || toks[1] == "positive")
            ex.leaks_positive = true;
        else
            throw ParseError("expect leaks takes '0' or '>0'");
    } else if (toks[0] == "errsends" && toks.size() == 3) {
        ex.errsends[static_cast<RankId>(to_u64(toks[1], "rank"))] = to_u64(toks[2], "count");
    } else if (toks[0] == "rejected") {
        ex.rejected_substr = std::string(trim(rest.substr(rest.find("rejected") + 8)));
    } else {
        throw ParseError("unknown expect line: '" + std::string(rest) + "'");
    }
}

} // namespace

Scenario Scenario::parse(std::string_view text)
{
    Scenario s;
    s.programs.clear();
    bool ranks_seen = false;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        std::string_view line =
            text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
        line = trim(line);
        if (line.empty() || line.front() == '#')
            continue;
        if (line.starts_with("name ")) {
            s.name = std::string(trim(line.substr(5)));
        } else if (line.starts_with("ranks ")) {
            s.ranks = static_cast<std::uint32_t>(to_u64(trim(line.substr(6)), "ranks"));
            ranks_seen = true;
            s.programs.assign(s.ranks, {});
        } else if (line.starts_with("mode ")) {
            auto m = trim(line.substr(5));
            if (m == "black-channel")
                s.mode = RunMode::black_channel;
            else if (m == "ulfm")
                s.mode = RunMode::ulfm;
            else if (m == "both")
                s.mode = RunMode::both;
            else
                throw ParseError("unknown mode: '" + std::string(m) + "'");
        } else if (line.starts_with("program ")) {
            if (!ranks_seen)
                throw ParseError("'ranks' must precede 'program' lines");
            auto colon = line.find(':');
            if (colon == std::string_view::npos)
                throw ParseError("program line needs '<rank>: <steps>'");
            const auto r = static_cast<RankId>(to_u64(trim(line.substr(8, colon - 8)), "rank"));
            if (r >= s.ranks)
                throw ParseError("program rank out of range");
            auto body = line.substr(colon + 1);
            std::size_t p = 0;
            while (p <= body.size()) {
                auto semi = body.find(';', p);
                auto one = body.substr(p, semi == std::string_view::npos ? body.size() - p
                                                                         : semi - p);
                if (!trim(one).empty())
                    s.programs[r].push_back(parse_step(one));
                if (semi == std::string_view::npos)
                    break;
                p = semi + 1;
            }
        } else if (line.starts_with("expect ")) {
            parse_expect(trim(line.substr(7)), s.expect);
        } else if (!line.empty() && line.front() >= '0' && line.front() <= '9') {
            FaultEvent ev;
            if (FaultScript::parse_line(line, ev))
                s.faults.events.push_back(ev);
        } else {
            throw ParseError("unrecognised scenario line: '" + std::string(line) + "'");
        }
    }
    if (!ranks_seen)
        throw ParseError("scenario needs a 'ranks' line");
    std::stable_sort(s.faults.events.begin(), s.faults.events.end(),
                     [](const FaultEvent& a, const FaultEvent& b) { return a.time < b.time; });
    for (const auto& prog : s.programs)
        for (const auto& st : prog)
            if ((st.kind == ProgStep::Kind::isend || st.kind == ProgStep::Kind::irecv) &&
                st.peer != kAnySource && st.peer >= s.ranks)
                throw ParseError("program references a rank outside the group");
    return s;
}

std::string Scenario::format() const
{
    std::ostringstream os;
    os << "name " << name << '\n';
    os << "ranks " << ranks << '\n';
    os << "mode " << to_string(mode) << '\n';
    os << faults.format();
    for (std::uint32_t r = 0; r < ranks; ++r) {
        if (programs[r].empty())
            continue;
        os << "program " << r << ": ";
        for (std::size_t i = 0; i < programs[r].size(); ++i) {
            if (i)
                os << "; ";
            os << format_step(programs[r][i]);
        }
        os << '\n';
    }
    if (expect.deadlock)
        os << "expect deadlock " << (*expect.deadlock ? "true" : "false") << '\n';
    if (expect.outcome_all)
        os << "expect outcome all " << *expect.outcome_all << '\n';
    for (const auto& [r, label] : expect.outcome)
        os << "expect outcome " << r << ' ' << label << '\n';
    if (expect.report)
        os << "expect report " << *expect.report << '\n';
    if (expect.leaks_positive)
        os << "expect leaks " << (*expect.leaks_positive ? ">0" : "0") << '\n';
    for (const auto& [r, n] : expect.errsends)
        os << "expect errsends " << r << ' ' << n << '\n';
    if (expect.rejected_substr)
        os << "expect rejected " << *expect.rejected_substr << '\n';
    return os.str();
}

// --- program interpreter ----------------------------------------------------------

namespace {

RankProgram make_program(std::vector<ProgStep> steps, Mode mode)
{
    return [steps = std::move(steps), mode](Endpoint& ep) {
        Instance inst = Instance::acquire(ep, mode);
        Comm& world = inst.world();
        std::deque<CommFuture> futures;
        const auto record = [&ep](const WaitOutcome& o) { ep.note_outcome(outcome_label(o)); };
        for (const auto& st : steps) {
            switch (st.kind) {
            case ProgStep::Kind::isend:
                futures.push_back(world.isend(st.peer, st.tag, bytes_of(st.payload)));
                break;
            case ProgStep::Kind::irecv:
                futures.push_back(world.irecv(st.peer, st.tag, st.capacity));
                break;
            case ProgStep::Kind::wait_one: {
                if (futures.empty())
                    throw UsageError("wait step with no pending future");
                CommFuture f = std::move(futures.front());
                futures.pop_front();
                record(world.wait(f));
                break;
            }
            case ProgStep::Kind::wait_all:
                while (!futures.empty()) {
                    CommFuture f = std::move(futures.front());
                    futures.pop_front();
                    record(world.wait(f));
                }
                break;
            case ProgStep::Kind::signal:
                record(world.signal_error(st.value));
                break;
            case ProgStep::Kind::unwind: {
                auto o = world.scope_exit(true);
                if (o)
                    record(*o);
                break;
            }
            case ProgStep::Kind::delay:
                ep.sleep_for(st.value);
                break;
            case ProgStep::Kind::shrink: {
                auto sub = world.shrink();
                std::ostringstream os;
                os << "shrunk[size=" << sub->size() << ";members=";
                for (std::size_t i = 0; i < sub->group().size(); ++i) {
                    if (i)
                        os << ',';
                    os << sub->group()[i];
                }
                os << ']';
                ep.note_outcome(os.str());
                break;
            }
            case ProgStep::Kind::allreduce:
                futures.push_back(world.all_reduce(st.value, st.op));
                break;
            case ProgStep::Kind::barrier:
                futures.push_back(world.barrier());
                break;
            }
        }
        // explicit clean scope exit: joins and records a late-arriving episode
        auto o = world.scope_exit(false);
        if (o)
            record(*o);
    };
}

} // namespace

std::vector<RankProgram> build_programs(const Scenario& s, Mode mode)
{
    if (s.programs.size() != s.ranks)
        throw UsageError("scenario has a program count mismatch");
    std::vector<RankProgram> out;
    out.reserve(s.ranks);
    for (std::uint32_t r = 0; r < s.ranks; ++r)
        out.push_back(make_program(s.programs[r], mode));
    return out;
}

// --- verdict extraction ----------------------------------------------------------

Verdict verdict_from_trace(const Trace& t)
{
    Verdict v;
    v.deadlocked = t.deadlocked;
    v.truncated = t.truncated;
    v.steps = t.steps;
    v.outcome.assign(t.ranks, "none");
    v.err_tag0_sends_by_rank.assign(t.ranks, 0);
    std::map<ChannelId, ChannelKind> kinds;
    std::vector<std::string> last_err(t.ranks), last_any(t.ranks);
    for (const auto& e : t.events) {
        switch (e.kind) {
        case TraceEvent::Kind::chan_open:
            kinds[e.chan] = static_cast<ChannelKind>(e.a);
            break;
        case TraceEvent::Kind::post_send: {
            auto it = kinds.find(e.chan);
            const ChannelKind k = it == kinds.end() ? ChannelKind::data : it->second;
            if (k == ChannelKind::data) {
                ++v.data_sends;
            } else if (k == ChannelKind::error) {
                ++v.err_sends;
                if (e.tag == 0) {
                    ++v.err_tag0_sends_total;
                    ++v.err_tag0_sends_by_rank[e.src];
                }
            } else {
                ++v.ctrl_sends;
            }
            break;
        }
        case TraceEvent::Kind::deliver:
            ++v.deliveries;
            break;
        case TraceEvent::Kind::leak:
            v.leak_count += e.a;
            break;
        case TraceEvent::Kind::outcome:
            if (e.note.rfind("shrunk", 0) == 0) {
                v.shrink_notes[e.rank] = e.note;
            } else {
                last_any[e.rank] = e.note;
                if (e.note != "success")
                    last_err[e.rank] = e.note;
            }
            break;
        default:
            break;
        }
    }
    for (std::uint32_t r = 0; r < t.ranks; ++r) {
        if (!last_err[r].empty())
            v.outcome[r] = last_err[r];
        else if (!last_any[r].empty())
            v.outcome[r] = last_any[r];
        v.rank_end.push_back(to_string(t.rank_end[r]));
        if (t.rank_end[r] == RankEnd::failed)
            v.outcome[r] = "program-error(" + t.rank_note[r] + ")";
    }
    std::set<std::string> err_kinds;
    std::set<std::string> reports;
    for (const auto& s : v.outcome) {
        if (s.rfind("propagated", 0) == 0) {
            err_kinds.insert("propagated");
            reports.insert(s.substr(10));
        } else if (s == "corrupted") {
            err_kinds.insert("corrupted");
        }
    }
    v.outcome_uniform = err_kinds.size() <= 1;
    v.report_uniform = reports.size() <= 1;
    if (!reports.empty())
        v.report = *reports.begin();
    return v;
}

std::string Verdict::key() const
{
    std::ostringstream os;
    os << rejected << '|' << deadlocked << '|' << truncated;
    for (const auto& s : outcome)
        os << '|' << s;
    for (const auto& s : rank_end)
        os << '|' << s;
    for (const auto& [r, n] : shrink_notes)
        os << '|' << r << ':' << n;
    return os.str();
}

std::string Verdict::to_text() const
{
    std::ostringstream os;
    os << "rejected=" << rejected;
    if (rejected)
        os << " reason=\"" << reject_reason << '"';
    os << '\n';
    os << "deadlocked=" << deadlocked << '\n';
    os << "truncated=" << truncated << '\n';
    os << "steps=" << steps << '\n';
    os << "leaks=" << leak_count << '\n';
    os << "sends.data=" << data_sends << " sends.err=" << err_sends
       << " sends.ctrl=" << ctrl_sends << " errsends.tag0=" << err_tag0_sends_total
       << " deliveries=" << deliveries << '\n';
    for (std::size_t r = 0; r < outcome.size(); ++r)
        os << "outcome." << r << '=' << outcome[r] << '\n';
    for (std::size_t r = 0; r < rank_end.size(); ++r)
        os << "end." << r << '=' << rank_end[r] << '\n';
    for (const auto& [r, n] : shrink_notes)
        os << "shrink." << r << '=' << n << '\n';
    if (report)
        os << "report=" << *report << '\n';
    return os.str();
}

// --- runs ----------------------------------------------------------

std::optional<std::string> reject_reason(const Scenario& s, Mode mode)
{
    if (mode == Mode::black_channel && s.faults.has_kill())
        return "hard faults unsupported in black-channel mode";
    return std::nullopt;
}

Trace run_scenario_trace(const Scenario& s, Mode mode, std::uint64_t seed)
{
    if (reject_reason(s, mode))
        throw UsageError("scenario not runnable in this mode");
    SimOptions opts;
    opts.ranks = s.ranks;
    opts.liveness = (mode == Mode::ulfm);
    SimTransport transport(opts);
    transport.set_fault_script(s.faults);
    return transport.run(build_programs(s, mode), seed);
}

Verdict run_scenario(const Scenario& s, Mode mode, std::uint64_t seed)
{
    if (auto r = reject_reason(s, mode)) {
        Verdict v;
        v.rejected = true;
        v.reject_reason = *r;
        return v;
    }
    return verdict_from_trace(run_scenario_trace(s, mode, seed));
}

ExploreOutcome explore_scenario(const Scenario& s, Mode mode, const ExploreOptions& opts)
{
    ExploreOutcome out;
    if (auto r = reject_reason(s, mode)) {
        Verdict v;
        v.rejected = true;
        v.reject_reason = *r;
        out.verdicts.push_back(std::move(v));
        return out;
    }
    SimOptions simopts;
    simopts.ranks = s.ranks;
    simopts.liveness = (mode == Mode::ulfm);
    SimTransport transport(simopts);
    transport.set_fault_script(s.faults);
    const auto programs = build_programs(s, mode);
    std::set<std::string> seen;
    out.stats = transport.explore(programs, opts, [&](const Trace& t) {
        Verdict v = verdict_from_trace(t);
        if (seen.insert(v.key()).second)
            out.verdicts.push_back(std::move(v));
    });
    return out;
}

ErrorReport oracle_failed_ranks(const std::map<RankId, std::uint64_t>& failed)
{
    if (failed.empty())
        throw UsageError("oracle needs at least one failed rank");
    ErrorReport rep;
    rep.entries.reserve(failed.size());
    for (const auto& [rank, code] : failed)
        rep.entries.push_back({rank, code});
    std::sort(rep.entries.begin(), rep.entries.end(),
              [](const ReportEntry& a, const ReportEntry& b) { return a.rank < b.rank; });
    return rep;
}

std::vector<std::string> check_expectations(const Scenario& s, const Verdict& v)
{
    std::vector<std::string> bad;
    const auto& ex = s.expect;
    if (ex.rejected_substr) {
        if (!v.rejected || v.reject_reason.find(*ex.rejected_substr) == std::string::npos)
            bad.push_back("expected rejection containing '" + *ex.rejected_substr + "'");
        return bad;
    }
    if (v.rejected) {
        bad.push_back("unexpected rejection: " + v.reject_reason);
        return bad;
    }
    if (ex.deadlock && v.deadlocked != *ex.deadlock)
        bad.push_back("deadlock mismatch");
    auto match = [&](RankId r, const std::string& want) {
        if (r >= v.outcome.size() || v.outcome[r].rfind(want, 0) != 0)
            bad.push_back("outcome." + std::to_string(r) + "='" +
                          (r < v.outcome.size() ? v.outcome[r] : "?") + "' wanted prefix '" +
                          want + "'");
    };
    if (ex.outcome_all)
        for (std::uint32_t r = 0; r < s.ranks; ++r)
            match(r, *ex.outcome_all);
    for (const auto& [r, want] : ex.outcome)
        match(r, want);
    if (ex.report && (!v.report || *v.report != *ex.report))
        bad.push_back("report mismatch: got " + (v.report ? *v.report : std::string("none")) +
                      " wanted " + *ex.report);
    if (ex.leaks_positive) {
        if (*ex.leaks_positive && v.leak_count == 0)
            bad.push_back("expected leaks, saw none");
        if (!*ex.leaks_positive && v.leak_count != 0)
            bad.push_back("expected no leaks, saw " + std::to_string(v.leak_count));
    }
    for (const auto& [r, n] : ex.errsends)
        if (r >= v.err_tag0_sends_by_rank.size() || v.err_tag0_sends_by_rank[r] != n)
            bad.push_back("errsends." + std::to_string(r) + " mismatch");
    return bad;
}

// --- corpus ----------------------------------------------------------

Scenario make_ring_exchange(std::uint32_t n)
{
    Scenario s;
    s.name = "ring-exchange-" + std::to_string(n);
    s.ranks = n;
    s.mode = RunMode::both;
    s.programs.assign(n, {});
    for (std::uint32_t r = 0; r < n; ++r) {
        ProgStep send;
        send.kind = ProgStep::Kind::isend;
        send.peer = (r + 1) % n;
        send.tag = 7;
        send.payload = "m" + std::to_string(r);
        ProgStep recv;
        recv.kind = ProgStep::Kind::irecv;
        recv.peer = (r + n - 1) % n;
        recv.tag = 7;
        recv.capacity = 16;
        ProgStep wait;
        wait.kind = ProgStep::Kind::wait_all;
        s.programs[r] = {send, recv, wait};
    }
    s.expect.deadlock = false;
    s.expect.outcome_all = "success";
    s.expect.leaks_positive = false;
    for (std::uint32_t r = 0; r < n; ++r)
        s.expect.errsends[r] = 0;
    return s;
}

namespace {

std::vector<ProgStep> waiter_steps()
{
    ProgStep recv;
    recv.kind = ProgStep::Kind::irecv;
    recv.peer = kAnySource;
    recv.tag = 9;
    recv.capacity = 8;
    ProgStep wait;
    wait.kind = ProgStep::Kind::wait_one;
    return {recv, wait};
}

ProgStep signal_step(std::uint64_t code)
{
    ProgStep st;
    st.kind = ProgStep::Kind::signal;
    st.value = code;
    return st;
}

} // namespace

Scenario make_single_signaller(std::uint32_t n, std::uint64_t code)
{
    Scenario s;
    s.name = "single-signaller-" + std::to_string(n);
    s.ranks = n;
    s.mode = RunMode::both;
    s.programs.assign(n, {});
    s.programs[0] = {signal_step(code)};
    for (std::uint32_t r = 1; r < n; ++r)
        s.programs[r] = waiter_steps();
    s.expect.deadlock = false;
    s.expect.outcome_all = "propagated";
    s.expect.report = "[(0," + std::to_string(code) + ")]";
    return s;
}

Scenario make_two_signallers(std::uint32_t n, std::uint64_t c1, std::uint64_t c2)
{
    if (n < 3)
        throw UsageError("two-signaller scenario needs at least 3 ranks");
    Scenario s;
    s.name = "two-signallers-" + std::to_string(n);
    s.ranks = n;
    s.mode = RunMode::both;
    s.programs.assign(n, {});
    for (std::uint32_t r = 0; r < n; ++r)
        s.programs[r] = waiter_steps();
    s.programs[1] = {signal_step(c1)};
    s.programs[2] = {signal_step(c2)};
    s.expect.deadlock = false;
    s.expect.outcome_all = "propagated";
    s.expect.report = "[(1," + std::to_string(c1) + "),(2," + std::to_string(c2) + ")]";
    return s;
}

Scenario make_unwind(std::uint32_t n)
{
    Scenario s;
    s.name = "unwind-" + std::to_string(n);
    s.ranks = n;
    s.mode = RunMode::both;
    s.programs.assign(n, {});
    ProgStep u;
    u.kind = ProgStep::Kind::unwind;
    s.programs[0] = {u};
    for (std::uint32_t r = 1; r < n; ++r)
        s.programs[r] = waiter_steps();
    s.expect.deadlock = false;
    s.expect.outcome_all = "corrupted";
    return s;
}

Scenario make_signal_plus_unwind(std::uint32_t n)
{
    if (n < 2)
        throw UsageError("mixed scenario needs at least 2 ranks");
    Scenario s = make_unwind(n);
    s.name = "signal-plus-unwind-" + std::to_string(n);
    ProgStep u;
    u.kind = ProgStep::Kind::unwind;
    s.programs[0] = {signal_step(3)};
    s.programs[1] = {u};
    s.expect.outcome_all = "corrupted";
    return s;
}

Scenario make_error_mid_collective(std::uint32_t n)
{
    Scenario s;
    s.name = "error-mid-collective-" + std::to_string(n);
    s.ranks = n;
    s.mode = RunMode::both;
    s.programs.assign(n, {});
    for (std::uint32_t r = 0; r < n; ++r) {
        ProgStep a;
        a.kind = ProgStep::Kind::allreduce;
        a.op = ReduceOp::sum;
        a.value = r;
        if (r == 0) {
            s.programs[r] = {a, signal_step(5)};
        } else {
            ProgStep w;
            w.kind = ProgStep::Kind::wait_one;
            s.programs[r] = {a, w};
        }
    }
    s.expect.deadlock = false;
    s.expect.outcome_all = "propagated";
    s.expect.report = "[(0,5)]";
    s.expect.leaks_positive = true;
    return s;
}

Scenario make_allreduce_clean(std::uint32_t n)
{
    Scenario s;
    s.name = "allreduce-clean-" + std::to_string(n);
    s.ranks = n;
    s.mode = RunMode::both;
    s.programs.assign(n, {});
    for (std::uint32_t r = 0; r < n; ++r) {
        ProgStep a;
        a.kind = ProgStep::Kind::allreduce;
        a.op = ReduceOp::sum;
        a.value = r;
        ProgStep w;
        w.kind = ProgStep::Kind::wait_one;
        s.programs[r] = {a, w};
    }
    s.expect.deadlock = false;
    s.expect.outcome_all = "success";
    s.expect.leaks_positive = false;
    for (std::uint32_t r = 0; r < n; ++r)
        s.expect.errsends[r] = 0;
    return s;
}

Scenario make_kill_one(std::uint32_t n, RankId victim)
{
    if (victim >= n)
        throw UsageError("victim out of range");
    Scenario s;
    s.name = "kill-rank-" + std::to_string(victim) + "-of-" + std::to_string(n);
    s.ranks = n;
    s.mode = RunMode::ulfm;
    s.programs.assign(n, {});
    FaultEvent kill;
    kill.time = 0;
    kill.rank = victim;
    kill.kind = FaultEvent::Kind::kill;
    s.faults.events.push_back(kill);
    for (std::uint32_t r = 0; r < n; ++r) {
        if (r == victim) {
            s.programs[r] = waiter_steps();
            continue;
        }
        ProgStep recv;
        recv.kind = ProgStep::Kind::irecv;
        recv.peer = victim;
        recv.tag = 3;
        recv.capacity = 8;
        ProgStep wait;
        wait.kind = ProgStep::Kind::wait_one;
        ProgStep shrink;
        shrink.kind = ProgStep::Kind::shrink;
        s.programs[r] = {recv, wait, shrink};
    }
    s.expect.deadlock = false;
    for (std::uint32_t r = 0; r < n; ++r)
        if (r != victim)
            s.expect.outcome[r] = "corrupted";
    return s;
}

Scenario make_size1_signal()
{
    Scenario s;
    s.name = "size1-signal";
    s.ranks = 1;
    s.mode = RunMode::both;
    s.programs.assign(1, {});
    s.programs[0] = {signal_step(5)};
    s.expect.deadlock = false;
    s.expect.outcome_all = "propagated";
    s.expect.report = "[(0,5)]";
    return s;
}

// --- bench ----------------------------------------------------------

std::vector<BenchRow> run_bench(std::uint32_t ranks, std::uint64_t iters, Mode mode)
{
    if (ranks < 2)
        throw UsageError("bench needs at least 2 ranks");
    std::vector<BenchRow> rows;
    rows.reserve(iters);
    for (std::uint64_t iter = 0; iter < iters; ++iter) {
        SimOptions opts;
        opts.ranks = ranks;
        opts.liveness = (mode == Mode::ulfm);
        SimTransport transport(opts);
        std::vector<RankProgram> programs;
        for (std::uint32_t r = 0; r < ranks; ++r)
            programs.push_back([mode](Endpoint& ep) {
                Instance inst = Instance::acquire(ep, mode);
                auto dup = inst.world().duplicate();
                if (ep.rank() == 0) {
                    dup->signal_error(42);
                } else {
                    CommFuture f = dup->irecv(kAnySource, 9, 8);
                    dup->wait(f);
                }
            });
        const auto t0 = std::chrono::steady_clock::now();
        const Trace trace = transport.run(programs, iter);
        const auto t1 = std::chrono::steady_clock::now();
        const Verdict v = verdict_from_trace(trace);
        BenchRow row;
        row.iter = iter;
        row.mode = mode;
        row.ranks = ranks;
        row.sim_steps = trace.steps;
        row.messages = v.deliveries;
        row.err_sends = v.err_tag0_sends_total;
        row.wall_ns = static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
        rows.push_back(row);
    }
    return rows;
}

namespace {

std::string triplet(std::vector<std::uint64_t> vals)
{
    std::sort(vals.begin(), vals.end());
    const std::uint64_t lo = vals.front();
    const std::uint64_t hi = vals.back();
    const std::uint64_t med = vals[vals.size() / 2];
    std::ostringstream os;
    os << lo << ':' << med << ':' << hi;
    return os.str();
}

} // namespace

std::string bench_csv(const std::vector<BenchRow>& rows)
{
    std::ostringstream os;
    os << "iter,mode,ranks,sim_steps,messages,err_sends,wall_ns\n";
    std::vector<std::uint64_t> steps, msgs, errs, walls;
    for (const auto& r : rows) {
        os << r.iter << ',' << to_string(r.mode) << ',' << r.ranks << ',' << r.sim_steps << ','
           << r.messages << ',' << r.err_sends << ',' << r.wall_ns << '\n';
        steps.push_back(r.sim_steps);
        msgs.push_back(r.messages);
        errs.push_back(r.err_sends);
        walls.push_back(r.wall_ns);
    }
    if (!rows.empty()) {
        os << "summary," << to_string(rows.front().mode) << ',' << rows.front().ranks << ','
           << triplet(steps) << ',' << triplet(msgs) << ',' << triplet(errs) << ','
           << triplet(walls) << '\n';
    }
    return os.str();
}

} // namespace errprop

#include <errprop/fault_script.hpp>

#include <algorithm>
#include <charconv>
#include <sstream>

namespace errprop {

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

std::uint64_t parse_u64(std::string_view tok, std::string_view what)
{
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw ParseError("bad " + std::string(what) + ": '" + std::string(tok) + "'");
    return v;
}

std::int64_t parse_i64(std::string_view tok, std::string_view what)
{
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw ParseError("bad " + std::string(what) + ": '" + std::string(tok) + "'");
    return v;
}

// "<src>-><dst>"
void parse_pattern_ranks(std::string_view tok, MessagePattern& p)
{
    auto arrow = tok.find("->");
    if (arrow == std::string_view::npos)
        throw ParseError("bad message pattern: '" + std::string(tok) + "'");
    p.src = static_cast<RankId>(parse_u64(tok.substr(0, arrow), "pattern src"));
    p.dst = static_cast<RankId>(parse_u64(tok.substr(arrow + 2), "pattern dst"));
}

std::string_view expect_kv(std::string_view tok, std::string_view key)
{
    if (tok.substr(0, key.size()) != key || tok.size() <= key.size() || tok[key.size()] != '=')
        throw ParseError("expected '" + std::string(key) + "=...', got '" + std::string(tok) + "'");
    return tok.substr(key.size() + 1);
}

} // namespace

bool FaultScript::has_kill() const
{
    return std::any_of(events.begin(), events.end(),
                       [](const FaultEvent& e) { return e.kind == FaultEvent::Kind::kill; });
}

std::vector<RankId> FaultScript::killed_ranks() const
{
    std::vector<RankId> out;
    for (const auto& e : events)
        if (e.kind == FaultEvent::Kind::kill)
            out.push_back(e.rank);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

bool FaultScript::parse_line(std::string_view line, FaultEvent& out)
{
    line = trim(line);
    if (line.empty() || line.front() == '#')
        return false;
    auto toks = split_ws(line);
    if (toks.size() < 3)
        throw ParseError("short fault line: '" + std::string(line) + "'");
    FaultEvent ev;
    ev.time = parse_u64(toks[0], "time");
    ev.rank = static_cast<RankId>(parse_u64(toks[1], "rank"));
    if (toks[2] == "kill") {
        if (toks.size() != 3)
            throw ParseError("kill takes no arguments: '" + std::string(line) + "'");
        ev.kind = FaultEvent::Kind::kill;
    } else if (toks[2] == "drop") {
        if (toks.size() != 5)
            throw ParseError("drop needs '<src>-><dst> tag=<t>': '" + std::string(line) + "'");
        ev.kind = FaultEvent::Kind::drop;
        parse_pattern_ranks(toks[3], ev.pattern);
        ev.pattern.tag = parse_i64(expect_kv(toks[4], "tag"), "tag");
    } else if (toks[2] == "delay") {
        if (toks.size() != 6)
            throw ParseError("delay needs '<src>-><dst> tag=<t> by=<dt>': '" + std::string(line) + "'");
        ev.kind = FaultEvent::Kind::delay;
        parse_pattern_ranks(toks[3], ev.pattern);
        ev.pattern.tag = parse_i64(expect_kv(toks[4], "tag"), "tag");
        ev.delay_by = parse_u64(expect_kv(toks[5], "by"), "by");
    } else {
        throw ParseError("unknown fault kind: '" + std::string(toks[2]) + "'");
    }
    out = ev;
    return true;
}

FaultScript FaultScript::parse(std::string_view text)
{
    FaultScript fs;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        FaultEvent ev;
        if (parse_line(line, ev))
            fs.events.push_back(ev);
        if (nl == std::string_view::npos)
            break;
        pos = nl + 1;
    }
    std::stable_sort(fs.events.begin(), fs.events.end(),
                     [](const FaultEvent& a, const FaultEvent& b) { return a.time < b.time; });
    return fs;
}

std::string FaultScript::format() const
{
    std::ostringstream os;
    for (const auto& e : events) {
        os << e.time << ' ' << e.rank << ' ';
        switch (e.kind) {
        case FaultEvent::Kind::kill:
            os << "kill";
            break;
        case FaultEvent::Kind::drop:
            os << "drop " << e.pattern.src << "->" << e.pattern.dst << " tag=" << e.pattern.tag;
            break;
        case FaultEvent::Kind::delay:
            os << "delay " << e.pattern.src << "->" << e.pattern.dst << " tag=" << e.pattern.tag
               << " by=" << e.delay_by;
            break;
        }
        os << '\n';
    }
    return os.str();
}

} // namespace errprop

#include <errprop/trace.hpp>

#include <sstream>

namespace errprop {

const char* to_string(TraceEvent::Kind k)
{
    switch (k) {
    case TraceEvent::Kind::chan_open: return "chanopen";
    case TraceEvent::Kind::chan_close: return "chanclose";
    case TraceEvent::Kind::post_send: return "send";
    case TraceEvent::Kind::post_recv: return "recv";
    case TraceEvent::Kind::deliver: return "deliver";
    case TraceEvent::Kind::cancel: return "cancel";
    case TraceEvent::Kind::req_error: return "reqerr";
    case TraceEvent::Kind::kill: return "kill";
    case TraceEvent::Kind::drop: return "drop";
    case TraceEvent::Kind::delay_msg: return "delaymsg";
    case TraceEvent::Kind::sleep: return "sleep";
    case TraceEvent::Kind::runtime: return "runtime";
    case TraceEvent::Kind::outcome: return "outcome";
    case TraceEvent::Kind::leak: return "leak";
    }
    return "?";
}

const char* to_string(RankEnd e)
{
    switch (e) {
    case RankEnd::done: return "done";
    case RankEnd::blocked: return "blocked";
    case RankEnd::killed: return "killed";
    case RankEnd::failed: return "failed";
    }
    return "?";
}

std::string Trace::serialize() const
{
    std::ostringstream os;
    for (const auto& e : events) {
        os << e.step << ' ' << to_string(e.kind);
        switch (e.kind) {
        case TraceEvent::Kind::chan_open:
            os << ' ' << e.rank << ' ' << e.chan << ' ' << e.a;
            break;
        case TraceEvent::Kind::chan_close:
            os << ' ' << e.rank << ' ' << e.chan;
            break;
        case TraceEvent::Kind::post_send:
            os << ' ' << e.req << ' ' << e.src << ' ' << e.dst << ' ' << e.chan << ' ' << e.tag
               << ' ' << e.bytes << ' ' << e.a;
            break;
        case TraceEvent::Kind::post_recv:
            os << ' ' << e.req << ' ' << e.rank << ' ';
            if (e.src == kAnySource)
                os << '*';
            else
                os << e.src;
            os << ' ' << e.chan << ' ' << e.tag << ' ' << e.a;
            break;
        case TraceEvent::Kind::deliver:
            os << ' ' << e.env << ' ' << e.req << ' ' << e.req2 << ' ' << e.src << ' ' << e.dst
               << ' ' << e.chan << ' ' << e.tag << ' ' << e.bytes << ' ' << e.a;
            break;
        case TraceEvent::Kind::cancel:
            os << ' ' << e.req << ' ' << e.rank << ' ' << e.a;
            break;
        case TraceEvent::Kind::req_error:
            os << ' ' << e.req << ' ' << e.rank << ' ' << e.a;
            break;
        case TraceEvent::Kind::kill:
            os << ' ' << e.rank;
            break;
        case TraceEvent::Kind::drop:
            os << ' ' << e.env << ' ' << e.src << ' ' << e.dst << ' ' << e.chan << ' ' << e.tag;
            break;
        case TraceEvent::Kind::delay_msg:
            os << ' ' << e.env << ' ' << e.src << ' ' << e.dst << ' ' << e.chan << ' ' << e.tag
               << ' ' << e.a;
            break;
        case TraceEvent::Kind::sleep:
            os << ' ' << e.rank << ' ' << e.a;
            break;
        case TraceEvent::Kind::runtime:
            os << ' ' << e.rank << ' ' << (e.a ? "init" : "final");
            break;
        case TraceEvent::Kind::outcome:
            os << ' ' << e.rank << ' ' << e.note;
            break;
        case TraceEvent::Kind::leak:
            os << ' ' << e.rank << ' ' << e.a;
            break;
        }
        os << '\n';
    }
    os << "end steps=" << steps << " deadlocked=" << (deadlocked ? 1 : 0)
       << " truncated=" << (truncated ? 1 : 0);
    for (std::uint32_t r = 0; r < ranks; ++r)
        os << ' ' << r << ':' << to_string(rank_end[r]);
    os << '\n';
    return os.str();
}

} // namespace errprop

#pragma once

#include <errprop/transport.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace errprop {

// One record of the deterministic event log. Fields are interpreted per
// kind; unused fields stay zero so serialization is stable.
struct TraceEvent {
    enum class Kind : std::uint8_t {
        chan_open,  // rank chan kindlabel
        chan_close, // rank chan
        post_send,  // req src dst chan tag bytes a=sync
        post_recv,  // req rank src(any=*) chan tag a=capacity
        deliver,    // env req(send) req2(recv;0 for drain) src dst chan tag bytes a=how(0 sched,1 test,2 drain)
        cancel,     // req rank a=ok
        req_error,  // req rank a=ReqError
        kill,       // rank
        drop,       // env src dst chan tag
        delay_msg,  // env src dst chan tag a=until
        sleep,      // rank a=until
        runtime,    // rank a=(1 init, 0 final)
        outcome,    // rank note
        leak,       // rank a=count
    };

    std::uint64_t step = 0;
    Kind kind = Kind::chan_open;
    RankId rank = 0;
    ReqId req = 0;
    ReqId req2 = 0;
    std::uint64_t env = 0;
    RankId src = 0;
    RankId dst = 0;
    ChannelId chan = 0;
    Tag tag = 0;
    std::uint64_t bytes = 0;
    std::uint64_t a = 0;
    std::string note;
};

// How a rank's logical thread ended.
enum class RankEnd : std::uint8_t { done, blocked, killed, failed };

struct Trace {
    std::uint32_t ranks = 0;
    std::uint64_t steps = 0; // executed simulator events
    bool deadlocked = false;
    bool truncated = false; // stopped by the event budget
    std::vector<TraceEvent> events;
    std::vector<RankEnd> rank_end;
    std::vector<std::string> rank_note; // failure diagnostics

    // Newline-delimited "<step> <event-kind> <fields...>" records plus a
    // terminating per-rank summary; byte-identical for identical runs.
    std::string serialize() const;
};

const char* to_string(TraceEvent::Kind k);
const char* to_string(RankEnd e);

} // namespace errprop

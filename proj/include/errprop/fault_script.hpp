#pragma once

#include <errprop/transport.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace errprop {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MessagePattern {
    RankId src = 0;
    RankId dst = 0;
    Tag tag = 0;
};

// One injected fault. Times count executed simulator events.
struct FaultEvent {
    enum class Kind : std::uint8_t { kill, drop, delay };

    std::uint64_t time = 0;
    RankId rank = 0;
    Kind kind = Kind::kill;
    MessagePattern pattern{};
    std::uint64_t delay_by = 0;
};

// Declarative schedule of injected faults, sorted by time. A kill is
// terminal for its rank. drop/delay apply to the next matching message.
struct FaultScript {
    std::vector<FaultEvent> events;

    bool has_kill() const;
    std::vector<RankId> killed_ranks() const;

    // Line-oriented text form, one event per line:
    //   <time> <rank> kill
    //   <time> <rank> drop <src>-><dst> tag=<t>
    //   <time> <rank> delay <src>-><dst> tag=<t> by=<dt>
    static FaultScript parse(std::string_view text);
    static bool parse_line(std::string_view line, FaultEvent& out);
    std::string format() const;
};

} // namespace errprop

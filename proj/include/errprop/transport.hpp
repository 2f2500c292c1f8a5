#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace errprop {

using RankId = std::uint32_t;
using ChannelId = std::uint64_t;
using Tag = std::int64_t;
using ReqId = std::uint64_t;

inline constexpr RankId kAnySource = 0xffffffffu;

// Contract violations (not protocol outcomes) surface as exceptions.
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

enum class SendMode : std::uint8_t { standard, synchronous };

enum class ReqState : std::uint8_t { pending, complete, cancelled, errored };

enum class ReqError : std::uint8_t {
    none,
    peer_dead,         // liveness detection: counterpart rank is gone
    peer_dead_pending, // any-source receive that can no longer be guaranteed progress
    truncation,        // matched payload exceeded receive capacity
};

// Channels are isolated tag/message namespaces, one set per communicator.
// The kind is a label carried into the trace so traffic can be accounted
// per channel class.
enum class ChannelKind : std::uint8_t { data, error, control };

struct ReqSnapshot {
    ReqState state = ReqState::pending;
    ReqError error = ReqError::none;
};

struct Message {
    RankId source = 0;
    std::vector<std::byte> payload;
};

// Per-rank handle onto the transport. All calls on one endpoint are made
// from that rank's logical thread only. Blocking calls block only the
// calling rank's logical thread.
class Endpoint {
public:
    virtual ~Endpoint() = default;

    virtual RankId rank() const = 0;
    virtual std::uint32_t size() const = 0;

    virtual bool liveness_enabled() const = 0;
    virtual bool is_alive(RankId r) const = 0;

    virtual void open_channel(ChannelId ch, ChannelKind kind) = 0;
    virtual void close_channel(ChannelId ch) = 0;

    // Non-blocking post; a standard send may complete before the matching
    // receive exists, a synchronous send completes only once matched.
    virtual ReqId post_send(RankId dest, ChannelId ch, Tag tag,
                            std::span<const std::byte> payload, SendMode mode) = 0;
    virtual ReqId post_recv(RankId source, ChannelId ch, Tag tag, std::size_t capacity) = 0;

    // True if the request was still pending and unmatched; completion stands
    // otherwise. Cancelling a request marked as a collective internal is a
    // contract violation and throws.
    virtual bool cancel(ReqId req) = 0;
    virtual void forbid_cancel(ReqId req) = 0;

    virtual ReqSnapshot test(ReqId req) = 0;

    // Blocks until at least one request has left pending; returns the lowest
    // index of a non-pending request.
    virtual std::size_t wait_any(std::span<const ReqId> reqs) = 0;

    // Blocks until every request in all_of has left pending, or at least one
    // request in any_of has. Returns true when the all_of group finished
    // first (any_of may have fired as well; test it).
    virtual bool wait_all_or_any(std::span<const ReqId> all_of,
                                 std::span<const ReqId> any_of) = 0;

    // Completes `recv_req` from an in-flight matching message if one exists
    // (forcing the arrival), then reports whether the request is complete.
    virtual bool test_arrived(ReqId recv_req) = 0;

    // Same over a set of receives: true when at least one is complete after
    // forcing at most one arrival.
    virtual bool test_arrived_any(std::span<const ReqId> recv_reqs) = 0;

    // Consumes one in-flight message addressed to this rank on (ch, tag)
    // that no posted receive claims. Returns nothing when none exists.
    virtual std::optional<Message> drain_one(ChannelId ch, Tag tag) = 0;

    virtual void sleep_for(std::uint64_t dt) = 0;

    virtual std::vector<std::byte> recv_payload(ReqId req) const = 0;
    virtual RankId recv_source(ReqId req) const = 0;

    // Runtime lifecycle flags backing the instance singleton semantics.
    virtual bool runtime_active() const = 0;
    virtual void set_runtime_active(bool active) = 0;
    virtual bool instance_claimed() const = 0;
    virtual void set_instance_claimed(bool claimed) = 0;

    // Annotations recorded into the trace for verdict extraction.
    virtual void note_outcome(std::string_view text) = 0;
    virtual void note_leaks(std::uint64_t count) = 0;
};

} // namespace errprop

#pragma once

#include <errprop/coll_plan.hpp>
#include <errprop/transport.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace errprop {

// Error codes are strictly positive; zero is the resolution sentinel that
// initialises the combine arrays.
inline constexpr std::uint64_t kMinErrorCode = 1;
inline constexpr std::uint64_t kMaxErrorCode = 0x7fffffffu;

// User point-to-point tags live below the reserved protocol range.
inline constexpr Tag kUserTagLimit = Tag(1) << 30;

enum class Mode : std::uint8_t { black_channel, ulfm };

enum class CommState : std::uint8_t { healthy, erroring, revoked, closed };

// ulfm layer: error classes surfaced by revocation and liveness detection.
enum class FaultClass : std::uint8_t { none, revoked, proc_failed, proc_failed_pending };

enum class LocalReason : std::uint8_t { none, signalled, corrupt, hard_fault };

struct RevocationState {
    bool revoked = false;
    std::vector<RankId> revokers; // who revoked, for diagnostics
};

struct ReportEntry {
    RankId rank = 0;
    std::uint64_t code = 0;
    bool operator==(const ReportEntry&) const = default;
};

// Resolved (failed rank, error code) pairs, sorted by rank ascending and
// identical on every surviving rank of an episode.
struct ErrorReport {
    std::vector<ReportEntry> entries;
    bool operator==(const ErrorReport&) const = default;
    std::string to_string() const;
};

struct Success {
    std::vector<std::byte> payload;
    RankId source = 0;
};
struct Propagated {
    ErrorReport report;
};
struct CorruptedComm {};
struct TransportError {
    ReqError error = ReqError::none;
};

using WaitOutcome = std::variant<Success, Propagated, CorruptedComm, TransportError>;

bool is_error_outcome(const WaitOutcome& o);
std::string outcome_label(const WaitOutcome& o);

class Comm;

// Handle to one pending non-blocking operation. Waiting on it races the user
// request against error notifications; wait succeeds at most once.
class CommFuture {
public:
    CommFuture() = default;
    CommFuture(CommFuture&& o) noexcept : comm_(o.comm_), idx_(o.idx_) { o.comm_ = nullptr; }
    CommFuture& operator=(CommFuture&& o) noexcept
    {
        comm_ = o.comm_;
        idx_ = o.idx_;
        o.comm_ = nullptr;
        return *this;
    }
    CommFuture(const CommFuture&) = delete;
    CommFuture& operator=(const CommFuture&) = delete;

    bool valid() const { return comm_ != nullptr; }

private:
    friend class Comm;
    CommFuture(Comm* c, std::size_t i) : comm_(c), idx_(i) {}
    Comm* comm_ = nullptr;
    std::size_t idx_ = 0;
};

// Per-rank handle over a rank group. Owns the out-of-band error channel and
// protocol state; non-copyable, one handle per rank per communicator.
class Comm {
public:
    ~Comm();
    Comm(const Comm&) = delete;
    Comm& operator=(const Comm&) = delete;

    RankId rank() const { return self_; }
    std::uint32_t size() const { return static_cast<std::uint32_t>(members_.size()); }
    Mode mode() const { return mode_; }
    CommState state() const { return state_; }
    const std::vector<RankId>& group() const { return members_; } // global transport ranks
    ChannelId data_channel() const { return data_ch_; }
    ChannelId error_channel() const { return err_ch_; }
    ChannelId control_channel() const { return ctrl_ch_; }

    // Collective over the group: fresh channels; in black-channel mode the
    // new communicator immediately arms its pending error receive.
    std::unique_ptr<Comm> duplicate();

    CommFuture isend(RankId dest, Tag tag, std::span<const std::byte> payload);
    CommFuture irecv(RankId source, Tag tag, std::size_t capacity);
    CommFuture all_reduce(std::uint64_t value, ReduceOp op);
    CommFuture barrier();

    WaitOutcome wait(CommFuture& f);
    WaitOutcome signal_error(std::uint64_t code);

    // Protocol steps, collective over the group.
    WaitOutcome resolve_error(bool self_failed, bool self_corrupt, std::uint64_t code);
    ErrorReport determine_failed(bool self_failed, std::uint64_t code);

    // Host-language shim hook: run on scope exit with the unwinding flag of
    // the surrounding scope. Returns the episode outcome when one ran here.
    std::optional<WaitOutcome> scope_exit(bool unwinding);

    // --- ulfm layer -------------------------------------------------------
    void revoke();
    std::uint64_t agree(std::uint64_t contribution);
    std::unique_ptr<Comm> shrink();
    WaitOutcome on_revoked(LocalReason reason, std::uint64_t code = 0);
    RevocationState revocation() const;

    // Layer primitive: wait on one raw request, interruptible by revocation
    // and process-failure classes.
    FaultClass wait_revocable(ReqId user_req);

    std::optional<WaitOutcome> episode_outcome() const { return episode_; }

private:
    friend class Instance;

    struct CollectiveState;

    struct FutRec {
        ReqId req = 0;
        bool dud = false;
        bool consumed = false;
        bool is_send = false;
        RankId peer_local = 0;
        std::unique_ptr<CollectiveState> coll;
    };

    Comm(Endpoint& ep, Mode mode, std::vector<RankId> members, RankId self_idx,
         std::uint64_t lineage);

    CommFuture make_future(FutRec rec);
    WaitOutcome wait_bc(FutRec& rec);
    WaitOutcome wait_ulfm(FutRec& rec);
    WaitOutcome wait_collective(FutRec& rec);
    void setup_collective_phase(CollectiveState& cs);
    void advance_collective(CollectiveState& cs);
    WaitOutcome collective_result(const CollectiveState& cs) const;

    WaitOutcome run_signal_machinery(std::uint64_t code, bool self_corrupt);
    WaitOutcome enter_receiver_episode();
    void arm_episode_drains();
    ErrorReport determine_failed_on(ChannelId ch, bool self_failed, std::uint64_t code,
                                    std::uint64_t report_id);
    void close_episode(WaitOutcome out);
    void release();

    void ensure_ctrl_open();
    void arm_ctrl();
    bool notice_present();
    WaitOutcome consume_notices_and_resolve();
    void handle_notice(ReqId completed);
    void forward_notice(RankId origin);

    RankId local_of(RankId global) const;
    WaitOutcome success_of(const FutRec& rec);

    Endpoint& ep_;
    Mode mode_;
    CommState state_ = CommState::healthy;
    std::vector<RankId> members_;
    RankId self_ = 0;
    std::uint64_t lineage_ = 0;
    std::uint32_t children_ = 0;

    ChannelId data_ch_ = 0;
    ChannelId err_ch_ = 0;
    ChannelId ctrl_ch_ = 0;
    bool ctrl_open_ = false;

    ReqId err_recv_ = 0;                // black channel: the one pending error receive
    std::vector<ReqId> notice_recvs_;   // ulfm: armed per-peer revocation-notice receives

    bool revoked_ = false;
    bool notice_forwarded_ = false;
    std::vector<RankId> revokers_;
    std::uint32_t agree_epoch_ = 0;
    std::uint32_t shrink_epoch_ = 0;
    std::uint32_t coll_epoch_ = 0;

    std::vector<ReqId> episode_sends_;  // outstanding error notifications
    std::vector<ReqId> episode_drains_; // per-peer catch-alls for extra notifications
    std::optional<WaitOutcome> episode_;
    bool released_ = false;

    std::vector<std::unique_ptr<FutRec>> futs_;
};

// Owns runtime initialisation (once per rank context) and the communicator
// over all ranks.
class Instance {
public:
    static Instance acquire(Endpoint& ep, Mode mode);

    Instance(Instance&& o) noexcept;
    Instance& operator=(Instance&& o) noexcept;
    Instance(const Instance&) = delete;
    Instance& operator=(const Instance&) = delete;
    ~Instance();

    bool owns_runtime() const { return owns_; }
    Comm& world() { return *world_; }

private:
    Instance() = default;
    Endpoint* ep_ = nullptr;
    bool owns_ = false;
    std::unique_ptr<Comm> world_;
};

} // namespace errprop

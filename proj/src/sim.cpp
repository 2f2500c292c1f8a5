#include <errprop/sim.hpp>

#include <ucontext.h>

// Minimal cooperative context switch: callee-saved registers and the stack
// pointer only, no signal-mask syscalls. Stacks are switched strictly within
// one thread. Falls back to ucontext elsewhere.
#if defined(__x86_64__) && defined(__linux__)
#define ERRPROP_FAST_FIBERS 1
__asm__(R"(
.text
.globl errprop_fiber_swap
.type errprop_fiber_swap,@function
errprop_fiber_swap:
    pushq %rbp
    pushq %rbx
    pushq %r12
    pushq %r13
    pushq %r14
    pushq %r15
    movq %rsp, (%rdi)
    movq (%rsi), %rsp
    popq %r15
    popq %r14
    popq %r13
    popq %r12
    popq %rbx
    popq %rbp
    retq
.size errprop_fiber_swap,.-errprop_fiber_swap
)");
extern "C" void errprop_fiber_swap(void** save_sp, void** load_sp);
#else
#define ERRPROP_FAST_FIBERS 0
#endif

#include <algorithm>
#include <cassert>
#include <cstring>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

namespace errprop {

namespace {

// ---------------------------------------------------------------------------
// Schedulable moves. A fiber step runs one rank until it blocks or yields;
// deliveries consume one in-flight message into one posted receive. test_*
// and drain_* resolve the corresponding endpoint probes. Moves are identified
// by (kind, rank, env, recv) which is stable across replays of one prefix.

struct Move {
    enum class Kind : std::uint8_t {
        step = 0,
        deliver = 1,
        test_deliver = 2,
        test_none = 3,
        drain_deliver = 4,
        drain_none = 5,
    };

    Kind kind = Kind::step;
    RankId rank = 0;   // acting/probing rank (step, test_*, drain_*)
    std::uint64_t env = 0;
    ReqId recv = 0;    // target posted receive (deliver, test_deliver)

    // fingerprints for the independence relation
    RankId send_owner = 0;
    RankId recv_owner = 0;
    ReqId send_req = 0;
    RankId e_src = 0, e_dst = 0;
    ChannelId e_chan = 0;
    Tag e_tag = 0;
    bool env_sync = false;
    bool probe_any = false;
    RankId probe_src = 0;
    ChannelId probe_chan = 0;
    Tag probe_tag = 0;
    bool auto_ok = false; // confluent: source-specific receive, unique pairing

    bool same_identity(const Move& o) const
    {
        return kind == o.kind && rank == o.rank && env == o.env && recv == o.recv;
    }
};

bool is_delivery(Move::Kind k)
{
    return k == Move::Kind::deliver || k == Move::Kind::test_deliver ||
           k == Move::Kind::drain_deliver;
}

bool is_none_probe(Move::Kind k)
{
    return k == Move::Kind::test_none || k == Move::Kind::drain_none;
}

// env key of `d` could match the probe slot of `p`
bool env_matches_probe(const Move& d, const Move& p)
{
    return d.e_dst == p.rank && d.e_chan == p.probe_chan && d.e_tag == p.probe_tag &&
           (p.probe_any || p.probe_src == d.e_src);
}

// env key of `a` could match the receive consumed by delivery `b`
bool env_matches_recv_of(const Move& a, const Move& b)
{
    return a.e_dst == b.recv_owner && a.e_chan == b.probe_chan && a.e_tag == b.probe_tag &&
           (b.probe_any || b.probe_src == a.e_src);
}

// Sound under the simulator's confinement rules: fiber steps mutate only
// their own rank's requests and append messages; all cross-rank consumption
// happens through delivery/probe moves.
bool independent(const Move& a, const Move& b)
{
    if (a.same_identity(b))
        return false;
    const bool ad = is_delivery(a.kind), bd = is_delivery(b.kind);
    const bool an = is_none_probe(a.kind), bn = is_none_probe(b.kind);
    if (a.kind == Move::Kind::step && b.kind == Move::Kind::step)
        return a.rank != b.rank;
    if (a.kind == Move::Kind::step && bd)
        return a.rank != b.recv_owner && (a.rank != b.send_owner || !b.env_sync);
    if (b.kind == Move::Kind::step && ad)
        return b.rank != a.recv_owner && (b.rank != a.send_owner || !a.env_sync);
    if ((a.kind == Move::Kind::step && bn) || (b.kind == Move::Kind::step && an))
        return false; // a step may post a message the probe would have seen
    if (ad && bd) {
        if (a.env == b.env || a.send_req == b.send_req)
            return false;
        if (a.recv != 0 && a.recv == b.recv)
            return false;
        if (a.kind == Move::Kind::drain_deliver && b.kind == Move::Kind::drain_deliver &&
            a.rank == b.rank)
            return false;
        if (env_matches_recv_of(a, b) || env_matches_recv_of(b, a))
            return false;
        return true;
    }
    if (ad && bn)
        return !env_matches_probe(a, b);
    if (bd && an)
        return !env_matches_probe(b, a);
    if (an && bn)
        return a.rank != b.rank;
    return false;
}

bool move_less(const Move& a, const Move& b)
{
    if (a.kind != b.kind)
        return a.kind < b.kind;
    if (a.rank != b.rank)
        return a.rank < b.rank;
    if (a.env != b.env)
        return a.env < b.env;
    return a.recv < b.recv;
}

// Picks the move to execute from the full eligible list. Single-option and
// confluent (auto_ok) situations are resolved by a fixed policy shared by
// the seeded and exploring choosers so that seeded runs stay within the
// explored schedule space.
struct Chooser {
    virtual ~Chooser() = default;
    virtual std::size_t choose(const std::vector<Move>& options) = 0;

    static std::optional<std::size_t> forced_pick(const std::vector<Move>& options)
    {
        if (options.size() == 1)
            return 0;
        for (std::size_t i = 0; i < options.size(); ++i)
            if (options[i].auto_ok)
                return i;
        return std::nullopt;
    }
};

struct SeededChooser final : Chooser {
    std::mt19937_64 rng;
    explicit SeededChooser(std::uint64_t seed) : rng(seed) {}
    std::size_t choose(const std::vector<Move>& options) override
    {
        if (auto f = forced_pick(options))
            return *f;
        return static_cast<std::size_t>(rng() % options.size());
    }
};

struct PrunedRun {};

struct DfsNode {
    std::vector<Move> options;
    std::vector<char> in_sleep0;
    std::vector<Move> sleep0; // running sleep set at node creation
    std::size_t cursor = 0;
};

// Depth-first replay with sleep sets: the running sleep set is filtered by
// every executed move (forced or chosen); a forced move that is itself
// sleeping, or a branch whose options all sleep, abandons the run because
// its continuations are covered on another branch.
struct ReplayChooser final : Chooser {
    std::vector<DfsNode>* nodes;
    ExploreStats* stats;
    bool sleep_sets;
    std::size_t depth = 0;
    std::vector<Move> sleep_run;

    ReplayChooser(std::vector<DfsNode>* n, ExploreStats* s, bool prune)
        : nodes(n), stats(s), sleep_sets(prune)
    {
    }

    bool sleeping(const Move& m) const
    {
        for (const Move& s : sleep_run)
            if (s.same_identity(m))
                return true;
        return false;
    }

    void filter_by(const Move& m)
    {
        std::erase_if(sleep_run, [&](const Move& t) { return !independent(t, m); });
    }

    std::size_t choose(const std::vector<Move>& options) override
    {
        if (auto f = forced_pick(options)) {
            const Move& m = options[*f];
            if (sleep_sets) {
                if (sleeping(m))
                    throw PrunedRun{};
                filter_by(m);
            }
            return *f;
        }
        if (depth < nodes->size()) {
            DfsNode& n = (*nodes)[depth];
            if (n.options.size() != options.size())
                throw std::logic_error("schedule replay diverged");
            for (std::size_t i = 0; i < options.size(); ++i)
                if (!n.options[i].same_identity(options[i]))
                    throw std::logic_error("schedule replay diverged");
            ++depth;
            if (sleep_sets) {
                // reconstruct the running sleep set below this node
                sleep_run = n.sleep0;
                for (std::size_t i = 0; i < n.cursor; ++i)
                    sleep_run.push_back(n.options[i]);
                filter_by(n.options[n.cursor]);
            }
            return n.cursor;
        }
        DfsNode n;
        n.options = options;
        if (sleep_sets)
            n.sleep0 = sleep_run;
        n.in_sleep0.assign(options.size(), 0);
        for (std::size_t i = 0; i < options.size(); ++i)
            for (const Move& s : n.sleep0)
                if (s.same_identity(options[i])) {
                    n.in_sleep0[i] = 1;
                    break;
                }
        std::size_t first = 0;
        while (first < options.size() && n.in_sleep0[first])
            ++first;
        if (first == options.size())
            throw PrunedRun{}; // every continuation covered elsewhere
        n.cursor = first;
        if (sleep_sets) {
            sleep_run = n.sleep0;
            for (std::size_t i = 0; i < first; ++i)
                sleep_run.push_back(n.options[i]);
            filter_by(options[first]);
        }
        nodes->push_back(std::move(n));
        ++depth;
        ++stats->choice_points;
        return first;
    }
};

// ---------------------------------------------------------------------------

struct SimReq {
    ReqId id = 0;
    RankId owner = 0;
    bool is_send = false;
    bool sync = false;
    ReqState state = ReqState::pending;
    ReqError error = ReqError::none;
    bool cancel_forbidden = false;

    // receive: source filter; send: destination
    RankId peer = 0;
    bool any_source = false;
    ChannelId chan = 0;
    Tag tag = 0;
    std::size_t capacity = 0;
    bool failure_pending = false;
    std::vector<std::byte> payload;
    RankId actual_source = 0;
};

struct SimEnvelope {
    std::uint64_t id = 0;
    ReqId send_req = 0;
    RankId src = 0, dst = 0;
    ChannelId chan = 0;
    Tag tag = 0;
    bool sync = false;
    std::uint64_t not_before = 0;
    std::vector<std::byte> payload;
};

struct StackPool {
    std::size_t bytes = 0;
    std::vector<std::unique_ptr<char[]>> free_list;

    char* acquire(std::size_t want)
    {
        if (bytes != want) {
            free_list.clear();
            bytes = want;
        }
        if (!free_list.empty()) {
            char* s = free_list.back().release();
            free_list.pop_back();
            return s;
        }
        return new char[want];
    }

    void release(char* s)
    {
        free_list.emplace_back(s);
    }
};

void fiber_main_entry();

enum class FiberStatus : std::uint8_t {
    ready,
    running,
    blocked,
    test_wait,
    drain_wait,
    sleeping,
    done,
    killed,
    failed,
};

class Sim;

class SimEndpoint final : public Endpoint {
public:
    SimEndpoint(Sim& sim, RankId rank) : sim_(sim), rank_(rank) {}

    RankId rank() const override { return rank_; }
    std::uint32_t size() const override;
    bool liveness_enabled() const override;
    bool is_alive(RankId r) const override;
    void open_channel(ChannelId ch, ChannelKind kind) override;
    void close_channel(ChannelId ch) override;
    ReqId post_send(RankId dest, ChannelId ch, Tag tag, std::span<const std::byte> payload,
                    SendMode mode) override;
    ReqId post_recv(RankId source, ChannelId ch, Tag tag, std::size_t capacity) override;
    bool cancel(ReqId req) override;
    void forbid_cancel(ReqId req) override;
    ReqSnapshot test(ReqId req) override;
    std::size_t wait_any(std::span<const ReqId> reqs) override;
    bool wait_all_or_any(std::span<const ReqId> all_of,
                         std::span<const ReqId> any_of) override;
    bool test_arrived(ReqId recv_req) override;
    bool test_arrived_any(std::span<const ReqId> recv_reqs) override;
    std::optional<Message> drain_one(ChannelId ch, Tag tag) override;
    void sleep_for(std::uint64_t dt) override;
    std::vector<std::byte> recv_payload(ReqId req) const override;
    RankId recv_source(ReqId req) const override;
    bool runtime_active() const override;
    void set_runtime_active(bool active) override;
    bool instance_claimed() const override;
    void set_instance_claimed(bool claimed) override;
    void note_outcome(std::string_view text) override;
    void note_leaks(std::uint64_t count) override;

private:
    Sim& sim_;
    RankId rank_;
};

struct RankState {
    FiberStatus status = FiberStatus::ready;
    std::vector<ReqId> wait_set;     // any-of group
    std::vector<ReqId> wait_all_set; // non-empty for all-or-any waits
    std::vector<ReqId> probe_set;
    ChannelId drain_chan = 0;
    Tag drain_tag = 0;
    bool test_result = false;
    std::optional<Message> drain_result;
    std::uint64_t wake_time = 0;
    bool runtime_active = false;
    bool instance_claimed = false;
    std::string fail_note;

    ucontext_t ctx{};
    void* sp = nullptr;
    char* stack = nullptr;
    std::unique_ptr<SimEndpoint> endpoint;
};

class Sim {
public:
    Sim(const SimOptions& opts, const FaultScript& faults,
        const std::vector<RankProgram>& programs, Chooser* chooser, std::uint64_t max_steps,
        StackPool* pool)
        : opts_(opts), faults_(faults), programs_(programs), chooser_(chooser),
          max_steps_(max_steps), pool_(pool)
    {
        trace_.events.reserve(512);
        reqs_.reserve(128);
        posted_recvs_.resize(opts.ranks);
        if (programs_.size() != opts_.ranks)
            throw UsageError("one program per rank required");
        trace_.ranks = opts_.ranks;
        ranks_.reserve(opts_.ranks);
        for (RankId r = 0; r < opts_.ranks; ++r) {
            auto st = std::make_unique<RankState>();
            st->runtime_active = opts_.runtime_preinitialized;
            st->endpoint = std::make_unique<SimEndpoint>(*this, r);
            ranks_.push_back(std::move(st));
        }
    }

    struct RunResult {
        Trace trace;
        bool pruned = false;
    };

    ~Sim()
    {
        for (auto& st : ranks_)
            if (st->stack)
                pool_->release(st->stack);
    }

    RunResult execute()
    {
        RunResult rr;
        try {
            loop();
        } catch (PrunedRun&) {
            rr.pruned = true;
        }
        finalize();
        rr.trace = std::move(trace_);
        return rr;
    }

    // --- endpoint entry points -------------------------------------------

    std::uint32_t size() const { return opts_.ranks; }
    bool liveness() const { return opts_.liveness; }

    bool alive(RankId r) const
    {
        check_rank(r);
        return ranks_[r]->status != FiberStatus::killed;
    }

    RankState& rank_state(RankId r) { return *ranks_[r]; }

    void open_channel(RankId r, ChannelId ch, ChannelKind kind)
    {
        auto it = chan_kinds_.find(ch);
        if (it == chan_kinds_.end())
            chan_kinds_.emplace(ch, kind);
        else if (it->second != kind)
            throw UsageError("channel reopened with a different kind");
        open_[r].insert(ch);
        TraceEvent e;
        e.kind = TraceEvent::Kind::chan_open;
        e.rank = r;
        e.chan = ch;
        e.a = static_cast<std::uint64_t>(kind);
        push_event(e);
    }

    void close_channel(RankId r, ChannelId ch)
    {
        open_[r].erase(ch);
        TraceEvent e;
        e.kind = TraceEvent::Kind::chan_close;
        e.rank = r;
        e.chan = ch;
        push_event(e);
    }

    ReqId post_send(RankId r, RankId dest, ChannelId ch, Tag tag,
                    std::span<const std::byte> payload, SendMode mode)
    {
        require_open(r, ch);
        check_rank(dest);
        SimReq q;
        q.id = ++req_seq_;
        q.owner = r;
        q.is_send = true;
        q.sync = (mode == SendMode::synchronous);
        q.chan = ch;
        q.tag = tag;
        q.peer = dest;
        TraceEvent e;
        e.kind = TraceEvent::Kind::post_send;
        e.req = q.id;
        e.rank = r;
        e.src = r;
        e.dst = dest;
        e.chan = ch;
        e.tag = tag;
        e.bytes = payload.size();
        e.a = q.sync ? 1 : 0;
        push_event(e);

        if (opts_.liveness && !alive(dest)) {
            q.state = ReqState::errored;
            q.error = ReqError::peer_dead;
            trace_req_error(q.id, r, q.error);
            reqs_.push_back(std::move(q));
            return req_seq_;
        }

        const std::uint64_t env_id = ++env_seq_;
        if (consume_drop(r, dest, tag)) {
            TraceEvent d;
            d.kind = TraceEvent::Kind::drop;
            d.env = env_id;
            d.src = r;
            d.dst = dest;
            d.chan = ch;
            d.tag = tag;
            push_event(d);
            if (!q.sync)
                q.state = ReqState::complete;
            reqs_.push_back(std::move(q));
            return req_seq_;
        }

        SimEnvelope env;
        env.id = env_id;
        env.send_req = q.id;
        env.src = r;
        env.dst = dest;
        env.chan = ch;
        env.tag = tag;
        env.sync = q.sync;
        env.payload.assign(payload.begin(), payload.end());
        if (std::uint64_t by = consume_delay(r, dest, tag)) {
            env.not_before = now_ + by;
            TraceEvent d;
            d.kind = TraceEvent::Kind::delay_msg;
            d.env = env.id;
            d.src = r;
            d.dst = dest;
            d.chan = ch;
            d.tag = tag;
            d.a = env.not_before;
            push_event(d);
        }
        flight_.push_back(std::move(env));
        if (!q.sync)
            q.state = ReqState::complete;
        reqs_.push_back(std::move(q));
        return req_seq_;
    }

    ReqId post_recv(RankId r, RankId source, ChannelId ch, Tag tag, std::size_t capacity)
    {
        require_open(r, ch);
        if (source != kAnySource)
            check_rank(source);
        SimReq q;
        q.id = ++req_seq_;
        q.owner = r;
        q.is_send = false;
        q.peer = source;
        q.any_source = (source == kAnySource);
        q.chan = ch;
        q.tag = tag;
        q.capacity = capacity;
        TraceEvent e;
        e.kind = TraceEvent::Kind::post_recv;
        e.req = q.id;
        e.rank = r;
        e.src = source;
        e.chan = ch;
        e.tag = tag;
        e.a = capacity;
        push_event(e);
        if (opts_.liveness) {
            if (!q.any_source && !alive(q.peer)) {
                q.state = ReqState::errored;
                q.error = ReqError::peer_dead;
                trace_req_error(q.id, r, q.error);
            } else if (q.any_source && any_killed_) {
                q.failure_pending = true;
            }
        }
        posted_recvs_[r].push_back(q.id);
        reqs_.push_back(std::move(q));
        return req_seq_;
    }

    bool cancel(RankId r, ReqId id)
    {
        SimReq& q = req(id);
        if (q.owner != r)
            throw UsageError("cancel of a foreign request");
        if (q.cancel_forbidden)
            throw UsageError("cancel of a collective-internal request is erroneous");
        bool ok = false;
        if (q.state == ReqState::pending) {
            if (q.is_send)
                erase_envelope_of(id);
            q.state = ReqState::cancelled;
            ok = true;
        }
        TraceEvent e;
        e.kind = TraceEvent::Kind::cancel;
        e.req = id;
        e.rank = r;
        e.a = ok ? 1 : 0;
        push_event(e);
        return ok;
    }

    void forbid_cancel(ReqId id) { req(id).cancel_forbidden = true; }

    ReqSnapshot test(ReqId id)
    {
        const SimReq& q = req(id);
        return ReqSnapshot{q.state, q.error};
    }

    std::size_t wait_any(RankId r, std::span<const ReqId> ids)
    {
        if (ids.empty())
            throw UsageError("wait_any on an empty request set");
        for (;;) {
            for (std::size_t i = 0; i < ids.size(); ++i)
                if (req(ids[i]).state != ReqState::pending)
                    return i;
            RankState& st = *ranks_[r];
            st.status = FiberStatus::blocked;
            st.wait_set.assign(ids.begin(), ids.end());
            st.wait_all_set.clear();
            yield_to_scheduler(r);
        }
    }

    bool wait_all_or_any(RankId r, std::span<const ReqId> all_of, std::span<const ReqId> any_of)
    {
        if (all_of.empty() && any_of.empty())
            throw UsageError("wait_all_or_any on empty request sets");
        for (;;) {
            bool any_hit = false;
            for (ReqId id : any_of)
                if (req(id).state != ReqState::pending)
                    any_hit = true;
            bool all_done = !all_of.empty();
            for (ReqId id : all_of)
                if (req(id).state == ReqState::pending)
                    all_done = false;
            if (all_done)
                return true;
            if (any_hit)
                return false;
            RankState& st = *ranks_[r];
            st.status = FiberStatus::blocked;
            st.wait_set.assign(any_of.begin(), any_of.end());
            st.wait_all_set.assign(all_of.begin(), all_of.end());
            yield_to_scheduler(r);
        }
    }

    bool test_arrived(RankId r, std::span<const ReqId> ids)
    {
        bool all_terminal = true;
        for (ReqId id : ids) {
            const SimReq& q = req(id);
            if (q.owner != r)
                throw UsageError("test_arrived on a foreign request");
            if (q.is_send)
                throw UsageError("test_arrived applies to receives");
            if (q.state == ReqState::complete)
                return true;
            if (q.state == ReqState::pending)
                all_terminal = false;
        }
        if (all_terminal)
            return false;
        RankState& st = *ranks_[r];
        st.status = FiberStatus::test_wait;
        st.probe_set.assign(ids.begin(), ids.end());
        yield_to_scheduler(r);
        return st.test_result;
    }

    std::optional<Message> drain_one(RankId r, ChannelId ch, Tag tag)
    {
        RankState& st = *ranks_[r];
        st.status = FiberStatus::drain_wait;
        st.drain_chan = ch;
        st.drain_tag = tag;
        yield_to_scheduler(r);
        return std::move(st.drain_result);
    }

    void sleep_for(RankId r, std::uint64_t dt)
    {
        RankState& st = *ranks_[r];
        st.status = FiberStatus::sleeping;
        st.wake_time = now_ + dt;
        TraceEvent e;
        e.kind = TraceEvent::Kind::sleep;
        e.rank = r;
        e.a = st.wake_time;
        push_event(e);
        yield_to_scheduler(r);
    }

    std::vector<std::byte> recv_payload(ReqId id) const
    {
        const SimReq& q = req(id);
        if (q.is_send || q.state != ReqState::complete)
            throw UsageError("payload of an incomplete receive");
        return q.payload;
    }

    RankId recv_source(ReqId id) const
    {
        const SimReq& q = req(id);
        if (q.is_send || q.state != ReqState::complete)
            throw UsageError("source of an incomplete receive");
        return q.actual_source;
    }

    void note_outcome(RankId r, std::string_view text)
    {
        TraceEvent e;
        e.kind = TraceEvent::Kind::outcome;
        e.rank = r;
        e.note.assign(text);
        push_event(e);
    }

    void note_leaks(RankId r, std::uint64_t count)
    {
        TraceEvent e;
        e.kind = TraceEvent::Kind::leak;
        e.rank = r;
        e.a = count;
        push_event(e);
    }

    RankId current_rank() const { return cur_rank_; }

    // --- scheduling -------------------------------------------------------

    static Sim* entry_sim_;
    static RankId entry_rank_;

    static void fiber_entry()
    {
        Sim* sim = entry_sim_;
        const RankId r = entry_rank_;
        RankState& st = *sim->ranks_[r];
        try {
            sim->programs_[r](*st.endpoint);
            st.status = FiberStatus::done;
        } catch (const std::exception& ex) {
            st.status = FiberStatus::failed;
            st.fail_note = ex.what();
        } catch (...) {
            st.status = FiberStatus::failed;
            st.fail_note = "unknown exception";
        }
#if ERRPROP_FAST_FIBERS
        errprop_fiber_swap(&st.sp, &sim->sched_sp_);
        std::abort(); // finished fibers are never resumed
#else
        // returning resumes the scheduler via uc_link
#endif
    }

private:
    void start_fiber(RankId r)
    {
        RankState& st = *ranks_[r];
        st.stack = pool_->acquire(opts_.fiber_stack_bytes);
#if ERRPROP_FAST_FIBERS
        // synthetic frame: six zeroed callee-saved registers below the entry
        // address; the first swap pops them and "returns" into the entry
        auto top = reinterpret_cast<std::uintptr_t>(st.stack + opts_.fiber_stack_bytes);
        std::uintptr_t entry_slot = (top & ~std::uintptr_t(15)) - 16;
        auto* frame = reinterpret_cast<void**>(entry_slot);
        frame[0] = reinterpret_cast<void*>(&fiber_main_entry);
        for (int i = 1; i <= 6; ++i)
            frame[-i] = nullptr;
        st.sp = frame - 6;
#else
        if (getcontext(&st.ctx) == -1)
            throw std::runtime_error("getcontext failed");
        st.ctx.uc_stack.ss_sp = st.stack;
        st.ctx.uc_stack.ss_size = opts_.fiber_stack_bytes;
        st.ctx.uc_link = &sched_ctx_;
        makecontext(&st.ctx, reinterpret_cast<void (*)()>(&Sim::fiber_entry), 0);
#endif
    }

    void resume(RankId r)
    {
        RankState& st = *ranks_[r];
        if (!st.stack)
            start_fiber(r);
        entry_sim_ = this;
        entry_rank_ = r;
        cur_rank_ = r;
        st.status = FiberStatus::running;
#if ERRPROP_FAST_FIBERS
        errprop_fiber_swap(&sched_sp_, &st.sp);
#else
        if (swapcontext(&sched_ctx_, &st.ctx) == -1)
            throw std::runtime_error("swapcontext failed");
#endif
    }

    void yield_to_scheduler(RankId r)
    {
#if ERRPROP_FAST_FIBERS
        errprop_fiber_swap(&ranks_[r]->sp, &sched_sp_);
#else
        if (swapcontext(&ranks_[r]->ctx, &sched_ctx_) == -1)
            throw std::runtime_error("swapcontext failed");
#endif
    }

    // --- matching ---------------------------------------------------------

    SimReq& req(ReqId id)
    {
        if (id == 0 || id > reqs_.size())
            throw UsageError("unknown request handle");
        return reqs_[id - 1];
    }

    const SimReq& req(ReqId id) const
    {
        if (id == 0 || id > reqs_.size())
            throw UsageError("unknown request handle");
        return reqs_[id - 1];
    }

    bool compatible(const SimEnvelope& e, const SimReq& r) const
    {
        return !r.is_send && r.state == ReqState::pending && r.owner == e.dst &&
               r.chan == e.chan && r.tag == e.tag && (r.any_source || r.peer == e.src);
    }

    bool oldest_in_key(const SimEnvelope& e) const
    {
        for (const auto& o : flight_)
            if (o.id < e.id && o.src == e.src && o.dst == e.dst && o.chan == e.chan &&
                o.tag == e.tag)
                return false;
        return true;
    }

    // first posted compatible receive, or 0
    ReqId match_recv(const SimEnvelope& e) const
    {
        for (ReqId id : posted_recvs_[e.dst])
            if (compatible(e, reqs_[id - 1]))
                return id;
        return 0;
    }

    void erase_envelope_of(ReqId send_req)
    {
        for (auto it = flight_.begin(); it != flight_.end(); ++it)
            if (it->send_req == send_req) {
                flight_.erase(it);
                return;
            }
    }

    const SimEnvelope* envelope_by_id(std::uint64_t id) const
    {
        for (const auto& e : flight_)
            if (e.id == id)
                return &e;
        return nullptr;
    }

    // --- faults -----------------------------------------------------------

    bool consume_drop(RankId src, RankId dst, Tag tag)
    {
        for (auto it = armed_drops_.begin(); it != armed_drops_.end(); ++it)
            if (it->src == src && it->dst == dst && it->tag == tag) {
                armed_drops_.erase(it);
                return true;
            }
        return false;
    }

    std::uint64_t consume_delay(RankId src, RankId dst, Tag tag)
    {
        for (auto it = armed_delays_.begin(); it != armed_delays_.end(); ++it)
            if (it->first.src == src && it->first.dst == dst && it->first.tag == tag) {
                auto by = it->second;
                armed_delays_.erase(it);
                return by;
            }
        return 0;
    }

    void apply_kill(RankId victim)
    {
        RankState& st = *ranks_[victim];
        st.status = FiberStatus::killed;
        any_killed_ = true;
        TraceEvent e;
        e.kind = TraceEvent::Kind::kill;
        e.rank = victim;
        push_event(e);
        // the victim's receives stop matching; its already-posted messages stay in flight
        for (auto& q : reqs_)
            if (!q.is_send && q.owner == victim && q.state == ReqState::pending)
                q.state = ReqState::cancelled;
        if (!opts_.liveness)
            return;
        for (auto& q : reqs_) {
            if (q.state != ReqState::pending || ranks_[q.owner]->status == FiberStatus::killed)
                continue;
            if (q.is_send && q.sync && q.peer == victim) {
                erase_envelope_of(q.id);
                q.state = ReqState::errored;
                q.error = ReqError::peer_dead;
                trace_req_error(q.id, q.owner, q.error);
            } else if (!q.is_send && !q.any_source && q.peer == victim) {
                q.state = ReqState::errored;
                q.error = ReqError::peer_dead;
                trace_req_error(q.id, q.owner, q.error);
            } else if (!q.is_send && q.any_source) {
                q.failure_pending = true;
            }
        }
    }

    void fire_due_faults()
    {
        while (fault_idx_ < faults_.events.size() && faults_.events[fault_idx_].time <= now_) {
            const FaultEvent& ev = faults_.events[fault_idx_++];
            switch (ev.kind) {
            case FaultEvent::Kind::kill:
                check_rank(ev.rank);
                if (ranks_[ev.rank]->status != FiberStatus::killed)
                    apply_kill(ev.rank);
                break;
            case FaultEvent::Kind::drop: {
                SimEnvelope* hit = oldest_matching(ev.pattern);
                if (hit) {
                    TraceEvent e;
                    e.kind = TraceEvent::Kind::drop;
                    e.env = hit->id;
                    e.src = hit->src;
                    e.dst = hit->dst;
                    e.chan = hit->chan;
                    e.tag = hit->tag;
                    push_event(e);
                    const std::uint64_t id = hit->id;
                    flight_.erase(std::find_if(flight_.begin(), flight_.end(),
                                               [&](const SimEnvelope& x) { return x.id == id; }));
                } else {
                    armed_drops_.push_back(ev.pattern);
                }
                break;
            }
            case FaultEvent::Kind::delay: {
                SimEnvelope* hit = oldest_matching(ev.pattern);
                if (hit) {
                    hit->not_before = now_ + ev.delay_by;
                    TraceEvent e;
                    e.kind = TraceEvent::Kind::delay_msg;
                    e.env = hit->id;
                    e.src = hit->src;
                    e.dst = hit->dst;
                    e.chan = hit->chan;
                    e.tag = hit->tag;
                    e.a = hit->not_before;
                    push_event(e);
                } else {
                    armed_delays_.emplace_back(ev.pattern, ev.delay_by);
                }
                break;
            }
            }
        }
    }

    SimEnvelope* oldest_matching(const MessagePattern& p)
    {
        SimEnvelope* best = nullptr;
        for (auto& e : flight_)
            if (e.src == p.src && e.dst == p.dst && e.tag == p.tag)
                if (!best || e.id < best->id)
                    best = &e;
        return best;
    }

    // Any-source receives flagged at a kill report a pending process failure
    // once no in-flight message could still complete them.
    void failure_pending_pass()
    {
        if (!opts_.liveness || !any_killed_)
            return;
        for (auto& q : reqs_) {
            if (q.is_send || q.state != ReqState::pending || !q.failure_pending)
                continue;
            bool feedable = false;
            for (const auto& e : flight_)
                if (compatible(e, q)) {
                    feedable = true;
                    break;
                }
            if (!feedable) {
                q.state = ReqState::errored;
                q.error = ReqError::peer_dead_pending;
                trace_req_error(q.id, q.owner, q.error);
            }
        }
    }

    // --- move enumeration and execution ------------------------------------

    bool wake_enabled(const RankState& st)
    {
        if (st.status != FiberStatus::blocked)
            return false;
        for (ReqId id : st.wait_set)
            if (req(id).state != ReqState::pending)
                return true;
        if (!st.wait_all_set.empty()) {
            bool all_done = true;
            for (ReqId id : st.wait_all_set)
                if (req(id).state == ReqState::pending) {
                    all_done = false;
                    break;
                }
            if (all_done)
                return true;
        }
        return false;
    }

    // A fiber that cannot act now and will not be enabled by anything other
    // than a delivery cannot observe the delivery's position in the schedule.
    bool inert_for_delivery(RankId owner)
    {
        const RankState& st = *ranks_[owner];
        if (st.status == FiberStatus::done || st.status == FiberStatus::killed ||
            st.status == FiberStatus::failed)
            return true;
        return st.status == FiberStatus::blocked && !wake_enabled(*ranks_[owner]);
    }

    bool probe_suppresses(const SimEnvelope& e, ReqId rid) const
    {
        const RankState& st = *ranks_[req(rid).owner];
        if (st.status != FiberStatus::test_wait || e.dst != req(rid).owner)
            return false;
        for (ReqId pid : st.probe_set)
            if (pid == rid)
                return true;
        return false;
    }

    std::vector<Move> compute_moves()
    {
        std::vector<Move> moves;
        for (RankId r = 0; r < opts_.ranks; ++r) {
            RankState& st = *ranks_[r];
            switch (st.status) {
            case FiberStatus::ready: {
                Move m;
                m.kind = Move::Kind::step;
                m.rank = r;
                moves.push_back(m);
                break;
            }
            case FiberStatus::blocked:
                if (wake_enabled(st)) {
                    Move m;
                    m.kind = Move::Kind::step;
                    m.rank = r;
                    moves.push_back(m);
                }
                break;
            case FiberStatus::sleeping:
                if (now_ >= st.wake_time) {
                    Move m;
                    m.kind = Move::Kind::step;
                    m.rank = r;
                    moves.push_back(m);
                }
                break;
            case FiberStatus::test_wait: {
                bool any = false;
                bool set_any_source = false;
                ChannelId set_chan = 0;
                Tag set_tag = 0;
                for (ReqId pid : st.probe_set) {
                    const SimReq& probe = req(pid);
                    set_chan = probe.chan;
                    set_tag = probe.tag;
                    set_any_source = set_any_source || probe.any_source ||
                                     st.probe_set.size() > 1;
                    if (probe.state != ReqState::pending)
                        continue;
                    for (const auto& e : flight_) {
                        if (e.not_before > now_ || !compatible(e, probe) || !oldest_in_key(e))
                            continue;
                        if (match_recv(e) != pid)
                            continue;
                        Move m;
                        m.kind = Move::Kind::test_deliver;
                        m.rank = r;
                        m.env = e.id;
                        m.recv = pid;
                        m.send_owner = e.src;
                        m.recv_owner = r;
                        m.send_req = e.send_req;
                        m.e_src = e.src;
                        m.e_dst = e.dst;
                        m.e_chan = e.chan;
                        m.e_tag = e.tag;
                        m.env_sync = e.sync;
                        m.probe_any = probe.any_source;
                        m.probe_src = probe.peer;
                        m.probe_chan = probe.chan;
                        m.probe_tag = probe.tag;
                        moves.push_back(m);
                        any = true;
                    }
                }
                if (!any) {
                    Move m;
                    m.kind = Move::Kind::test_none;
                    m.rank = r;
                    m.probe_any = set_any_source;
                    m.probe_chan = set_chan;
                    m.probe_tag = set_tag;
                    moves.push_back(m);
                }
                break;
            }
            case FiberStatus::drain_wait: {
                bool any = false;
                for (const auto& e : flight_) {
                    if (e.not_before > now_ || e.dst != r || e.chan != st.drain_chan ||
                        e.tag != st.drain_tag)
                        continue;
                    if (!oldest_in_key(e) || match_recv(e) != 0)
                        continue;
                    Move m;
                    m.kind = Move::Kind::drain_deliver;
                    m.rank = r;
                    m.env = e.id;
                    m.send_owner = e.src;
                    m.recv_owner = r;
                    m.send_req = e.send_req;
                    m.e_src = e.src;
                    m.e_dst = e.dst;
                    m.e_chan = e.chan;
                    m.e_tag = e.tag;
                    m.env_sync = e.sync;
                    m.probe_any = true;
                    m.probe_chan = st.drain_chan;
                    m.probe_tag = st.drain_tag;
                    moves.push_back(m);
                    any = true;
                }
                if (!any) {
                    Move m;
                    m.kind = Move::Kind::drain_none;
                    m.rank = r;
                    m.probe_any = true;
                    m.probe_chan = st.drain_chan;
                    m.probe_tag = st.drain_tag;
                    moves.push_back(m);
                }
                break;
            }
            default:
                break;
            }
        }
        for (const auto& e : flight_) {
            if (e.not_before > now_ || !oldest_in_key(e))
                continue;
            ReqId rid = match_recv(e);
            if (rid == 0 || probe_suppresses(e, rid))
                continue;
            const SimReq& r = req(rid);
            Move m;
            m.kind = Move::Kind::deliver;
            m.rank = r.owner;
            m.env = e.id;
            m.recv = rid;
            m.send_owner = e.src;
            m.recv_owner = r.owner;
            m.send_req = e.send_req;
            m.e_src = e.src;
            m.e_dst = e.dst;
            m.e_chan = e.chan;
            m.e_tag = e.tag;
            m.env_sync = e.sync;
            m.probe_any = r.any_source;
            m.probe_src = r.peer;
            m.probe_chan = r.chan;
            m.probe_tag = r.tag;
            moves.push_back(m);
        }
        // a delivery is confluent when the receive is source-specific, is the
        // target of exactly one eligible message, and neither endpoint fiber
        // can currently act (so no enabled move observes its position)
        for (auto& m : moves) {
            if (m.kind != Move::Kind::deliver || m.probe_any)
                continue;
            if (!inert_for_delivery(m.recv_owner))
                continue;
            if (m.env_sync && !inert_for_delivery(m.send_owner))
                continue;
            bool unique = true;
            for (const auto& o : moves)
                if (&o != &m && o.kind == Move::Kind::deliver && o.recv == m.recv)
                    unique = false;
            m.auto_ok = unique;
        }
        std::sort(moves.begin(), moves.end(), move_less);
        return moves;
    }

    void do_deliver(std::uint64_t env_id, ReqId rid, std::uint64_t how)
    {
        const SimEnvelope* ep = envelope_by_id(env_id);
        assert(ep);
        SimEnvelope e = *ep;
        flight_.erase(std::find_if(flight_.begin(), flight_.end(),
                                   [&](const SimEnvelope& x) { return x.id == env_id; }));
        SimReq& rq = req(rid);
        if (e.payload.size() > rq.capacity) {
            rq.state = ReqState::errored;
            rq.error = ReqError::truncation;
            trace_req_error(rid, rq.owner, rq.error);
        } else {
            rq.state = ReqState::complete;
            rq.payload = std::move(e.payload);
            rq.actual_source = e.src;
        }
        SimReq& sq = req(e.send_req);
        if (sq.state == ReqState::pending)
            sq.state = ReqState::complete;
        TraceEvent ev;
        ev.kind = TraceEvent::Kind::deliver;
        ev.env = env_id;
        ev.req = e.send_req;
        ev.req2 = rid;
        ev.src = e.src;
        ev.dst = e.dst;
        ev.chan = e.chan;
        ev.tag = e.tag;
        ev.bytes = rq.state == ReqState::complete ? rq.payload.size() : 0;
        ev.a = how;
        push_event(ev);
    }

    void execute(const Move& m)
    {
        switch (m.kind) {
        case Move::Kind::step:
            resume(m.rank);
            break;
        case Move::Kind::deliver:
            do_deliver(m.env, m.recv, 0);
            break;
        case Move::Kind::test_deliver: {
            do_deliver(m.env, m.recv, 1);
            RankState& st = *ranks_[m.rank];
            st.test_result = (req(m.recv).state == ReqState::complete);
            resume(m.rank);
            break;
        }
        case Move::Kind::test_none: {
            RankState& st = *ranks_[m.rank];
            st.test_result = false;
            resume(m.rank);
            break;
        }
        case Move::Kind::drain_deliver: {
            const SimEnvelope* ep = envelope_by_id(m.env);
            assert(ep);
            SimEnvelope e = *ep;
            flight_.erase(std::find_if(flight_.begin(), flight_.end(),
                                       [&](const SimEnvelope& x) { return x.id == m.env; }));
            SimReq& sq = req(e.send_req);
            if (sq.state == ReqState::pending)
                sq.state = ReqState::complete;
            TraceEvent ev;
            ev.kind = TraceEvent::Kind::deliver;
            ev.env = e.id;
            ev.req = e.send_req;
            ev.req2 = 0;
            ev.src = e.src;
            ev.dst = e.dst;
            ev.chan = e.chan;
            ev.tag = e.tag;
            ev.bytes = e.payload.size();
            ev.a = 2;
            push_event(ev);
            RankState& st = *ranks_[m.rank];
            st.drain_result = Message{e.src, std::move(e.payload)};
            resume(m.rank);
            break;
        }
        case Move::Kind::drain_none: {
            RankState& st = *ranks_[m.rank];
            st.drain_result.reset();
            resume(m.rank);
            break;
        }
        }
    }

    void loop()
    {
        for (;;) {
            fire_due_faults();
            failure_pending_pass();
            auto moves = compute_moves();
            if (moves.empty()) {
                std::uint64_t next = 0;
                bool timed = false;
                auto consider = [&](std::uint64_t t) {
                    if (t <= now_)
                        return;
                    next = timed ? std::min(next, t) : t;
                    timed = true;
                };
                if (fault_idx_ < faults_.events.size())
                    consider(std::max(faults_.events[fault_idx_].time, now_ + 1));
                for (auto& st : ranks_)
                    if (st->status == FiberStatus::sleeping)
                        consider(std::max(st->wake_time, now_ + 1));
                for (const auto& e : flight_)
                    if (e.not_before > now_)
                        consider(e.not_before);
                if (timed) {
                    now_ = next;
                    continue;
                }
                break;
            }
            const std::size_t pick = chooser_->choose(moves);
            execute(moves[pick]);
            ++now_;
            ++steps_;
            if (steps_ >= max_steps_) {
                trace_.truncated = true;
                break;
            }
        }
    }

    void finalize()
    {
        trace_.steps = steps_;
        trace_.rank_end.resize(opts_.ranks);
        trace_.rank_note.resize(opts_.ranks);
        for (RankId r = 0; r < opts_.ranks; ++r) {
            switch (ranks_[r]->status) {
            case FiberStatus::done:
                trace_.rank_end[r] = RankEnd::done;
                break;
            case FiberStatus::killed:
                trace_.rank_end[r] = RankEnd::killed;
                break;
            case FiberStatus::failed:
                trace_.rank_end[r] = RankEnd::failed;
                trace_.rank_note[r] = ranks_[r]->fail_note;
                break;
            default:
                trace_.rank_end[r] = RankEnd::blocked;
                if (!trace_.truncated)
                    trace_.deadlocked = true;
                break;
            }
        }
    }

    void push_event(TraceEvent e)
    {
        e.step = now_;
        trace_.events.push_back(std::move(e));
    }

    void trace_req_error(ReqId id, RankId owner, ReqError err)
    {
        TraceEvent e;
        e.kind = TraceEvent::Kind::req_error;
        e.req = id;
        e.rank = owner;
        e.a = static_cast<std::uint64_t>(err);
        push_event(e);
    }

    void require_open(RankId r, ChannelId ch) const
    {
        auto it = open_.find(r);
        if (it == open_.end() || !it->second.count(ch))
            throw UsageError("channel not open on this rank");
    }

    void check_rank(RankId r) const
    {
        if (r >= opts_.ranks)
            throw UsageError("rank out of range");
    }

    friend class SimEndpoint;

    SimOptions opts_;
    FaultScript faults_;
    const std::vector<RankProgram>& programs_;
    Chooser* chooser_;
    std::uint64_t max_steps_;
    StackPool* pool_;

    std::vector<std::unique_ptr<RankState>> ranks_;
    std::vector<SimReq> reqs_; // index id-1; ids are dense
    std::vector<std::vector<ReqId>> posted_recvs_; // per destination rank, posting order
    std::vector<SimEnvelope> flight_;
    std::map<ChannelId, ChannelKind> chan_kinds_;
    std::map<RankId, std::set<ChannelId>> open_;
    std::vector<MessagePattern> armed_drops_;
    std::vector<std::pair<MessagePattern, std::uint64_t>> armed_delays_;

    Trace trace_;
    std::uint64_t now_ = 0;   // logical clock: advances per event and jumps to timers
    std::uint64_t steps_ = 0; // executed events only
    std::uint64_t req_seq_ = 0;
    std::uint64_t env_seq_ = 0;
    std::size_t fault_idx_ = 0;
    bool any_killed_ = false;
    RankId cur_rank_ = 0;
    ucontext_t sched_ctx_{};
    void* sched_sp_ = nullptr;
};

Sim* Sim::entry_sim_ = nullptr;
RankId Sim::entry_rank_ = 0;

void fiber_main_entry()
{
    Sim::fiber_entry();
    std::abort(); // ucontext path never lands here
}

// --- SimEndpoint forwarding -------------------------------------------------

std::uint32_t SimEndpoint::size() const { return sim_.size(); }
bool SimEndpoint::liveness_enabled() const { return sim_.liveness(); }
bool SimEndpoint::is_alive(RankId r) const { return sim_.alive(r); }
void SimEndpoint::open_channel(ChannelId ch, ChannelKind kind) { sim_.open_channel(rank_, ch, kind); }
void SimEndpoint::close_channel(ChannelId ch) { sim_.close_channel(rank_, ch); }

ReqId SimEndpoint::post_send(RankId dest, ChannelId ch, Tag tag, std::span<const std::byte> payload,
                             SendMode mode)
{
    return sim_.post_send(rank_, dest, ch, tag, payload, mode);
}

ReqId SimEndpoint::post_recv(RankId source, ChannelId ch, Tag tag, std::size_t capacity)
{
    return sim_.post_recv(rank_, source, ch, tag, capacity);
}

bool SimEndpoint::cancel(ReqId req) { return sim_.cancel(rank_, req); }
void SimEndpoint::forbid_cancel(ReqId req) { sim_.forbid_cancel(req); }
ReqSnapshot SimEndpoint::test(ReqId req) { return sim_.test(req); }
std::size_t SimEndpoint::wait_any(std::span<const ReqId> reqs) { return sim_.wait_any(rank_, reqs); }

bool SimEndpoint::wait_all_or_any(std::span<const ReqId> all_of, std::span<const ReqId> any_of)
{
    return sim_.wait_all_or_any(rank_, all_of, any_of);
}
bool SimEndpoint::test_arrived(ReqId recv_req)
{
    const ReqId ids[1] = {recv_req};
    return sim_.test_arrived(rank_, ids);
}

bool SimEndpoint::test_arrived_any(std::span<const ReqId> recv_reqs)
{
    return sim_.test_arrived(rank_, recv_reqs);
}

std::optional<Message> SimEndpoint::drain_one(ChannelId ch, Tag tag)
{
    return sim_.drain_one(rank_, ch, tag);
}

void SimEndpoint::sleep_for(std::uint64_t dt) { sim_.sleep_for(rank_, dt); }
std::vector<std::byte> SimEndpoint::recv_payload(ReqId req) const { return sim_.recv_payload(req); }
RankId SimEndpoint::recv_source(ReqId req) const { return sim_.recv_source(req); }
bool SimEndpoint::runtime_active() const { return sim_.ranks_[rank_]->runtime_active; }
void SimEndpoint::set_runtime_active(bool active)
{
    RankState& st = *sim_.ranks_[rank_];
    if (st.runtime_active != active) {
        st.runtime_active = active;
        TraceEvent e;
        e.kind = TraceEvent::Kind::runtime;
        e.rank = rank_;
        e.a = active ? 1 : 0;
        sim_.push_event(e);
    }
}
bool SimEndpoint::instance_claimed() const { return sim_.ranks_[rank_]->instance_claimed; }
void SimEndpoint::set_instance_claimed(bool claimed)
{
    sim_.ranks_[rank_]->instance_claimed = claimed;
}
void SimEndpoint::note_outcome(std::string_view text) { sim_.note_outcome(rank_, text); }
void SimEndpoint::note_leaks(std::uint64_t count) { sim_.note_leaks(rank_, count); }

} // namespace

// --- SimTransport ------------------------------------------------------------

SimTransport::SimTransport(SimOptions opts) : opts_(opts)
{
    if (opts_.ranks == 0)
        throw UsageError("transport needs at least one rank");
}

SimTransport::~SimTransport() = default;

void SimTransport::set_fault_script(FaultScript script)
{
    std::stable_sort(script.events.begin(), script.events.end(),
                     [](const FaultEvent& a, const FaultEvent& b) { return a.time < b.time; });
    faults_ = std::move(script);
}

Trace SimTransport::run(const std::vector<RankProgram>& programs, std::uint64_t seed)
{
    SeededChooser chooser(seed);
    StackPool pool;
    Sim sim(opts_, faults_, programs, &chooser, opts_.max_steps, &pool);
    auto rr = sim.execute();
    return std::move(rr.trace);
}

ExploreStats SimTransport::explore(const std::vector<RankProgram>& programs,
                                   const ExploreOptions& opts,
                                   const std::function<void(const Trace&)>& on_trace)
{
    ExploreStats stats;
    std::vector<DfsNode> nodes;
    StackPool pool;
    for (;;) {
        if (stats.runs + stats.truncated_runs >= opts.max_runs) {
            stats.partial = true;
            break;
        }
        ReplayChooser chooser(&nodes, &stats, opts.sleep_sets);
        Sim sim(opts_, faults_, programs, &chooser, opts.max_steps_per_run, &pool);
        auto rr = sim.execute();
        if (!rr.pruned) {
            if (rr.trace.truncated) {
                ++stats.truncated_runs;
                stats.partial = true;
            } else {
                ++stats.runs;
                on_trace(rr.trace);
            }
        }
        bool advanced = false;
        while (!nodes.empty()) {
            DfsNode& n = nodes.back();
            std::size_t j = n.cursor + 1;
            while (j < n.options.size() && n.in_sleep0[j])
                ++j;
            if (j < n.options.size()) {
                n.cursor = j;
                advanced = true;
                break;
            }
            nodes.pop_back();
        }
        if (!advanced)
            break;
    }
    return stats;
}

} // namespace errprop

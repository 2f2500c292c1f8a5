#include <errprop/comm.hpp>
#include <errprop/wire.hpp>

#include "proto_detail.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace errprop {

using namespace detail;

namespace {

struct GroupCtx {
    Endpoint& ep;
    const std::vector<RankId>& members;
    std::uint32_t self;
    ChannelId chan;

    std::uint32_t n() const { return static_cast<std::uint32_t>(members.size()); }

    void send(RankId member_idx, Tag tag, std::span<const std::byte> payload) const
    {
        ep.post_send(members[member_idx], chan, tag, payload, SendMode::standard);
    }

    std::vector<std::byte> recv(RankId member_idx, Tag tag, std::size_t cap) const
    {
        ReqId r = ep.post_recv(members[member_idx], chan, tag, cap);
        const ReqId ids[1] = {r};
        ep.wait_any(ids);
        auto st = ep.test(r);
        if (st.state != ReqState::complete)
            throw UsageError("protocol exchange failed unexpectedly");
        return ep.recv_payload(r);
    }
};

void p2p_barrier(const GroupCtx& g, Tag base)
{
    auto rounds = make_barrier_rounds(g.n(), g.self);
    for (std::size_t k = 0; k < rounds.size(); ++k) {
        g.send(rounds[k].to, base + static_cast<Tag>(k), {});
        (void)g.recv(rounds[k].from, base + static_cast<Tag>(k), 0);
    }
}

template <typename T, typename Enc, typename Dec, typename Comb>
T p2p_allreduce(const GroupCtx& g, Tag base, T mine, Enc enc, Dec dec, Comb comb,
                std::size_t msg_cap)
{
    auto plan = make_allreduce_plan(g.n(), g.self);
    if (plan.extra) {
        g.send(plan.fold_peer, base + kSlotFoldPre, enc(mine));
        return dec(g.recv(plan.fold_peer, base + kSlotFoldPost, msg_cap));
    }
    T acc = std::move(mine);
    if (plan.absorbs)
        acc = comb(std::move(acc), dec(g.recv(plan.absorb_peer, base + kSlotFoldPre, msg_cap)));
    for (std::size_t k = 0; k < plan.exchange_peers.size(); ++k) {
        g.send(plan.exchange_peers[k], base + static_cast<Tag>(k), enc(acc));
        acc = comb(std::move(acc),
                   dec(g.recv(plan.exchange_peers[k], base + static_cast<Tag>(k), msg_cap)));
    }
    if (plan.absorbs)
        g.send(plan.absorb_peer, base + kSlotFoldPost, enc(acc));
    return acc;
}

// corruption vote: 1-byte 0/1 payloads, bitwise AND
std::uint8_t p2p_vote_band(const GroupCtx& g, std::uint8_t contribution)
{
    auto enc = [](std::uint8_t v) {
        std::vector<std::byte> b(1);
        b[0] = static_cast<std::byte>(v);
        return b;
    };
    auto dec = [](const std::vector<std::byte>& b) {
        return static_cast<std::uint8_t>(std::to_integer<std::uint8_t>(b.at(0)));
    };
    auto comb = [](std::uint8_t a, std::uint8_t b) { return static_cast<std::uint8_t>(a & b); };
    return p2p_allreduce<std::uint8_t>(g, kTagVote, contribution, enc, dec, comb, 1);
}

std::vector<std::uint64_t> p2p_combine_max(const GroupCtx& g, std::vector<std::uint64_t> vals)
{
    auto enc = [](const std::vector<std::uint64_t>& v) {
        std::vector<std::byte> b;
        b.reserve(v.size() * 8);
        for (auto x : v)
            put_u64(b, x);
        return b;
    };
    auto dec = [](const std::vector<std::byte>& b) {
        std::vector<std::uint64_t> v(b.size() / 8);
        for (std::size_t i = 0; i < v.size(); ++i)
            v[i] = get_u64(b, i * 8);
        return v;
    };
    auto comb = [](std::vector<std::uint64_t> a, const std::vector<std::uint64_t>& b) {
        if (a.size() != b.size())
            throw UsageError("combine width mismatch across ranks");
        for (std::size_t i = 0; i < a.size(); ++i)
            a[i] = std::max(a[i], b[i]);
        return a;
    };
    const std::size_t cap = vals.size() * 8;
    return p2p_allreduce<std::vector<std::uint64_t>>(g, kTagCombine, std::move(vals), enc, dec,
                                                     comb, cap);
}

// inclusive prefix sum over a rank chain
std::uint64_t p2p_scan_sum(const GroupCtx& g, std::uint64_t mine)
{
    std::uint64_t acc = mine;
    if (g.self > 0)
        acc += get_u64(g.recv(g.self - 1, kTagScan, 8));
    if (g.self + 1 < g.n())
        g.send(g.self + 1, kTagScan, encode_u64(acc));
    return acc;
}

std::uint64_t p2p_bcast_from(const GroupCtx& g, RankId root, std::uint64_t value)
{
    for (const auto& step : make_bcast_steps(g.n(), g.self, root)) {
        const Tag t = kTagCount + static_cast<Tag>(step.round);
        if (step.send)
            g.send(step.peer, t, encode_u64(value));
        else
            value = get_u64(g.recv(step.peer, t, 8));
    }
    return value;
}

} // namespace

// --- outcome helpers ----------------------------------------------------------

std::string ErrorReport::to_string() const
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i)
            os << ',';
        os << '(' << entries[i].rank << ',' << entries[i].code << ')';
    }
    os << ']';
    return os.str();
}

bool is_error_outcome(const WaitOutcome& o)
{
    return !std::holds_alternative<Success>(o);
}

std::string outcome_label(const WaitOutcome& o)
{
    if (std::holds_alternative<Success>(o))
        return "success";
    if (const auto* p = std::get_if<Propagated>(&o))
        return "propagated" + p->report.to_string();
    if (std::holds_alternative<CorruptedComm>(o))
        return "corrupted";
    const auto& te = std::get<TransportError>(o);
    switch (te.error) {
    case ReqError::peer_dead: return "transport(peer-dead)";
    case ReqError::peer_dead_pending: return "transport(peer-dead-pending)";
    case ReqError::truncation: return "transport(truncation)";
    default: return "transport(?)";
    }
}

// --- collective state ----------------------------------------------------------

struct Comm::CollectiveState {
    bool is_barrier = false;
    ReduceOp op = ReduceOp::sum;
    std::uint64_t acc = 0;
    std::uint32_t epoch = 0;

    AllReducePlan plan;
    std::vector<BarrierRound> barrier_rounds;

    // phase machine: 0 = fold-pre / first barrier round, then one phase per
    // exchange round, then the fold-post send
    std::size_t phase = 0;
    ReqId await_req = 0;
    bool finished = false;
    std::vector<ReqId> internals; // never cancelled; abandoned on error episodes
};

// --- construction ----------------------------------------------------------

Comm::Comm(Endpoint& ep, Mode mode, std::vector<RankId> members, RankId self_idx,
           std::uint64_t lineage)
    : ep_(ep), mode_(mode), members_(std::move(members)), self_(self_idx), lineage_(lineage)
{
    data_ch_ = chan_id(lineage_, ChannelKind::data);
    err_ch_ = chan_id(lineage_, ChannelKind::error);
    ctrl_ch_ = chan_id(lineage_, ChannelKind::control);
    ep_.open_channel(data_ch_, ChannelKind::data);
    if (mode_ == Mode::black_channel) {
        ep_.open_channel(err_ch_, ChannelKind::error);
        err_recv_ = ep_.post_recv(kAnySource, err_ch_, kTagError, 8);
    }
}

Comm::~Comm()
{
    try {
        scope_exit(false);
    } catch (...) {
        // scope exit must not raise
    }
}

std::unique_ptr<Comm> Comm::duplicate()
{
    if (state_ != CommState::healthy)
        throw UsageError("duplicate on a non-healthy communicator");
    if (children_ >= kMaxChildren)
        throw UsageError("communicator lineage exhausted");
    const std::uint64_t child = lineage_ * (kMaxChildren + 1) + (++children_);
    return std::unique_ptr<Comm>(new Comm(ep_, mode_, members_, self_, child));
}

RankId Comm::local_of(RankId global) const
{
    for (std::size_t i = 0; i < members_.size(); ++i)
        if (members_[i] == global)
            return static_cast<RankId>(i);
    throw UsageError("rank not in this communicator");
}

// --- futures ----------------------------------------------------------

CommFuture Comm::make_future(FutRec rec)
{
    futs_.push_back(std::make_unique<FutRec>(std::move(rec)));
    return CommFuture(this, futs_.size() - 1);
}

CommFuture Comm::isend(RankId dest, Tag tag, std::span<const std::byte> payload)
{
    if (dest >= size())
        throw UsageError("destination out of range");
    if (tag < 0 || tag >= kUserTagLimit)
        throw UsageError("user tag out of range");
    FutRec rec;
    rec.is_send = true;
    rec.peer_local = dest;
    if (state_ != CommState::healthy) {
        rec.dud = true;
        return make_future(std::move(rec));
    }
    rec.req = ep_.post_send(members_[dest], data_ch_, tag, payload, SendMode::standard);
    return make_future(std::move(rec));
}

CommFuture Comm::irecv(RankId source, Tag tag, std::size_t capacity)
{
    if (source != kAnySource && source >= size())
        throw UsageError("source out of range");
    if (tag < 0 || tag >= kUserTagLimit)
        throw UsageError("user tag out of range");
    FutRec rec;
    if (state_ != CommState::healthy) {
        rec.dud = true;
        return make_future(std::move(rec));
    }
    const RankId global = source == kAnySource ? kAnySource : members_[source];
    rec.req = ep_.post_recv(global, data_ch_, tag, capacity);
    return make_future(std::move(rec));
}

CommFuture Comm::all_reduce(std::uint64_t value, ReduceOp op)
{
    FutRec rec;
    if (state_ != CommState::healthy) {
        rec.dud = true;
        return make_future(std::move(rec));
    }
    rec.coll = std::make_unique<CollectiveState>();
    rec.coll->op = op;
    rec.coll->acc = value;
    rec.coll->epoch = ++coll_epoch_;
    rec.coll->plan = make_allreduce_plan(size(), self_);
    return make_future(std::move(rec));
}

CommFuture Comm::barrier()
{
    FutRec rec;
    if (state_ != CommState::healthy) {
        rec.dud = true;
        return make_future(std::move(rec));
    }
    rec.coll = std::make_unique<CollectiveState>();
    rec.coll->is_barrier = true;
    rec.coll->epoch = ++coll_epoch_;
    rec.coll->barrier_rounds = make_barrier_rounds(size(), self_);
    return make_future(std::move(rec));
}

WaitOutcome Comm::success_of(const FutRec& rec)
{
    if (rec.is_send)
        return Success{{}, rec.peer_local};
    Success s;
    s.payload = ep_.recv_payload(rec.req);
    s.source = local_of(ep_.recv_source(rec.req));
    return s;
}

// --- wait ----------------------------------------------------------

WaitOutcome Comm::wait(CommFuture& f)
{
    if (f.comm_ != this || f.idx_ >= futs_.size())
        throw UsageError("future does not belong to this communicator");
    FutRec& rec = *futs_[f.idx_];
    if (rec.consumed)
        throw UsageError("future already waited");
    if (episode_) {
        rec.consumed = true;
        return *episode_;
    }
    if (rec.dud) {
        rec.consumed = true;
        return CorruptedComm{};
    }
    if (rec.coll)
        return wait_collective(rec);
    if (mode_ == Mode::black_channel)
        return wait_bc(rec);
    return wait_ulfm(rec);
}

WaitOutcome Comm::wait_bc(FutRec& rec)
{
    const ReqId ids[2] = {rec.req, err_recv_};
    const std::size_t i = ep_.wait_any(ids);
    rec.consumed = true;
    if (i == 0) {
        // the user request finished first: an error may still have been
        // signalled, so force any pending notification to count
        if (ep_.test_arrived(err_recv_))
            return enter_receiver_episode();
        const auto st = ep_.test(rec.req);
        if (st.state == ReqState::errored)
            return TransportError{st.error};
        return success_of(rec);
    }
    return enter_receiver_episode();
}

WaitOutcome Comm::wait_ulfm(FutRec& rec)
{
    arm_ctrl();
    std::vector<ReqId> ids;
    ids.push_back(rec.req);
    ids.insert(ids.end(), notice_recvs_.begin(), notice_recvs_.end());
    const std::size_t i = ep_.wait_any(ids);
    rec.consumed = true;
    if (i == 0) {
        if (notice_present())
            return consume_notices_and_resolve();
        const auto st = ep_.test(rec.req);
        if (st.state == ReqState::errored) {
            if (st.error == ReqError::peer_dead || st.error == ReqError::peer_dead_pending) {
                revoke();
                return on_revoked(LocalReason::hard_fault);
            }
            return TransportError{st.error};
        }
        return success_of(rec);
    }
    const auto st = ep_.test(ids[i]);
    if (st.state == ReqState::complete)
        return consume_notices_and_resolve();
    // an armed notice receive reported a process failure
    revoke();
    return on_revoked(LocalReason::hard_fault);
}

// --- user collectives ----------------------------------------------------------

namespace {

std::vector<std::byte> coll_payload(ReduceOp op, std::uint64_t v)
{
    std::vector<std::byte> b;
    b.reserve(9);
    b.push_back(static_cast<std::byte>(op));
    put_u64(b, v);
    return b;
}

} // namespace

void Comm::setup_collective_phase(CollectiveState& cs)
{
    const Tag base = kCollTagBase + static_cast<Tag>(cs.epoch) * 256;
    auto post_send = [&](RankId peer, Tag slot, std::span<const std::byte> payload) {
        ReqId r = ep_.post_send(members_[peer], data_ch_, base + slot, payload, SendMode::standard);
        ep_.forbid_cancel(r);
        cs.internals.push_back(r);
    };
    auto post_recv = [&](RankId peer, Tag slot, std::size_t cap) {
        ReqId r = ep_.post_recv(members_[peer], data_ch_, base + slot, cap);
        ep_.forbid_cancel(r);
        cs.internals.push_back(r);
        cs.await_req = r;
    };

    if (cs.is_barrier) {
        if (cs.phase >= cs.barrier_rounds.size()) {
            cs.finished = true;
            return;
        }
        const auto& rd = cs.barrier_rounds[cs.phase];
        post_send(rd.to, static_cast<Tag>(cs.phase), {});
        post_recv(rd.from, static_cast<Tag>(cs.phase), 0);
        return;
    }

    const auto& plan = cs.plan;
    if (plan.extra) {
        if (cs.phase == 0) {
            post_send(plan.fold_peer, kSlotFoldPre, coll_payload(cs.op, cs.acc));
            post_recv(plan.fold_peer, kSlotFoldPost, 9);
        } else {
            cs.finished = true;
        }
        return;
    }
    std::size_t phase = cs.phase;
    if (plan.absorbs) {
        if (phase == 0) {
            post_recv(plan.absorb_peer, kSlotFoldPre, 9);
            return;
        }
        --phase;
    }
    if (phase < plan.exchange_peers.size()) {
        const RankId peer = plan.exchange_peers[phase];
        post_send(peer, static_cast<Tag>(phase), coll_payload(cs.op, cs.acc));
        post_recv(peer, static_cast<Tag>(phase), 9);
        return;
    }
    if (plan.absorbs)
        post_send(plan.absorb_peer, kSlotFoldPost, coll_payload(cs.op, cs.acc));
    cs.finished = true;
}

void Comm::advance_collective(CollectiveState& cs)
{
    const auto st = ep_.test(cs.await_req);
    if (st.state != ReqState::complete)
        throw UsageError("mismatched collective call across ranks");
    if (!cs.is_barrier) {
        const auto payload = ep_.recv_payload(cs.await_req);
        if (payload.size() != 9 || std::to_integer<std::uint8_t>(payload[0]) !=
                                       static_cast<std::uint8_t>(cs.op))
            throw UsageError("mismatched collective call across ranks");
        const std::uint64_t v = get_u64(payload, 1);
        if (cs.plan.extra)
            cs.acc = v; // the fold-post message carries the final result
        else
            cs.acc = apply_op(cs.op, cs.acc, v);
    }
    cs.await_req = 0;
    ++cs.phase;
}

WaitOutcome Comm::collective_result(const CollectiveState& cs) const
{
    Success s;
    s.source = self_;
    if (!cs.is_barrier)
        s.payload = encode_u64(cs.acc);
    return s;
}

WaitOutcome Comm::wait_collective(FutRec& rec)
{
    CollectiveState& cs = *rec.coll;
    for (;;) {
        if (!cs.finished && cs.await_req == 0)
            setup_collective_phase(cs);
        if (cs.finished) {
            rec.consumed = true;
            if (mode_ == Mode::black_channel) {
                if (ep_.test_arrived(err_recv_))
                    return enter_receiver_episode();
            } else {
                arm_ctrl();
                if (notice_present())
                    return consume_notices_and_resolve();
            }
            return collective_result(cs);
        }
        std::vector<ReqId> ids;
        ids.push_back(cs.await_req);
        if (mode_ == Mode::black_channel) {
            ids.push_back(err_recv_);
        } else {
            arm_ctrl();
            ids.insert(ids.end(), notice_recvs_.begin(), notice_recvs_.end());
        }
        const std::size_t i = ep_.wait_any(ids);
        bool interrupted = i > 0;
        if (!interrupted)
            for (std::size_t k = 1; k < ids.size(); ++k)
                if (ep_.test(ids[k]).state != ReqState::pending)
                    interrupted = true;
        if (interrupted) {
            // error episode wins; internal requests are abandoned in place
            rec.consumed = true;
            if (mode_ == Mode::black_channel)
                return enter_receiver_episode();
            bool complete = false;
            for (ReqId r : notice_recvs_)
                if (ep_.test(r).state == ReqState::complete)
                    complete = true;
            if (complete)
                return consume_notices_and_resolve();
            revoke();
            return on_revoked(LocalReason::hard_fault);
        }
        advance_collective(cs);
    }
}

// --- black-channel episode ----------------------------------------------------------

WaitOutcome Comm::signal_error(std::uint64_t code)
{
    if (code < kMinErrorCode || code > kMaxErrorCode)
        throw UsageError("error code out of range");
    if (state_ != CommState::healthy && state_ != CommState::erroring)
        throw UsageError("signal_error on a closed communicator");
    if (mode_ == Mode::ulfm) {
        revoke();
        return on_revoked(LocalReason::signalled, code);
    }
    return run_signal_machinery(code, false);
}

WaitOutcome Comm::run_signal_machinery(std::uint64_t code, bool self_corrupt)
{
    state_ = CommState::erroring;
    const auto payload = encode_u64(code);
    episode_sends_.clear();
    for (std::uint32_t i = 0; i < size(); ++i)
        if (i != self_)
            episode_sends_.push_back(
                ep_.post_send(members_[i], err_ch_, kTagError, payload, SendMode::synchronous));

    // cancelling the armed error receive fails exactly when another rank's
    // notification already matched it
    bool saw_error = !ep_.cancel(err_recv_);

    // per-peer drain receives stay armed so simultaneous signallers can
    // complete each other's notifications; leftovers die after the barrier
    arm_episode_drains();
    std::vector<ReqId> pending = episode_sends_;
    while (!saw_error && !pending.empty()) {
        ep_.wait_all_or_any(pending, episode_drains_);
        for (ReqId d : episode_drains_)
            if (ep_.test(d).state != ReqState::pending)
                saw_error = true;
        std::erase_if(pending,
                      [&](ReqId r) { return ep_.test(r).state != ReqState::pending; });
    }
    return resolve_error(true, self_corrupt, code);
}

WaitOutcome Comm::enter_receiver_episode()
{
    state_ = CommState::erroring;
    arm_episode_drains();
    return resolve_error(false, false, 0);
}

// One tag-0 receive per peer: additional notifications from simultaneous
// signallers complete into these while we head into the barrier; whatever
// stays pending is cancelled once everyone has entered.
void Comm::arm_episode_drains()
{
    for (std::uint32_t i = 0; i < size(); ++i)
        if (i != self_)
            episode_drains_.push_back(ep_.post_recv(members_[i], err_ch_, kTagError, 8));
}

WaitOutcome Comm::resolve_error(bool self_failed, bool self_corrupt, std::uint64_t code)
{
    if (mode_ != Mode::black_channel)
        throw UsageError("resolve_error is the black-channel resolution path");
    if (episode_)
        return *episode_;
    state_ = CommState::erroring;
    GroupCtx g{ep_, members_, self_, err_ch_};

    // wait for all ranks to be in the error state
    p2p_barrier(g, kTagBarrier);

    // notifications to ranks that were signalled by someone else stay
    // unmatched; cancel them now that everyone has entered the episode
    for (ReqId s : episode_sends_)
        if (ep_.test(s).state == ReqState::pending)
            ep_.cancel(s);
    episode_sends_.clear();
    for (ReqId d : episode_drains_)
        if (ep_.test(d).state == ReqState::pending)
            ep_.cancel(d);
    episode_drains_.clear();

    // corruption vote: healthy ranks contribute 1, an AND of 0 condemns the
    // communicator
    const std::uint8_t band = p2p_vote_band(g, self_corrupt ? 0 : 1);
    WaitOutcome out;
    if (band == 0)
        out = CorruptedComm{};
    else
        out = Propagated{determine_failed_on(err_ch_, self_failed, code, self_)};
    close_episode(out);
    return *episode_;
}

ErrorReport Comm::determine_failed(bool self_failed, std::uint64_t code)
{
    if (mode_ == Mode::black_channel)
        return determine_failed_on(err_ch_, self_failed, code, self_);
    ensure_ctrl_open();
    return determine_failed_on(ctrl_ch_, self_failed, code, self_);
}

ErrorReport Comm::determine_failed_on(ChannelId ch, bool self_failed, std::uint64_t code,
                                      std::uint64_t report_id)
{
    GroupCtx g{ep_, members_, self_, ch};
    // rank-ordered prefix sum assigns each failed rank a dense index
    const std::uint64_t scan = p2p_scan_sum(g, self_failed ? 1 : 0);
    // the last rank holds the failure count; broadcast it
    const std::uint64_t count = p2p_bcast_from(g, size() - 1, scan);
    if (count == 0)
        throw UsageError("failed-rank resolution entered with no failed rank");
    std::vector<std::uint64_t> slots(2 * count, 0);
    if (self_failed) {
        const std::size_t idx = static_cast<std::size_t>(scan - 1);
        slots[idx] = report_id;
        slots[count + idx] = code;
    }
    slots = p2p_combine_max(g, std::move(slots));
    ErrorReport rep;
    rep.entries.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        rep.entries.push_back({static_cast<RankId>(slots[i]), slots[count + i]});
    std::sort(rep.entries.begin(), rep.entries.end(),
              [](const ReportEntry& a, const ReportEntry& b) { return a.rank < b.rank; });
    return rep;
}

void Comm::close_episode(WaitOutcome out)
{
    episode_ = std::move(out);
    state_ = CommState::closed;
    if (err_recv_ != 0 && ep_.test(err_recv_).state == ReqState::pending)
        ep_.cancel(err_recv_);
    // notice receives stay armed: flood messages still in flight complete
    // into them quietly instead of racing a cancellation
    std::uint64_t leaks = 0;
    for (auto& recp : futs_) {
        FutRec& rec = *recp;
        if (rec.dud)
            continue;
        if (rec.coll) {
            if (!rec.coll->finished) {
                ++leaks; // the collective itself
                for (ReqId r : rec.coll->internals)
                    if (ep_.test(r).state == ReqState::pending)
                        ++leaks;
                rec.coll->finished = true;
            }
        } else if (rec.req != 0 && ep_.test(rec.req).state == ReqState::pending) {
            ep_.cancel(rec.req);
            ++leaks;
        }
    }
    ep_.note_leaks(leaks);
}

// --- scope exit ----------------------------------------------------------

std::optional<WaitOutcome> Comm::scope_exit(bool unwinding)
{
    if (released_)
        return std::nullopt;
    std::optional<WaitOutcome> out;
    if (!episode_) {
        if (mode_ == Mode::black_channel) {
            if (unwinding) {
                out = run_signal_machinery(kUnwindCode, true);
            } else if (ep_.test_arrived(err_recv_)) {
                // an error notification raced our clean exit: join the episode
                out = enter_receiver_episode();
            } else {
                ep_.cancel(err_recv_);
            }
        } else {
            if (unwinding) {
                revoke();
                out = on_revoked(LocalReason::corrupt);
            } else if (revoked_) {
                out = on_revoked(LocalReason::none);
            } else if (!notice_recvs_.empty() && notice_present()) {
                out = consume_notices_and_resolve();
            } else {
                for (ReqId r : notice_recvs_)
                    if (ep_.test(r).state == ReqState::pending)
                        ep_.cancel(r);
            }
        }
    }
    release();
    return out;
}

void Comm::release()
{
    if (released_)
        return;
    released_ = true;
    // abandon unconsumed user point-to-point requests quietly (no episode)
    for (auto& recp : futs_) {
        FutRec& rec = *recp;
        if (!rec.coll && !rec.dud && rec.req != 0 &&
            ep_.test(rec.req).state == ReqState::pending)
            ep_.cancel(rec.req);
    }
    ep_.close_channel(data_ch_);
    if (mode_ == Mode::black_channel)
        ep_.close_channel(err_ch_);
    if (ctrl_open_)
        ep_.close_channel(ctrl_ch_);
    state_ = CommState::closed;
}

// --- instance ----------------------------------------------------------

Instance Instance::acquire(Endpoint& ep, Mode mode)
{
    if (ep.instance_claimed())
        throw UsageError("an instance is already live for this rank");
    Instance inst;
    inst.ep_ = &ep;
    if (!ep.runtime_active()) {
        ep.set_runtime_active(true);
        inst.owns_ = true;
    }
    ep.set_instance_claimed(true);
    std::vector<RankId> members(ep.size());
    std::iota(members.begin(), members.end(), 0);
    inst.world_.reset(new Comm(ep, mode, std::move(members), ep.rank(), kWorldLineage));
    return inst;
}

Instance::Instance(Instance&& o) noexcept
    : ep_(o.ep_), owns_(o.owns_), world_(std::move(o.world_))
{
    o.ep_ = nullptr;
    o.owns_ = false;
}

Instance& Instance::operator=(Instance&& o) noexcept
{
    if (this != &o) {
        this->~Instance();
        ep_ = o.ep_;
        owns_ = o.owns_;
        world_ = std::move(o.world_);
        o.ep_ = nullptr;
        o.owns_ = false;
    }
    return *this;
}

Instance::~Instance()
{
    if (!ep_)
        return;
    world_.reset(); // clean scope exit of the world communicator
    ep_->set_instance_claimed(false);
    if (owns_)
        ep_->set_runtime_active(false);
    ep_ = nullptr;
}

} // namespace errprop

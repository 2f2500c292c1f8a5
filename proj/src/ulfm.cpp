#include <errprop/comm.hpp>
#include <errprop/wire.hpp>

#include "proto_detail.hpp"

#include <algorithm>

namespace errprop {

using namespace detail;

void Comm::ensure_ctrl_open()
{
    if (mode_ != Mode::ulfm)
        throw UsageError("control channel exists in ulfm mode only");
    if (!ctrl_open_) {
        ep_.open_channel(ctrl_ch_, ChannelKind::control);
        ctrl_open_ = true;
    }
}

// Arm the notice receive. Lazy: nothing is posted until the first operation
// that must be interruptible by revocation.
void Comm::arm_ctrl()
{
    ensure_ctrl_open();
    if (!notice_recvs_.empty() || revoked_ || size() == 1)
        return;
    notice_recvs_.push_back(ep_.post_recv(kAnySource, ctrl_ch_, kTagRevoke, 5));
}

void Comm::forward_notice(RankId origin)
{
    if (notice_forwarded_)
        return;
    notice_forwarded_ = true;
    std::vector<std::byte> payload;
    payload.push_back(static_cast<std::byte>(kCtrlRevoke));
    put_u32(payload, origin);
    for (std::uint32_t i = 0; i < size(); ++i) {
        if (i == self_)
            continue;
        if (ep_.liveness_enabled() && !ep_.is_alive(members_[i]))
            continue;
        ep_.post_send(members_[i], ctrl_ch_, kTagRevoke, payload, SendMode::standard);
    }
}

// True when any armed notice receive is complete or an in-flight notice can
// be forced to arrive.
bool Comm::notice_present()
{
    if (notice_recvs_.empty())
        return revoked_;
    return ep_.test_arrived_any(notice_recvs_);
}

// A notice has arrived (or revocation is already known): mark, flood once,
// then run the post-revocation agreement.
WaitOutcome Comm::consume_notices_and_resolve()
{
    for (ReqId r : notice_recvs_)
        if (ep_.test(r).state == ReqState::complete)
            handle_notice(r);
    return on_revoked(LocalReason::none);
}

void Comm::handle_notice(ReqId completed)
{
    const auto payload = ep_.recv_payload(completed);
    RankId origin = self_;
    if (payload.size() >= 5 && std::to_integer<std::uint8_t>(payload[0]) == kCtrlRevoke)
        origin = get_u32(payload, 1);
    revoked_ = true;
    if (std::find(revokers_.begin(), revokers_.end(), origin) == revokers_.end())
        revokers_.push_back(origin);
    if (state_ == CommState::healthy || state_ == CommState::erroring)
        state_ = CommState::revoked;
    forward_notice(origin);
}

void Comm::revoke()
{
    if (mode_ != Mode::ulfm)
        throw UsageError("revoke requires ulfm mode");
    ensure_ctrl_open();
    if (!revoked_) {
        revoked_ = true;
        revokers_.push_back(self_);
        if (state_ == CommState::healthy || state_ == CommState::erroring)
            state_ = CommState::revoked;
    }
    forward_notice(self_);
}

RevocationState Comm::revocation() const
{
    return RevocationState{revoked_, revokers_};
}

std::uint64_t Comm::agree(std::uint64_t contribution)
{
    if (mode_ != Mode::ulfm)
        throw UsageError("agree requires ulfm mode");
    ensure_ctrl_open();
    const Tag t = kTagAgreeBase + static_cast<Tag>(++agree_epoch_);
    std::vector<std::byte> payload;
    payload.push_back(static_cast<std::byte>(kCtrlAgree));
    put_u64(payload, contribution);
    for (std::uint32_t i = 0; i < size(); ++i)
        if (i != self_ && ep_.is_alive(members_[i]))
            ep_.post_send(members_[i], ctrl_ch_, t, payload, SendMode::standard);
    std::uint64_t acc = contribution;
    for (std::uint32_t i = 0; i < size(); ++i) {
        if (i == self_ || !ep_.is_alive(members_[i]))
            continue;
        const ReqId r = ep_.post_recv(members_[i], ctrl_ch_, t, 9);
        const ReqId ids[1] = {r};
        ep_.wait_any(ids);
        const auto st = ep_.test(r);
        if (st.state != ReqState::complete)
            continue; // peer failed: agreement proceeds among survivors
        acc &= get_u64(ep_.recv_payload(r), 1);
    }
    return acc;
}

std::unique_ptr<Comm> Comm::shrink()
{
    if (mode_ != Mode::ulfm)
        throw UsageError("shrink requires ulfm mode");
    bool any_dead = false;
    for (RankId m : members_)
        if (!ep_.is_alive(m))
            any_dead = true;
    if (!revoked_ && !any_dead)
        throw UsageError("shrink needs a revoked communicator or known failures");
    ensure_ctrl_open();

    const std::uint32_t n = size();
    std::vector<std::uint8_t> view(n, 0);
    for (std::uint32_t i = 0; i < n; ++i)
        view[i] = ep_.is_alive(members_[i]) ? 1 : 0;
    view[self_] = 1;

    // one membership-bitmap exchange among the ranks we consider live; a
    // receive that errors out removes its peer from the agreed view
    const Tag t = kTagShrinkBase + static_cast<Tag>(++shrink_epoch_);
    std::vector<std::byte> payload;
    payload.push_back(static_cast<std::byte>(kCtrlShrink));
    for (auto v : view)
        payload.push_back(static_cast<std::byte>(v));
    for (std::uint32_t i = 0; i < n; ++i)
        if (i != self_ && view[i])
            ep_.post_send(members_[i], ctrl_ch_, t, payload, SendMode::standard);
    std::vector<std::uint8_t> agreed = view;
    for (std::uint32_t i = 0; i < n; ++i) {
        if (i == self_ || !view[i])
            continue;
        const ReqId r = ep_.post_recv(members_[i], ctrl_ch_, t, 1 + n);
        const ReqId ids[1] = {r};
        ep_.wait_any(ids);
        const auto st = ep_.test(r);
        if (st.state != ReqState::complete) {
            agreed[i] = 0;
            continue;
        }
        const auto bytes = ep_.recv_payload(r);
        for (std::uint32_t j = 0; j < n; ++j)
            agreed[j] &= std::to_integer<std::uint8_t>(bytes.at(1 + j));
    }

    std::vector<RankId> survivors;
    RankId new_self = 0;
    for (std::uint32_t i = 0; i < n; ++i)
        if (agreed[i]) {
            if (i == self_)
                new_self = static_cast<RankId>(survivors.size());
            survivors.push_back(members_[i]);
        }
    if (children_ >= kMaxChildren)
        throw UsageError("communicator lineage exhausted");
    const std::uint64_t child = lineage_ * (kMaxChildren + 1) + (++children_);
    return std::unique_ptr<Comm>(new Comm(ep_, mode_, std::move(survivors), new_self, child));
}

WaitOutcome Comm::on_revoked(LocalReason reason, std::uint64_t code)
{
    if (mode_ != Mode::ulfm)
        throw UsageError("on_revoked requires ulfm mode");
    if (episode_)
        return *episode_;
    if (state_ == CommState::healthy || state_ == CommState::erroring)
        state_ = CommState::revoked;
    const std::uint64_t contribution =
        (reason == LocalReason::corrupt || reason == LocalReason::hard_fault) ? 0 : 1;
    WaitOutcome out;
    if (agree(contribution) == 0) {
        out = CorruptedComm{};
    } else {
        // nobody is corrupt or hard-failed: shrink (same size here) and run
        // the failed-rank resolution on the fresh communicator, reporting ids
        // in this communicator's numbering
        auto shrunk = shrink();
        shrunk->ensure_ctrl_open();
        ErrorReport rep = shrunk->determine_failed_on(shrunk->ctrl_ch_,
                                                      reason == LocalReason::signalled, code,
                                                      self_);
        out = Propagated{std::move(rep)};
    }
    close_episode(std::move(out));
    return *episode_;
}

FaultClass Comm::wait_revocable(ReqId user_req)
{
    if (mode_ != Mode::ulfm)
        throw UsageError("wait_revocable requires ulfm mode");
    if (revoked_)
        return FaultClass::revoked; // locally immediate
    arm_ctrl();
    std::vector<ReqId> ids;
    ids.push_back(user_req);
    ids.insert(ids.end(), notice_recvs_.begin(), notice_recvs_.end());
    const std::size_t i = ep_.wait_any(ids);
    if (i == 0) {
        if (notice_present()) {
            for (ReqId r : notice_recvs_)
                if (ep_.test(r).state == ReqState::complete)
                    handle_notice(r);
            return FaultClass::revoked;
        }
        const auto st = ep_.test(user_req);
        if (st.state == ReqState::errored) {
            if (st.error == ReqError::peer_dead)
                return FaultClass::proc_failed;
            if (st.error == ReqError::peer_dead_pending)
                return FaultClass::proc_failed_pending;
        }
        return FaultClass::none;
    }
    const auto st = ep_.test(ids[i]);
    if (st.state == ReqState::complete) {
        handle_notice(ids[i]);
        return FaultClass::revoked;
    }
    // an armed notice receive reported a process failure
    return st.error == ReqError::peer_dead ? FaultClass::proc_failed
                                           : FaultClass::proc_failed_pending;
}

} // namespace errprop

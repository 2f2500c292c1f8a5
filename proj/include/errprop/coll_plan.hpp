#pragma once

#include <errprop/transport.hpp>

#include <cstdint>
#include <vector>

namespace errprop {

enum class ReduceOp : std::uint8_t { sum = 1, max = 2, band = 3 };

std::uint64_t apply_op(ReduceOp op, std::uint64_t a, std::uint64_t b);
const char* to_string(ReduceOp op);

// Peer schedule for a recursive-doubling all-reduce over n dense member
// indices, with a fold-in pre/post phase when n is not a power of two.
// Extras (index >= p, p the largest power of two <= n) hand their value to
// index-p up front and receive the final result afterwards.
struct AllReducePlan {
    bool extra = false;
    RankId fold_peer = 0;
    bool absorbs = false; // index < n - p: combines one extra's value
    RankId absorb_peer = 0;
    std::vector<RankId> exchange_peers; // doubling rounds in order
};

AllReducePlan make_allreduce_plan(std::uint32_t n, RankId self);

// Dissemination barrier: in round k notify (self + 2^k) mod n and await
// (self - 2^k) mod n.
struct BarrierRound {
    RankId to = 0;
    RankId from = 0;
};
std::vector<BarrierRound> make_barrier_rounds(std::uint32_t n, RankId self);

// Binomial-tree broadcast from root, as ordered send/receive steps.
struct BcastStep {
    bool send = false;
    RankId peer = 0;
    std::uint32_t round = 0;
};
std::vector<BcastStep> make_bcast_steps(std::uint32_t n, RankId self, RankId root);

} // namespace errprop

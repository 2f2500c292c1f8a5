#include <errprop/coll_plan.hpp>

#include <algorithm>

namespace errprop {

std::uint64_t apply_op(ReduceOp op, std::uint64_t a, std::uint64_t b)
{
    switch (op) {
    case ReduceOp::sum: return a + b;
    case ReduceOp::max: return std::max(a, b);
    case ReduceOp::band: return a & b;
    }
    return 0;
}

const char* to_string(ReduceOp op)
{
    switch (op) {
    case ReduceOp::sum: return "sum";
    case ReduceOp::max: return "max";
    case ReduceOp::band: return "band";
    }
    return "?";
}

namespace {

std::uint32_t floor_pow2(std::uint32_t n)
{
    std::uint32_t p = 1;
    while (p * 2 <= n)
        p *= 2;
    return p;
}

} // namespace

AllReducePlan make_allreduce_plan(std::uint32_t n, RankId self)
{
    if (n == 0 || self >= n)
        throw UsageError("bad all-reduce plan arguments");
    AllReducePlan plan;
    const std::uint32_t p = floor_pow2(n);
    const std::uint32_t extras = n - p;
    if (self >= p) {
        plan.extra = true;
        plan.fold_peer = self - p;
        return plan;
    }
    if (self < extras) {
        plan.absorbs = true;
        plan.absorb_peer = self + p;
    }
    for (std::uint32_t bit = 1; bit < p; bit *= 2)
        plan.exchange_peers.push_back(self ^ bit);
    return plan;
}

std::vector<BarrierRound> make_barrier_rounds(std::uint32_t n, RankId self)
{
    if (n == 0 || self >= n)
        throw UsageError("bad barrier arguments");
    std::vector<BarrierRound> rounds;
    for (std::uint32_t dist = 1; dist < n; dist *= 2) {
        BarrierRound r;
        r.to = (self + dist) % n;
        r.from = static_cast<RankId>((self + n - (dist % n)) % n);
        rounds.push_back(r);
    }
    return rounds;
}

std::vector<BcastStep> make_bcast_steps(std::uint32_t n, RankId self, RankId root)
{
    if (n == 0 || self >= n || root >= n)
        throw UsageError("bad broadcast arguments");
    std::vector<BcastStep> steps;
    const std::uint32_t v = (self + n - root) % n; // relabel so the root is 0
    for (std::uint32_t bit = 1, round = 0; bit < n; bit *= 2, ++round) {
        if (v < bit) {
            const std::uint32_t child = v + bit;
            if (child < n)
                steps.push_back({true, static_cast<RankId>((child + root) % n), round});
        } else if (v < bit * 2) {
            steps.push_back({false, static_cast<RankId>(((v - bit) + root) % n), round});
        }
    }
    return steps;
}

} // namespace errprop

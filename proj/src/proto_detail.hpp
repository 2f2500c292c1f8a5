#pragma once

#include <errprop/transport.hpp>

#include <cstdint>

// Wire constants shared by the protocol core and the ulfm layer.
namespace errprop::detail {

inline constexpr std::uint64_t kWorldLineage = 1;
inline constexpr std::uint32_t kMaxChildren = 1023;

inline ChannelId chan_id(std::uint64_t lineage, ChannelKind k)
{
    return lineage * 4 + static_cast<std::uint64_t>(k);
}

// error-channel protocol tags
inline constexpr Tag kTagError = 0; // 8-byte big-endian error code
inline constexpr Tag kTagBarrier = 100;
inline constexpr Tag kTagVote = 200;
inline constexpr Tag kTagScan = 300;
inline constexpr Tag kTagCount = 400;
inline constexpr Tag kTagCombine = 500;

// control-channel tags (ulfm)
inline constexpr Tag kTagRevoke = 1;
inline constexpr Tag kTagAgreeBase = 1000;
inline constexpr Tag kTagShrinkBase = 10000;

// user collectives on the data channel
inline constexpr Tag kCollTagBase = Tag(1) << 40;
inline constexpr Tag kSlotFoldPre = 90;
inline constexpr Tag kSlotFoldPost = 91;

// control-channel message kinds
inline constexpr std::uint8_t kCtrlRevoke = 1;
inline constexpr std::uint8_t kCtrlAgree = 2;
inline constexpr std::uint8_t kCtrlShrink = 3;

// code sent by an unwinding scope exit; never reported (the corruption vote
// short-circuits resolution)
inline constexpr std::uint64_t kUnwindCode = 1;

} // namespace errprop::detail

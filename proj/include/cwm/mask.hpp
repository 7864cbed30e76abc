#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cwm {

// A contiguous range of active output channels out of `total`. Scattered
// masks are unrepresentable by construction; kernel slicing stays a
// contiguous copy.
struct ChannelMask {
    int start = 0;
    int end = 0;
    int total = 0;

    ChannelMask() = default;
    ChannelMask(int start, int end, int total);

    int count() const { return end - start; }
    bool contains(int c) const { return c >= start && c < end; }
    bool full() const { return start == 0 && end == total; }
};

// A pre-defined finite cycle of masks, applied sequentially from step 1
// (step 0 is the unmasked full pass and is owned by the streaming layer).
// All masks activate the same number of channels and their union covers
// every channel.
struct MaskSchedule {
    int total = 0;
    std::vector<ChannelMask> masks;
    std::optional<double> rho;  // recorded for bi-step schedules

    MaskSchedule() = default;
    MaskSchedule(int total, std::vector<ChannelMask> masks, std::optional<double> rho);

    int active_count() const { return masks.front().count(); }
    // Channels always refreshed by two consecutive masks of a bi-step
    // schedule; 2*count - total.
    int overlap() const { return 2 * active_count() - total; }
};

// Two masks: [0, count) and [total - count, total), alternating every
// step. count = ceil((1 + rho)/2 * C); the middle 2*count - C channels
// are active in both masks. rho = 0 gives two half-full masks, rho = 1
// two full ones.
MaskSchedule bistep_generator(int channels, double rho);

// n_masks contiguous windows of `active_count` channels with seeded
// uniform start positions. Start draws are retried as a whole until the
// union covers every channel (bounded retries).
MaskSchedule random_contiguous_generator(int channels, int active_count, int n_masks,
                                         uint64_t seed);

// Mask for time-step t >= 1: masks[(t - 1) mod n].
const ChannelMask& mask_for_step(const MaskSchedule& schedule, int64_t step);

// Fraction of output channels computed per masked step: count / C.
double flop_fraction(const MaskSchedule& schedule);

// One line per step, active channels filled in: "t=1 |####....|".
std::string schedule_diagram(const MaskSchedule& schedule, int steps);

}  // namespace cwm

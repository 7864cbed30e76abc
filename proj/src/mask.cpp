#include "cwm/mask.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cwm/rng.hpp"

namespace cwm {

ChannelMask::ChannelMask(int start_, int end_, int total_)
    : start(start_), end(end_), total(total_) {
    if (!(0 <= start && start < end && end <= total))
        throw std::invalid_argument("mask: need 0 <= start < end <= total, got [" +
                                    std::to_string(start) + "," + std::to_string(end) + ") of " +
                                    std::to_string(total));
}

MaskSchedule::MaskSchedule(int total_, std::vector<ChannelMask> masks_, std::optional<double> rho_)
    : total(total_), masks(std::move(masks_)), rho(rho_) {
    if (masks.empty()) throw std::invalid_argument("mask schedule: no masks");
    const int count = masks.front().count();
    std::vector<bool> covered(static_cast<size_t>(total), false);
    for (const ChannelMask& m : masks) {
        if (m.total != total) throw std::invalid_argument("mask schedule: inconsistent channel totals");
        if (m.count() != count)
            throw std::invalid_argument("mask schedule: masks must activate the same number of channels");
        for (int c = m.start; c < m.end; ++c) covered[static_cast<size_t>(c)] = true;
    }
    if (!std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }))
        throw std::invalid_argument("mask schedule: union of masks does not cover every channel");
}

MaskSchedule bistep_generator(int channels, double rho) {
    if (channels < 2) throw std::invalid_argument("bistep_generator: need at least 2 channels");
    if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("bistep_generator: rho must be in [0,1]");
    // ceil with a tiny slack so exact products like 0.6 * 10 do not round up twice
    int count = static_cast<int>(std::ceil(0.5 * (1.0 + rho) * channels - 1e-9));
    count = std::clamp(count, (channels + 1) / 2, channels);
    std::vector<ChannelMask> masks{ChannelMask(0, count, channels),
                                   ChannelMask(channels - count, channels, channels)};
    return MaskSchedule(channels, std::move(masks), rho);
}

MaskSchedule random_contiguous_generator(int channels, int active_count, int n_masks,
                                         uint64_t seed) {
    if (channels < 1) throw std::invalid_argument("random_contiguous_generator: need channels >= 1");
    if (active_count < 1 || active_count > channels)
        throw std::invalid_argument("random_contiguous_generator: active count " +
                                    std::to_string(active_count) + " out of [1, " +
                                    std::to_string(channels) + "]");
    if (n_masks < 1) throw std::invalid_argument("random_contiguous_generator: need n_masks >= 1");
    if (active_count < channels && n_masks == 1)
        throw std::invalid_argument("random_contiguous_generator: one partial mask cannot cover all channels");

    SplitMix64 rng(seed);
    const int max_start = channels - active_count;
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::vector<ChannelMask> masks;
        masks.reserve(static_cast<size_t>(n_masks));
        std::vector<bool> covered(static_cast<size_t>(channels), false);
        for (int i = 0; i < n_masks; ++i) {
            int s = max_start == 0 ? 0 : static_cast<int>(rng.next_below(static_cast<uint64_t>(max_start) + 1));
            masks.emplace_back(s, s + active_count, channels);
            for (int c = s; c < s + active_count; ++c) covered[static_cast<size_t>(c)] = true;
        }
        if (std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }))
            return MaskSchedule(channels, std::move(masks), std::nullopt);
    }
    throw std::runtime_error("random_contiguous_generator: no covering schedule found");
}

const ChannelMask& mask_for_step(const MaskSchedule& schedule, int64_t step) {
    if (step < 1) throw std::invalid_argument("mask_for_step: steps start at 1 (step 0 is the full pass)");
    return schedule.masks[static_cast<size_t>((step - 1) % static_cast<int64_t>(schedule.masks.size()))];
}

double flop_fraction(const MaskSchedule& schedule) {
    return static_cast<double>(schedule.active_count()) / static_cast<double>(schedule.total);
}

std::string schedule_diagram(const MaskSchedule& schedule, int steps) {
    std::ostringstream os;
    for (int64_t t = 1; t <= steps; ++t) {
        const ChannelMask& m = mask_for_step(schedule, t);
        os << "t=" << t << " |";
        for (int c = 0; c < schedule.total; ++c) os << (m.contains(c) ? '#' : '.');
        os << "|\n";
    }
    return os.str();
}

}  // namespace cwm

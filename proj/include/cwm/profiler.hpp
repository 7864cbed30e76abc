#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cwm/net.hpp"

namespace cwm {

// Exact integer operation counts. Convention (stated in every report):
// 1 MAC = 2 FLOPs, plus one FLOP per output element when a bias is
// added. Only convolutions are counted.
inline constexpr const char* kFlopConvention =
    "conv MACs = Ho*Wo*Cout_active*Cin*kh*kw; FLOPs = 2*MACs + bias adds (one per output element)";

struct LayerFlops {
    std::string name;
    bool streamed = false;  // masked at steady state
    int active = 0;         // output channels computed per masked step
    int total = 0;
    int64_t macs_full = 0;
    int64_t flops_full = 0;
    int64_t macs_step = 0;  // per steady-state step
    int64_t flops_step = 0;
};

struct FlopReport {
    std::string convention = kFlopConvention;
    int height = 0, width = 0;
    std::vector<LayerFlops> layers;
    int64_t macs_stateless = 0;
    int64_t flops_stateless = 0;
    int64_t macs_cwm_step = 0;
    int64_t flops_cwm_step = 0;

    double step_ratio() const {
        return static_cast<double>(flops_cwm_step) / static_cast<double>(flops_stateless);
    }
};

// Counts for one frame at the given input size: the full stateless pass
// and the per-step cost of the streamed network (masked counts for
// streamed convs, full counts elsewhere). Step 0 is a full pass and is
// not what this reports.
FlopReport count_flops(const NetworkSpec& spec, int height, int width);

void write_flop_report_csv(const FlopReport& r, const std::string& path);
std::string flop_report_json(const FlopReport& r);

// Latency microbenchmarks: monotonic clock, single compute thread,
// median over interleaved rounds.
struct BenchParams {
    int warmup = 5;
    int iterations = 50;

    void validate() const;
};

struct LatencyStats {
    int warmup = 0;
    int iterations = 0;
    double median_us = 0.0;
    double p10_us = 0.0;
    double p90_us = 0.0;
    double mean_us = 0.0;
};

LatencyStats summarize_samples(std::vector<double> samples_us, int warmup);

std::string bench_environment();

// Times one conv layer three ways at equal arithmetic: (a) the full
// convolution, (b) a contiguous-masked step (kernel slice, partial conv,
// block interlace into a copy of the cache), (c) a scattered-masked step
// with the same active count (per-row kernel gather, partial conv,
// per-plane scatter). Rounds are interleaved a/b/c to decorrelate drift.
struct LayerBenchSetup {
    int c_in = 16;
    int c_out = 64;
    int height = 32;
    int width = 32;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    int active = 32;
    uint64_t seed = 1;
};

struct LayerBenchReport {
    std::string environment;
    LayerBenchSetup setup;
    LatencyStats full;
    LatencyStats contiguous;
    LatencyStats scattered;
};

LayerBenchReport bench_layer(const LayerBenchSetup& setup, const BenchParams& params);

// Per-frame latency of the streamed network against the stateless run of
// the same weights. Step 0 (the full pass) is excluded from the streamed
// timings.
struct NetworkBenchReport {
    std::string environment;
    int height = 0, width = 0;
    LatencyStats stateless;
    LatencyStats cwm;
    double flop_step_ratio = 0.0;
};

NetworkBenchReport bench_network(const Network<float>& net, int height, int width,
                                 const BenchParams& params, uint64_t seed = 1);

std::string layer_bench_json(const LayerBenchReport& r);
std::string network_bench_json(const NetworkBenchReport& r);

}  // namespace cwm

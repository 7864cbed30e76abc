#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cwm/profiler.hpp"

using namespace cwm;

namespace {

// one conv wrapped as a network so the counter can walk it
NetworkSpec single_conv_spec(int c_in, int c_out, int k, int pad, bool streamed, double rho) {
    NetworkSpec spec;
    spec.name = "one";
    spec.in_channels = c_in;
    spec.num_classes = c_out;
    spec.rho = rho;
    LayerSpec l;
    l.name = "only";
    l.kind = LayerKind::Conv;
    l.in_channels = c_in;
    l.out_channels = c_out;
    l.kernel = k;
    l.padding = pad;
    l.cwm_eligible = streamed;
    spec.layers.push_back(l);
    return spec;
}

}  // namespace

TEST_CASE("hand-checked conv counts") {
    // 3x3 conv, 16 -> 32 channels, 32x32 output, bias
    NetworkSpec spec = single_conv_spec(16, 32, 3, 1, false, 0.0);
    FlopReport r = count_flops(spec, 32, 32);
    REQUIRE(r.layers.size() == 1);
    CHECK(r.layers[0].macs_full == 4718592);
    CHECK(r.layers[0].flops_full == 2 * 4718592 + 32 * 32 * 32);
    CHECK(r.macs_stateless == r.macs_cwm_step);  // nothing streamed
}

TEST_CASE("half-active schedule halves the per-step count exactly") {
    NetworkSpec spec = single_conv_spec(16, 32, 3, 1, true, 0.0);
    FlopReport r = count_flops(spec, 32, 32);
    CHECK(r.layers[0].active == 16);
    CHECK(r.layers[0].macs_step * 2 == r.layers[0].macs_full);
    CHECK(r.layers[0].macs_step == 2359296);
}

TEST_CASE("per-layer step ratio equals the schedule's active fraction") {
    for (double rho : {0.0, 0.1, 0.25, 0.5, 0.9, 1.0}) {
        CAPTURE(rho);
        NetworkSpec spec = toynet_spec(5, 16, 1.0, rho);
        FlopReport r = count_flops(spec, 64, 64);
        for (const LayerFlops& l : r.layers) {
            if (!l.streamed) {
                CHECK(l.macs_step == l.macs_full);
                continue;
            }
            const MaskSchedule sched = bistep_generator(l.total, rho);
            CHECK(l.active == sched.active_count());
            // exact proportionality, no rounding: macs scale by active/total
            CHECK(l.macs_step * l.total == l.macs_full * l.active);
            CHECK(flop_fraction(sched) ==
                  static_cast<double>(l.active) / static_cast<double>(l.total));
        }
        CHECK(r.flops_cwm_step <= r.flops_stateless);
        if (rho == 1.0) CHECK(r.flops_cwm_step == r.flops_stateless);
        if (rho < 1.0) CHECK(r.flops_cwm_step < r.flops_stateless);
    }
}

TEST_CASE("counts are additive over layers") {
    NetworkSpec spec = toynet_spec(5, 16, 1.0, 0.25);
    FlopReport r = count_flops(spec, 64, 64);
    int64_t sum_full = 0, sum_step = 0;
    for (const LayerFlops& l : r.layers) {
        sum_full += l.flops_full;
        sum_step += l.flops_step;
    }
    CHECK(sum_full == r.flops_stateless);
    CHECK(sum_step == r.flops_cwm_step);
}

TEST_CASE("both bi-step phases cost the same") {
    // equal mask counts make the per-step cost phase-independent
    for (double rho : {0.0, 0.25, 0.3}) {
        MaskSchedule s = bistep_generator(48, rho);
        CHECK(mask_for_step(s, 1).count() == mask_for_step(s, 2).count());
    }
}

TEST_CASE("slimming strictly reduces the stateless count") {
    int64_t prev = 0;
    for (double a : {0.5, 0.65, 0.8, 1.0}) {
        FlopReport r = count_flops(toynet_spec(5, 16, a, 0.25), 64, 64);
        CHECK(r.flops_stateless > prev);
        prev = r.flops_stateless;
    }
}

TEST_CASE("bench parameter floors") {
    BenchParams too_few_warmups{4, 50};
    BenchParams too_few_iters{5, 29};
    BenchParams floor_ok{5, 30};
    CHECK_THROWS_AS(too_few_warmups.validate(), std::invalid_argument);
    CHECK_THROWS_AS(too_few_iters.validate(), std::invalid_argument);
    floor_ok.validate();
}

TEST_CASE("sample summaries") {
    std::vector<double> v;
    for (int i = 1; i <= 101; ++i) v.push_back(static_cast<double>(i));
    LatencyStats s = summarize_samples(v, 5);
    CHECK(s.median_us == 51.0);
    CHECK(s.p10_us == doctest::Approx(11.0));
    CHECK(s.p90_us == doctest::Approx(91.0));
    CHECK(s.iterations == 101);
    CHECK_THROWS_AS(summarize_samples({}, 5), std::invalid_argument);
    CHECK_THROWS_AS(summarize_samples({0.0, 0.0, 0.0}, 5), std::runtime_error);
}

TEST_CASE("flop report json carries the convention") {
    FlopReport r = count_flops(toynet_spec(5, 16, 1.0, 0.0), 32, 32);
    const std::string js = flop_report_json(r);
    CHECK(js.find("bias adds") != std::string::npos);
    CHECK(js.find("macs_stateless") != std::string::npos);
}

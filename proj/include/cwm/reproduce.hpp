#pragma once

#include <string>
#include <vector>

#include "cwm/metrics.hpp"
#include "cwm/net.hpp"
#include "cwm/profiler.hpp"
#include "cwm/synth.hpp"
#include "cwm/train.hpp"

namespace cwm {

// The end-to-end experiment: train a stateless baseline and two streamed
// variants (0-BG, 0.25-BG) across a width-multiplier sweep, evaluate each
// in steady state, profile operation counts and per-frame latency, and
// emit one CSV row per (model, alpha).
struct ReproduceConfig {
    std::string out_dir = "out/reproduce";
    SynthConfig data;
    int base_width = 16;
    std::vector<double> alphas{0.5, 0.65, 0.8, 1.0};
    std::vector<double> rhos{0.0, 0.25};  // streamed families; the baseline is separate
    TrainConfig train;
    TrainConfig baseline_train;  // stateless: j = 1, single sequence
    AbtConfig abt{19, true};
    BenchParams bench;
    uint64_t seed = 2024;
    bool skip_bench = false;  // latency columns become 0 (deterministic reruns)
};

// The frozen quick preset: small frames and a small width so the whole
// sweep stays in a laptop-CPU budget.
ReproduceConfig quick_reproduce_config(const std::string& out_dir);

// Full-size preset; several times slower than quick.
ReproduceConfig full_reproduce_config(const std::string& out_dir);

struct ReproduceRow {
    std::string model;  // "baseline", "0-BG", "0.25-BG"
    double alpha = 1.0;
    double rho = 1.0;
    int64_t per_step_flops = 0;
    int64_t params = 0;
    double median_latency_us = 0.0;
    double miou_abt = 0.0;
};

struct ReproduceResult {
    std::vector<ReproduceRow> rows;
    std::string csv_path;
    double wall_seconds = 0.0;
};

ReproduceResult run_reproduce(const ReproduceConfig& cfg);

void write_reproduce_csv(const std::vector<ReproduceRow>& rows, const std::string& path);
std::string reproduce_config_json(const ReproduceConfig& cfg);

}  // namespace cwm

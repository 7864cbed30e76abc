#include "cwm/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "cwm/rng.hpp"
#include "json.hpp"

using nlohmann::json;

namespace cwm {

namespace {

int64_t conv_out_dim_checked(int in, int k, int stride, int padding, const std::string& layer) {
    int span = in + 2 * padding - k;
    if (span < 0 || span % stride != 0)
        throw std::invalid_argument("count_flops: layer '" + layer + "' has non-integral output size");
    return span / stride + 1;
}

}  // namespace

FlopReport count_flops(const NetworkSpec& spec, int height, int width) {
    spec.validate();
    FlopReport r;
    r.height = height;
    r.width = width;

    std::vector<int> inputs = spec.resolve_inputs();
    struct Dims {
        int64_t h, w;
    };
    std::vector<Dims> dims(spec.layers.size());
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        Dims in = inputs[i] < 0 ? Dims{height, width} : dims[static_cast<size_t>(inputs[i])];
        switch (l.kind) {
            case LayerKind::Conv: {
                LayerFlops lf;
                lf.name = l.name;
                lf.streamed = l.cwm_eligible;
                lf.total = l.out_channels;
                const int64_t ho = conv_out_dim_checked(static_cast<int>(in.h), l.kernel, l.stride,
                                                        l.padding, l.name);
                const int64_t wo = conv_out_dim_checked(static_cast<int>(in.w), l.kernel, l.stride,
                                                        l.padding, l.name);
                const int64_t pix = ho * wo;
                const int64_t per_channel_macs =
                    pix * static_cast<int64_t>(l.in_channels) * l.kernel * l.kernel;
                lf.macs_full = per_channel_macs * l.out_channels;
                lf.flops_full = 2 * lf.macs_full + pix * l.out_channels;
                lf.active = l.cwm_eligible ? bistep_generator(l.out_channels, spec.rho).active_count()
                                           : l.out_channels;
                lf.macs_step = per_channel_macs * lf.active;
                lf.flops_step = 2 * lf.macs_step + pix * lf.active;
                r.layers.push_back(lf);
                r.macs_stateless += lf.macs_full;
                r.flops_stateless += lf.flops_full;
                r.macs_cwm_step += lf.macs_step;
                r.flops_cwm_step += lf.flops_step;
                dims[i] = {ho, wo};
                break;
            }
            case LayerKind::MaxPool:
                dims[i] = {in.h / 2, in.w / 2};
                break;
            case LayerKind::Upsample:
                dims[i] = {in.h * 2, in.w * 2};
                break;
            default:
                dims[i] = in;
                break;
        }
    }
    if (r.macs_cwm_step > r.macs_stateless)
        throw std::logic_error("count_flops: per-step count exceeds the stateless count");
    return r;
}

void write_flop_report_csv(const FlopReport& r, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "# " << r.convention << "\n";
    os << "layer,streamed,active,total,macs_full,flops_full,macs_step,flops_step\n";
    for (const LayerFlops& l : r.layers)
        os << l.name << "," << (l.streamed ? 1 : 0) << "," << l.active << "," << l.total << ","
           << l.macs_full << "," << l.flops_full << "," << l.macs_step << "," << l.flops_step << "\n";
    os << "total,," << "," << "," << r.macs_stateless << "," << r.flops_stateless << ","
       << r.macs_cwm_step << "," << r.flops_cwm_step << "\n";
}

std::string flop_report_json(const FlopReport& r) {
    json j;
    j["convention"] = r.convention;
    j["input"] = {{"height", r.height}, {"width", r.width}};
    j["layers"] = json::array();
    for (const LayerFlops& l : r.layers)
        j["layers"].push_back({{"name", l.name},
                               {"streamed", l.streamed},
                               {"active", l.active},
                               {"total", l.total},
                               {"macs_full", l.macs_full},
                               {"flops_full", l.flops_full},
                               {"macs_step", l.macs_step},
                               {"flops_step", l.flops_step}});
    j["macs_stateless"] = r.macs_stateless;
    j["flops_stateless"] = r.flops_stateless;
    j["macs_cwm_step"] = r.macs_cwm_step;
    j["flops_cwm_step"] = r.flops_cwm_step;
    j["step_ratio"] = r.step_ratio();
    return j.dump(2);
}

void BenchParams::validate() const {
    if (warmup < 5) throw std::invalid_argument("bench: need at least 5 warmup runs");
    if (iterations < 30) throw std::invalid_argument("bench: need at least 30 iterations");
}

LatencyStats summarize_samples(std::vector<double> samples_us, int warmup) {
    if (samples_us.empty()) throw std::invalid_argument("bench: no samples");
    LatencyStats s;
    s.warmup = warmup;
    s.iterations = static_cast<int>(samples_us.size());
    std::sort(samples_us.begin(), samples_us.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(samples_us.size() - 1);
        const size_t lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, samples_us.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return samples_us[lo] * (1.0 - frac) + samples_us[hi] * frac;
    };
    s.median_us = quantile(0.5);
    s.p10_us = quantile(0.1);
    s.p90_us = quantile(0.9);
    double sum = 0.0;
    for (double v : samples_us) sum += v;
    s.mean_us = sum / static_cast<double>(samples_us.size());
    if (s.median_us <= 0.0) throw std::runtime_error("bench: degenerate timing (zero-duration clock)");
    return s;
}

std::string bench_environment() {
    std::string model = "unknown cpu";
    std::ifstream is("/proc/cpuinfo");
    std::string line;
    while (std::getline(is, line)) {
        if (line.rfind("model name", 0) == 0) {
            auto pos = line.find(':');
            if (pos != std::string::npos) model = line.substr(pos + 2);
            break;
        }
    }
    return model + "; threads=1";
}

namespace {

using Clock = std::chrono::steady_clock;

double time_us(const std::function<void()>& fn) {
    const auto t0 = Clock::now();
    fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::micro>(t1 - t0).count();
}

Tensor<float> random_tensor(std::vector<int> shape, SplitMix64& rng) {
    Tensor<float> t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(rng.next_unit()) - 0.5f;
    return t;
}

}  // namespace

LayerBenchReport bench_layer(const LayerBenchSetup& setup, const BenchParams& params) {
    params.validate();
    if (setup.active < 1 || setup.active > setup.c_out)
        throw std::invalid_argument("bench_layer: active count out of range");

    SplitMix64 rng(setup.seed);
    const Tensor<float> input = random_tensor({1, setup.c_in, setup.height, setup.width}, rng);
    const Tensor<float> kernel =
        random_tensor({setup.c_out, setup.c_in, setup.kernel, setup.kernel}, rng);
    const Tensor<float> bias = random_tensor({setup.c_out}, rng);

    Tensor<float> out_full = conv2d(input, kernel, &bias, setup.stride, setup.padding);
    const Tensor<float> cache = out_full;  // stands in for the previous step's output
    const int ho = out_full.dim(2), wo = out_full.dim(3);
    const int64_t plane = static_cast<int64_t>(ho) * wo;
    const int64_t krow = static_cast<int64_t>(setup.c_in) * setup.kernel * setup.kernel;

    const int active = setup.active;
    // scattered pattern: `active` channels spread evenly over [0, c_out)
    std::vector<int> scattered_rows(static_cast<size_t>(active));
    for (int i = 0; i < active; ++i)
        scattered_rows[static_cast<size_t>(i)] =
            static_cast<int>(static_cast<int64_t>(i) * setup.c_out / active);

    Tensor<float> k_slice({active, setup.c_in, setup.kernel, setup.kernel});
    Tensor<float> b_slice({active});
    Tensor<float> partial({1, active, ho, wo});
    Tensor<float> out({1, setup.c_out, ho, wo});

    auto run_full = [&] { conv2d_into(input, kernel, &bias, setup.stride, setup.padding, out_full); };

    auto run_contiguous = [&] {
        // gather: one block copy
        std::copy(kernel.data(), kernel.data() + static_cast<int64_t>(active) * krow, k_slice.data());
        std::copy(bias.data(), bias.data() + active, b_slice.data());
        conv2d_into(input, k_slice, &b_slice, setup.stride, setup.padding, partial);
        // interlace: cache copy, then one block write
        std::copy(cache.data(), cache.data() + cache.size(), out.data());
        std::copy(partial.data(), partial.data() + partial.size(), out.data());
    };

    auto run_scattered = [&] {
        // gather: one copy per kernel row
        for (int i = 0; i < active; ++i)
            std::copy(kernel.data() + scattered_rows[static_cast<size_t>(i)] * krow,
                      kernel.data() + (scattered_rows[static_cast<size_t>(i)] + 1) * krow,
                      k_slice.data() + static_cast<int64_t>(i) * krow);
        for (int i = 0; i < active; ++i)
            b_slice[i] = bias[scattered_rows[static_cast<size_t>(i)]];
        conv2d_into(input, k_slice, &b_slice, setup.stride, setup.padding, partial);
        // interlace: cache copy, then one write per output plane
        std::copy(cache.data(), cache.data() + cache.size(), out.data());
        for (int i = 0; i < active; ++i)
            std::copy(partial.data() + static_cast<int64_t>(i) * plane,
                      partial.data() + static_cast<int64_t>(i + 1) * plane,
                      out.data() + static_cast<int64_t>(scattered_rows[static_cast<size_t>(i)]) * plane);
    };

    for (int i = 0; i < params.warmup; ++i) {
        run_full();
        run_contiguous();
        run_scattered();
    }

    std::vector<double> t_full, t_contig, t_scat;
    t_full.reserve(static_cast<size_t>(params.iterations));
    t_contig.reserve(static_cast<size_t>(params.iterations));
    t_scat.reserve(static_cast<size_t>(params.iterations));
    for (int i = 0; i < params.iterations; ++i) {
        t_full.push_back(time_us(run_full));
        t_contig.push_back(time_us(run_contiguous));
        t_scat.push_back(time_us(run_scattered));
    }

    LayerBenchReport r;
    r.environment = bench_environment();
    r.setup = setup;
    r.full = summarize_samples(std::move(t_full), params.warmup);
    r.contiguous = summarize_samples(std::move(t_contig), params.warmup);
    r.scattered = summarize_samples(std::move(t_scat), params.warmup);
    return r;
}

NetworkBenchReport bench_network(const Network<float>& net, int height, int width,
                                 const BenchParams& params, uint64_t seed) {
    params.validate();
    SplitMix64 rng(seed);
    // a small pool of frames cycled through both runs
    std::vector<Tensor<float>> frames;
    for (int i = 0; i < 4; ++i)
        frames.push_back(random_tensor({1, net.spec.in_channels, height, width}, rng));

    NetworkBenchReport r;
    r.environment = bench_environment();
    r.height = height;
    r.width = width;
    r.flop_step_ratio = count_flops(net.spec, height, width).step_ratio();

    StreamSession<float> session(net);
    // warmup covers the step-0 full pass, which is excluded from timing
    for (int i = 0; i <= params.warmup; ++i)
        session.forward(frames[static_cast<size_t>(i) % frames.size()]);
    std::vector<double> t_cwm;
    t_cwm.reserve(static_cast<size_t>(params.iterations));
    for (int i = 0; i < params.iterations; ++i) {
        const Tensor<float>& f = frames[static_cast<size_t>(i) % frames.size()];
        t_cwm.push_back(time_us([&] { session.forward(f); }));
    }

    for (int i = 0; i < params.warmup; ++i)
        stateless_forward(net, frames[static_cast<size_t>(i) % frames.size()]);
    std::vector<double> t_plain;
    t_plain.reserve(static_cast<size_t>(params.iterations));
    for (int i = 0; i < params.iterations; ++i) {
        const Tensor<float>& f = frames[static_cast<size_t>(i) % frames.size()];
        t_plain.push_back(time_us([&] { stateless_forward(net, f); }));
    }

    r.cwm = summarize_samples(std::move(t_cwm), params.warmup);
    r.stateless = summarize_samples(std::move(t_plain), params.warmup);
    return r;
}

namespace {

json stats_json(const LatencyStats& s) {
    return json{{"warmup", s.warmup},
                {"iterations", s.iterations},
                {"median_us", s.median_us},
                {"p10_us", s.p10_us},
                {"p90_us", s.p90_us},
                {"mean_us", s.mean_us}};
}

}  // namespace

std::string layer_bench_json(const LayerBenchReport& r) {
    json j;
    j["environment"] = r.environment;
    j["setup"] = {{"c_in", r.setup.c_in},     {"c_out", r.setup.c_out},
                  {"height", r.setup.height}, {"width", r.setup.width},
                  {"kernel", r.setup.kernel}, {"stride", r.setup.stride},
                  {"padding", r.setup.padding}, {"active", r.setup.active}};
    j["full"] = stats_json(r.full);
    j["contiguous"] = stats_json(r.contiguous);
    j["scattered"] = stats_json(r.scattered);
    return j.dump(2);
}

std::string network_bench_json(const NetworkBenchReport& r) {
    json j;
    j["environment"] = r.environment;
    j["input"] = {{"height", r.height}, {"width", r.width}};
    j["stateless"] = stats_json(r.stateless);
    j["cwm"] = stats_json(r.cwm);
    j["flop_step_ratio"] = r.flop_step_ratio;
    return j.dump(2);
}

}  // namespace cwm

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "cwm/train.hpp"
#include "oracle.hpp"

using namespace cwm;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "cwm_train_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

// stem -> relu -> one streamed conv -> relu -> head; ~200 parameters
NetworkSpec micro_spec(double rho) {
    NetworkSpec spec;
    spec.name = "micro";
    spec.in_channels = 3;
    spec.num_classes = 3;
    spec.base_width = 4;
    spec.rho = rho;
    auto conv = [&](const std::string& name, int in, int out, int k, int pad, bool cwm) {
        LayerSpec l;
        l.name = name;
        l.kind = LayerKind::Conv;
        l.in_channels = in;
        l.out_channels = out;
        l.kernel = k;
        l.padding = pad;
        l.cwm_eligible = cwm;
        spec.layers.push_back(l);
    };
    auto relu_l = [&](const std::string& name) {
        LayerSpec l;
        l.name = name;
        l.kind = LayerKind::Relu;
        spec.layers.push_back(l);
    };
    conv("stem", 3, 4, 3, 1, false);
    relu_l("r1");
    conv("mid", 4, 4, 3, 1, true);
    relu_l("r2");
    conv("head", 4, 3, 1, 0, false);
    spec.validate();
    return spec;
}

template <typename T>
std::vector<Tensor<T>> random_frames(int n, int h, int w, SplitMix64& rng) {
    std::vector<Tensor<T>> out;
    for (int i = 0; i < n; ++i) out.push_back(oracle::random_tensor<T>({1, 3, h, w}, rng, 0.5));
    return out;
}

LabelMap random_labels(int h, int w, int classes, SplitMix64& rng) {
    LabelMap m(h, w);
    for (int64_t i = 0; i < m.pixels(); ++i)
        m.ids[static_cast<size_t>(i)] = static_cast<int32_t>(rng.next_below(classes));
    return m;
}

template <typename T>
bool params_equal(const Network<T>& a, const Network<T>& b) {
    for (const auto& [name, p] : a.params)
        if (!p.kernel.bit_equal(b.params.at(name).kernel) ||
            !p.bias.bit_equal(b.params.at(name).bias))
            return false;
    return true;
}

}  // namespace

TEST_CASE("sgd update arithmetic") {
    NetworkSpec spec = micro_spec(1.0);
    Network<float> net = build_network<float>(spec, 1);
    const float w0 = net.params.at("stem").kernel[0];

    ParamGrads<float> g;
    for (const auto& [name, p] : net.params)
        g.grads.emplace(name, ConvParams<float>{Tensor<float>(p.kernel.shape()),
                                                Tensor<float>(p.bias.shape())});
    g.grads.at("stem").kernel[0] = 2.0f;

    SgdOptimizer<float> opt(SgdConfig{0.1, 0.9, 0.0});
    opt.step(net, g);
    CHECK(net.params.at("stem").kernel[0] == doctest::Approx(w0 - 0.1f * 2.0f));
    opt.step(net, g);  // velocity: 0.9*2 + 2 = 3.8
    CHECK(net.params.at("stem").kernel[0] == doctest::Approx(w0 - 0.2f - 0.1f * 3.8f));
    CHECK(opt.steps() == 2);
}

TEST_CASE("decay is decoupled and touches every parameter") {
    NetworkSpec spec = micro_spec(0.0);
    Network<float> net = build_network<float>(spec, 2);
    const float w0 = net.params.at("mid").kernel[0];
    ParamGrads<float> g;
    for (const auto& [name, p] : net.params)
        g.grads.emplace(name, ConvParams<float>{Tensor<float>(p.kernel.shape()),
                                                Tensor<float>(p.bias.shape())});
    SgdOptimizer<float> opt(SgdConfig{0.1, 0.9, 0.5});
    opt.step(net, g);  // zero gradient: only decay acts
    CHECK(net.params.at("mid").kernel[0] == doctest::Approx(w0 * (1.0f - 0.1f * 0.5f)));
}

TEST_CASE("single-frame training of a full-mask net equals plain training") {
    SplitMix64 rng(3);
    NetworkSpec streamed = micro_spec(1.0);
    NetworkSpec plain = streamed;
    for (LayerSpec& l : plain.layers) l.cwm_eligible = false;
    Network<float> a = build_network<float>(streamed, 7);
    Network<float> b = build_network<float>(plain, 7);
    REQUIRE(params_equal(a, b));

    std::vector<Tensor<float>> frame = random_frames<float>(1, 8, 8, rng);
    LabelMap target = random_labels(8, 8, 3, rng);
    SgdOptimizer<float> oa(SgdConfig{});
    SgdOptimizer<float> ob(SgdConfig{});
    double la = train_sequence_step(a, oa, std::span<const Tensor<float>>(frame), target);
    double lb = train_sequence_step(b, ob, std::span<const Tensor<float>>(frame), target);
    CHECK(la == lb);
    CHECK(params_equal(a, b));
}

TEST_CASE("multi-offset training: update count and exact offsets") {
    SplitMix64 rng(4);
    const int j = 7;
    std::vector<Tensor<float>> window = random_frames<float>(j, 8, 8, rng);
    LabelMap target = random_labels(8, 8, 3, rng);

    for (int k = 1; k <= 4; ++k) {
        CAPTURE(k);
        Network<float> a = build_network<float>(micro_spec(0.25), 9);
        Network<float> b = build_network<float>(micro_spec(0.25), 9);
        SgdOptimizer<float> oa(SgdConfig{});
        SgdOptimizer<float> ob(SgdConfig{});

        std::vector<double> losses =
            train_bisequence_step(a, oa, std::span<const Tensor<float>>(window), target, k);
        CHECK(static_cast<int>(losses.size()) == k);
        CHECK(oa.steps() == k);

        // the s-th update must equal a manual pass over the window suffix
        // starting at offset j - s
        for (int s = 0; s < k; ++s) {
            std::span<const Tensor<float>> sub(window.data() + s, static_cast<size_t>(j - s));
            double manual = train_sequence_step(b, ob, sub, target);
            CHECK(manual == losses[static_cast<size_t>(s)]);
        }
        CHECK(params_equal(a, b));
    }

    Network<float> c = build_network<float>(micro_spec(0.25), 9);
    SgdOptimizer<float> oc(SgdConfig{});
    std::vector<Tensor<float>> tiny = random_frames<float>(2, 8, 8, rng);
    CHECK_THROWS_AS(
        train_bisequence_step(c, oc, std::span<const Tensor<float>>(tiny), target, 3),
        std::invalid_argument);
}

TEST_CASE("rows outside the final mask move only under weight decay") {
    SplitMix64 rng(5);
    Network<float> net = build_network<float>(micro_spec(0.0), 11);
    std::vector<Tensor<float>> frames = random_frames<float>(2, 8, 8, rng);  // final step 1
    LabelMap target = random_labels(8, 8, 3, rng);

    const ChannelMask m = mask_for_step(net.schedules.at("mid"), 1);
    const int64_t row = 4 * 3 * 3;

    SUBCASE("no decay: bit-identical") {
        Tensor<float> before = net.params.at("mid").kernel;
        SgdOptimizer<float> opt(SgdConfig{0.05, 0.9, 0.0});
        train_sequence_step(net, opt, std::span<const Tensor<float>>(frames), target);
        const Tensor<float>& after = net.params.at("mid").kernel;
        for (int c = m.end; c < 4; ++c)
            for (int64_t i = 0; i < row; ++i) CHECK(after[c * row + i] == before[c * row + i]);
        // active rows did move
        bool moved = false;
        for (int64_t i = 0; i < m.count() * row; ++i)
            if (after[i] != before[i]) moved = true;
        CHECK(moved);
    }
    SUBCASE("with decay: scaled by exactly the decay factor") {
        Tensor<float> before = net.params.at("mid").kernel;
        SgdOptimizer<float> opt(SgdConfig{0.05, 0.9, 0.1});
        train_sequence_step(net, opt, std::span<const Tensor<float>>(frames), target);
        const Tensor<float>& after = net.params.at("mid").kernel;
        const float factor = 1.0f - 0.05f * 0.1f;
        for (int c = m.end; c < 4; ++c)
            for (int64_t i = 0; i < row; ++i)
                CHECK(after[c * row + i] == doctest::Approx(before[c * row + i] * factor));
    }
}

TEST_CASE("pipeline gradient matches finite differences in fp64") {
    SplitMix64 rng(6);
    Network<double> net = build_network<double>(micro_spec(0.25), 13);
    const int j = 3;
    std::vector<Tensor<double>> frames = random_frames<double>(j, 8, 8, rng);
    LabelMap target = random_labels(8, 8, 3, rng);

    // caches built once and then frozen: the saved outputs are constants
    // in the differentiated objective, matching the backward's rule
    StreamSession<double> base(net);
    for (int t = 0; t + 1 < j; ++t) base.forward(frames[static_cast<size_t>(t)]);

    auto loss = [&] {
        StreamSession<double> s = base;
        Tape<double> tape;
        Tensor<double> logits = s.forward_taped(frames.back(), tape);
        return softmax_ce_loss(logits, target).loss;
    };

    StreamSession<double> s = base;
    Tape<double> tape;
    Tensor<double> logits = s.forward_taped(frames.back(), tape);
    CeLossResult<double> ce = softmax_ce_loss(logits, target);
    ParamGrads<double> grads = backward(net, tape, ce.grad_logits);

    for (auto& [name, p] : net.params) {
        CAPTURE(name);
        CHECK(oracle::fd_check(p.kernel, grads.grads.at(name).kernel, loss) <= 1e-6);
        CHECK(oracle::fd_check(p.bias, grads.grads.at(name).bias, loss) <= 1e-6);
    }

    // inactive rows of the streamed conv carry exactly zero gradient
    const ChannelMask m = mask_for_step(net.schedules.at("mid"), tape.step);
    const Tensor<double>& gk = grads.grads.at("mid").kernel;
    const int64_t row = 4 * 3 * 3;
    for (int c = 0; c < 4; ++c)
        if (!m.contains(c))
            for (int64_t i = 0; i < row; ++i) CHECK(gk[c * row + i] == 0.0);
}

TEST_CASE("a small set can be overfit") {
    const std::string dir = tmp_dir("overfit");
    SynthConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.train_sequences = 10;
    cfg.val_sequences = 0;
    cfg.frames = 8;
    cfg.annotated_index = 4;
    cfg.seed = 21;
    Dataset data = generate_dataset(cfg, dir);

    for (double rho : {0.0, 1.0}) {
        CAPTURE(rho);
        Network<float> net = build_toynet(5, 8, 1.0, rho, 31);
        SgdOptimizer<float> opt(SgdConfig{0.05, 0.9, 1e-4});
        std::vector<double> losses;
        for (int step = 0; step < 50; ++step) {
            SequenceSample s = data.load_sequence(step % 10);
            std::vector<Tensor<float>> window;
            for (int t = s.annotated_index - 2; t < s.annotated_index; ++t)
                window.push_back(with_batch_dim(s.frames[static_cast<size_t>(t)]));
            losses.push_back(train_sequence_step(net, opt, std::span<const Tensor<float>>(window),
                                                 s.labels[static_cast<size_t>(s.annotated_index)]));
        }
        double head = 0.0, tail = 0.0;
        for (int i = 0; i < 5; ++i) {
            head += losses[static_cast<size_t>(i)];
            tail += losses[losses.size() - 1 - static_cast<size_t>(i)];
        }
        CHECK(tail < head);
    }
}

TEST_CASE("train_network is deterministic and reports finite losses") {
    const std::string dir = tmp_dir("loop");
    SynthConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.train_sequences = 4;
    cfg.val_sequences = 2;
    cfg.frames = 10;
    cfg.annotated_index = 7;
    cfg.seed = 23;
    Dataset data = generate_dataset(cfg, dir);

    TrainConfig tc;
    tc.j = 3;
    tc.sequences_per_sample = 2;
    tc.epochs = 2;
    tc.seed = 41;
    tc.eval_each_epoch = true;
    tc.abt = AbtConfig{5, true};

    Network<float> n1 = build_toynet(5, 8, 1.0, 0.25, 51);
    Network<float> n2 = build_toynet(5, 8, 1.0, 0.25, 51);
    TrainReport r1 = train_network(n1, data, tc);
    TrainReport r2 = train_network(n2, data, tc);
    REQUIRE(r1.epoch_loss.size() == 2);
    CHECK(r1.epoch_loss == r2.epoch_loss);
    CHECK(r1.epoch_miou == r2.epoch_miou);
    CHECK(r1.optimizer_steps == 2 * 4 * 2);
    CHECK(params_equal(n1, n2));

    CHECK_THROWS_AS([&] {
        TrainConfig bad = tc;
        bad.j = 9;  // only 7 frames precede the annotated one
        train_network(n1, data, bad);
    }(), std::invalid_argument);
}

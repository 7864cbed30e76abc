// Command-line front end: data generation, training, steady-state
// evaluation, profiling and mask inspection. Every run writes its fully
// resolved configuration next to its outputs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cwm/mask.hpp"
#include "cwm/metrics.hpp"
#include "cwm/net.hpp"
#include "cwm/profiler.hpp"
#include "cwm/reproduce.hpp"
#include "cwm/synth.hpp"
#include "cwm/train.hpp"
#include "cwm/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void apply_thread_cap() {
    // CWM_THREADS caps compute threads; all kernels here are
    // single-threaded, so only a cap of 1 is meaningful.
    const char* env = std::getenv("CWM_THREADS");
    if (env && std::string(env) != "1")
        std::cerr << "note: CWM_THREADS=" << env
                  << " requested, compute runs single-threaded in this build\n";
}

void write_text(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << text;
    if (text.empty() || text.back() != '\n') os << "\n";
}

json stamp(json j) {
    j["tool_version"] = cwm::kVersion;
    return j;
}

struct GenDataArgs {
    cwm::SynthConfig cfg;
    std::string out = "out/data";
};

int cmd_gen_data(const GenDataArgs& a) {
    a.cfg.validate();
    cwm::generate_dataset(a.cfg, a.out);
    write_text(a.out + "/run_config.json",
               stamp(json{{"command", "gen-data"},
                          {"out", a.out},
                          {"height", a.cfg.height},
                          {"width", a.cfg.width},
                          {"num_classes", a.cfg.num_classes},
                          {"min_shapes", a.cfg.min_shapes},
                          {"max_shapes", a.cfg.max_shapes},
                          {"max_speed", a.cfg.max_speed},
                          {"noise", a.cfg.noise},
                          {"frames", a.cfg.frames},
                          {"annotated_index", a.cfg.annotated_index},
                          {"train_sequences", a.cfg.train_sequences},
                          {"val_sequences", a.cfg.val_sequences},
                          {"seed", a.cfg.seed}})
                   .dump(2));
    std::cout << "wrote " << (a.cfg.train_sequences + a.cfg.val_sequences) << " sequences to "
              << a.out << "\n";
    return 0;
}

struct MasksArgs {
    int channels = 8;
    double rho = 0.25;
    bool random = false;
    int active = 0;
    int n_masks = 2;
    uint64_t seed = 1;
    int show_steps = 4;
};

int cmd_masks(const MasksArgs& a) {
    cwm::MaskSchedule s = a.random
                              ? cwm::random_contiguous_generator(a.channels, a.active, a.n_masks, a.seed)
                              : cwm::bistep_generator(a.channels, a.rho);
    json j;
    j["total"] = s.total;
    if (s.rho) j["rho"] = *s.rho;
    j["masks"] = json::array();
    for (const cwm::ChannelMask& m : s.masks) j["masks"].push_back({{"start", m.start}, {"end", m.end}});
    std::cout << j.dump(2) << "\n";
    std::cout << cwm::schedule_diagram(s, a.show_steps);
    return 0;
}

struct NetArgs {
    int num_classes = 5;
    int base_width = 16;
    double alpha = 1.0;
    double rho = 0.25;
    bool stateless = false;
    bool cwm_stem = false;
    bool cwm_skip = false;
    uint64_t seed = 1;
};

cwm::Network<float> build_from_args(const NetArgs& n) {
    cwm::ToynetOptions opts;
    opts.cwm_stem = n.cwm_stem;
    opts.cwm_skip = n.cwm_skip;
    cwm::NetworkSpec spec =
        cwm::toynet_spec(n.num_classes, n.base_width, n.alpha, n.stateless ? 1.0 : n.rho, opts);
    if (n.stateless)
        for (cwm::LayerSpec& l : spec.layers) l.cwm_eligible = false;
    return cwm::build_network<float>(spec, n.seed);
}

json net_args_json(const NetArgs& n) {
    return json{{"num_classes", n.num_classes}, {"base_width", n.base_width}, {"alpha", n.alpha},
                {"rho", n.rho},                 {"stateless", n.stateless},   {"cwm_stem", n.cwm_stem},
                {"cwm_skip", n.cwm_skip},       {"seed", n.seed}};
}

struct TrainArgs {
    std::string data = "out/data";
    std::string out = "out/train";
    std::string config_file;
    std::string init_weights;  // warm start from a compatible weights dir
    NetArgs net;
    cwm::TrainConfig cfg;
};

// File values apply only where no explicit flag was given.
void merge_train_config_file(TrainArgs& a, const CLI::App& cmd) {
    if (a.config_file.empty()) return;
    std::ifstream is(a.config_file);
    if (!is) throw std::invalid_argument("config: cannot read " + a.config_file);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config: " + a.config_file + ": " + e.what());
    }
    auto flag_given = [&](const std::string& name) { return cmd.count(name) > 0; };
    auto take = [&](const std::string& key, const std::string& flag, auto& slot) {
        if (j.contains(key) && !flag_given(flag)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
    };
    take("j", "--j", a.cfg.j);
    take("sequences_per_sample", "--sequences-per-sample", a.cfg.sequences_per_sample);
    take("epochs", "--epochs", a.cfg.epochs);
    take("lr", "--lr", a.cfg.sgd.lr);
    take("momentum", "--momentum", a.cfg.sgd.momentum);
    take("weight_decay", "--wd", a.cfg.sgd.weight_decay);
    take("seed", "--seed", a.cfg.seed);
    take("num_classes", "--classes", a.net.num_classes);
    take("base_width", "--base-width", a.net.base_width);
    take("alpha", "--alpha", a.net.alpha);
    take("rho", "--rho", a.net.rho);
    take("net_seed", "--net-seed", a.net.seed);
    for (auto& [key, _] : j.items()) {
        static const std::set<std::string> known{
            "j",      "sequences_per_sample", "epochs",     "lr",    "momentum", "weight_decay",
            "seed",   "num_classes",          "base_width", "alpha", "rho",      "net_seed"};
        if (!known.count(key)) throw std::invalid_argument("config: unknown field '" + key + "'");
    }
}

int cmd_train(const TrainArgs& a) {
    a.cfg.validate();
    cwm::Dataset data = cwm::open_dataset(a.data);
    cwm::Network<float> net = build_from_args(a.net);
    if (!a.init_weights.empty()) {
        cwm::Network<float> donor = cwm::load_weights<float>(a.init_weights, &net.spec);
        net.params = std::move(donor.params);
    }
    cwm::TrainReport report = cwm::train_network(net, data, a.cfg);
    fs::create_directories(a.out);
    report.weights_dir = a.out + "/weights";
    cwm::save_weights(net, report.weights_dir);
    cwm::write_train_report_csv(report, a.out + "/learning_curve.csv");
    cwm::write_train_report_json(report, a.cfg, a.out + "/train_report.json");
    json rc = net_args_json(a.net);
    rc["command"] = "train";
    rc["data"] = a.data;
    rc["out"] = a.out;
    rc["j"] = a.cfg.j;
    rc["sequences_per_sample"] = a.cfg.sequences_per_sample;
    rc["epochs"] = a.cfg.epochs;
    rc["lr"] = a.cfg.sgd.lr;
    rc["momentum"] = a.cfg.sgd.momentum;
    rc["weight_decay"] = a.cfg.sgd.weight_decay;
    rc["train_seed"] = a.cfg.seed;
    write_text(a.out + "/run_config.json", stamp(rc).dump(2));
    std::cout << "final epoch loss " << report.epoch_loss.back() << ", weights in "
              << report.weights_dir << "\n";
    return 0;
}

struct EvalArgs {
    std::string data = "out/data";
    std::string weights;
    std::string out = "out/eval";
    cwm::AbtConfig abt{19, true};
    std::string sweep;  // "kmin:kmax"
};

int cmd_eval(const EvalArgs& a) {
    cwm::Dataset data = cwm::open_dataset(a.data);
    cwm::Network<float> net = cwm::load_weights<float>(a.weights);
    fs::create_directories(a.out);
    json rc{{"command", "eval"}, {"data", a.data},          {"weights", a.weights},
            {"out", a.out},      {"k", a.abt.k},            {"average_pair", a.abt.average_pair},
            {"sweep", a.sweep}};
    write_text(a.out + "/run_config.json", stamp(rc).dump(2));

    if (!a.sweep.empty()) {
        const auto pos = a.sweep.find(':');
        if (pos == std::string::npos)
            throw std::invalid_argument("eval: --sweep expects kmin:kmax");
        const int kmin = std::stoi(a.sweep.substr(0, pos));
        const int kmax = std::stoi(a.sweep.substr(pos + 1));
        auto rows = cwm::abt_sweep(net, data, kmin, kmax);
        std::ofstream os(a.out + "/abt_sweep.csv");
        os << "k,miou\n";
        for (auto [k, m] : rows) {
            os << k << "," << m << "\n";
            std::cout << "k=" << k << "  miou=" << m << "\n";
        }
        return 0;
    }
    const double m = cwm::abt_eval(net, data, a.abt);
    write_text(a.out + "/miou.json",
               stamp(json{{"miou_abt", m}, {"k", a.abt.k}, {"average_pair", a.abt.average_pair}}).dump(2));
    std::cout << "miou_abt " << m << "\n";
    return 0;
}

struct FlopsArgs {
    std::string weights;
    NetArgs net;
    int height = 64, width = 64;
    std::string out = "out/flops";
};

int cmd_flops(const FlopsArgs& a) {
    cwm::NetworkSpec spec = a.weights.empty() ? build_from_args(a.net).spec
                                              : cwm::load_weights<float>(a.weights).spec;
    cwm::FlopReport r = cwm::count_flops(spec, a.height, a.width);
    fs::create_directories(a.out);
    cwm::write_flop_report_csv(r, a.out + "/flops.csv");
    write_text(a.out + "/flops.json", cwm::flop_report_json(r));
    json rc = net_args_json(a.net);
    rc["command"] = "flops";
    rc["weights"] = a.weights;
    rc["height"] = a.height;
    rc["width"] = a.width;
    write_text(a.out + "/run_config.json", stamp(rc).dump(2));
    std::cout << "# " << r.convention << "\n";
    std::cout << "stateless: " << r.flops_stateless << " FLOPs/frame\n";
    std::cout << "cwm step:  " << r.flops_cwm_step << " FLOPs/frame (ratio " << r.step_ratio()
              << ")\n";
    return 0;
}

struct BenchArgs {
    std::string weights;
    NetArgs net;
    int height = 64, width = 64;
    cwm::BenchParams params;
    bool contiguity = false;
    cwm::LayerBenchSetup layer;
    std::string out = "out/bench";
    uint64_t seed = 1;
};

int cmd_bench(const BenchArgs& a) {
    a.params.validate();
    fs::create_directories(a.out);
    if (a.contiguity) {
        cwm::LayerBenchReport r = cwm::bench_layer(a.layer, a.params);
        write_text(a.out + "/layer_bench.json", cwm::layer_bench_json(r));
        write_text(a.out + "/run_config.json",
                   stamp(json{{"command", "bench"},
                              {"mode", "contiguity"},
                              {"c_in", a.layer.c_in},
                              {"c_out", a.layer.c_out},
                              {"height", a.layer.height},
                              {"width", a.layer.width},
                              {"kernel", a.layer.kernel},
                              {"active", a.layer.active},
                              {"warmup", a.params.warmup},
                              {"iterations", a.params.iterations}})
                       .dump(2));
        std::cout << "env: " << r.environment << "\n";
        std::cout << "full       median " << r.full.median_us << " us\n";
        std::cout << "contiguous median " << r.contiguous.median_us << " us\n";
        std::cout << "scattered  median " << r.scattered.median_us << " us\n";
        return 0;
    }
    cwm::Network<float> net =
        a.weights.empty() ? build_from_args(a.net) : cwm::load_weights<float>(a.weights);
    cwm::NetworkBenchReport r = cwm::bench_network(net, a.height, a.width, a.params, a.seed);
    write_text(a.out + "/network_bench.json", cwm::network_bench_json(r));
    json rc = net_args_json(a.net);
    rc["command"] = "bench";
    rc["weights"] = a.weights;
    rc["height"] = a.height;
    rc["width"] = a.width;
    rc["warmup"] = a.params.warmup;
    rc["iterations"] = a.params.iterations;
    write_text(a.out + "/run_config.json", stamp(rc).dump(2));
    std::cout << "env: " << r.environment << "\n";
    std::cout << "stateless median " << r.stateless.median_us << " us/frame\n";
    std::cout << "cwm       median " << r.cwm.median_us << " us/frame (flop ratio "
              << r.flop_step_ratio << ")\n";
    return 0;
}

struct ReproduceArgs {
    std::string out = "out/reproduce";
    bool quick = false;
    bool skip_bench = false;
};

int cmd_reproduce(const ReproduceArgs& a) {
    cwm::ReproduceConfig cfg =
        a.quick ? cwm::quick_reproduce_config(a.out) : cwm::full_reproduce_config(a.out);
    cfg.skip_bench = a.skip_bench;
    cwm::ReproduceResult r = cwm::run_reproduce(cfg);
    std::cout << "model,alpha,rho,per_step_flops,params,median_latency_us,miou_abt\n";
    for (const cwm::ReproduceRow& row : r.rows)
        std::cout << row.model << "," << row.alpha << "," << row.rho << "," << row.per_step_flops
                  << "," << row.params << "," << row.median_latency_us << "," << row.miou_abt
                  << "\n";
    std::cout << "wrote " << r.csv_path << " in " << r.wall_seconds << " s\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();
    CLI::App app{"channel-masked streaming segmentation toolkit"};
    app.set_version_flag("--version", cwm::kVersion);
    app.require_subcommand(1);

    GenDataArgs gen;
    CLI::App* c_gen = app.add_subcommand("gen-data", "generate a synthetic video dataset");
    c_gen->add_option("--out", gen.out, "output directory");
    c_gen->add_option("--height", gen.cfg.height);
    c_gen->add_option("--width", gen.cfg.width);
    c_gen->add_option("--classes", gen.cfg.num_classes);
    c_gen->add_option("--min-shapes", gen.cfg.min_shapes);
    c_gen->add_option("--max-shapes", gen.cfg.max_shapes);
    c_gen->add_option("--max-speed", gen.cfg.max_speed);
    c_gen->add_option("--noise", gen.cfg.noise, "background noise amplitude");
    c_gen->add_option("--frames", gen.cfg.frames);
    c_gen->add_option("--annotated", gen.cfg.annotated_index);
    c_gen->add_option("--train", gen.cfg.train_sequences);
    c_gen->add_option("--val", gen.cfg.val_sequences);
    c_gen->add_option("--seed", gen.cfg.seed);

    MasksArgs masks;
    CLI::App* c_masks = app.add_subcommand("masks", "print a mask schedule");
    c_masks->add_option("--channels", masks.channels);
    c_masks->add_option("--rho", masks.rho);
    c_masks->add_flag("--random", masks.random, "random contiguous generator");
    c_masks->add_option("--active", masks.active, "active channels per mask (random mode)");
    c_masks->add_option("--n-masks", masks.n_masks);
    c_masks->add_option("--seed", masks.seed);
    c_masks->add_option("--steps", masks.show_steps, "steps to draw");

    auto add_net_options = [](CLI::App* c, NetArgs& n) {
        c->add_option("--classes", n.num_classes);
        c->add_option("--base-width", n.base_width);
        c->add_option("--alpha", n.alpha);
        c->add_option("--rho", n.rho);
        c->add_flag("--stateless", n.stateless, "plain convolutions everywhere");
        c->add_flag("--cwm-stem", n.cwm_stem, "also stream the stem conv");
        c->add_flag("--cwm-skip", n.cwm_skip, "also stream the skip projection");
        c->add_option("--net-seed", n.seed, "weight init seed");
    };

    TrainArgs train;
    CLI::App* c_train = app.add_subcommand("train", "train on a dataset");
    c_train->add_option("--data", train.data);
    c_train->add_option("--out", train.out);
    c_train->add_option("--config", train.config_file, "JSON config; flags override");
    c_train->add_option("--init-weights", train.init_weights, "warm-start from a weights directory");
    add_net_options(c_train, train.net);
    c_train->add_option("--j", train.cfg.j, "frames streamed before the predicted one");
    c_train->add_option("--sequences-per-sample", train.cfg.sequences_per_sample);
    c_train->add_option("--epochs", train.cfg.epochs);
    c_train->add_option("--lr", train.cfg.sgd.lr);
    c_train->add_option("--momentum", train.cfg.sgd.momentum);
    c_train->add_option("--wd", train.cfg.sgd.weight_decay);
    c_train->add_option("--clip", train.cfg.sgd.clip_norm, "global-norm gradient clip, 0 = off");
    c_train->add_option("--seed", train.cfg.seed);
    c_train->add_flag("--eval-each-epoch", train.cfg.eval_each_epoch);

    EvalArgs eval;
    CLI::App* c_eval = app.add_subcommand("eval", "steady-state evaluation");
    c_eval->add_option("--data", eval.data);
    c_eval->add_option("--weights", eval.weights)->required();
    c_eval->add_option("--out", eval.out);
    c_eval->add_option("--k", eval.abt.k);
    c_eval->add_flag("--average-pair,!--no-average-pair", eval.abt.average_pair);
    c_eval->add_option("--sweep", eval.sweep, "kmin:kmax, unpaired sweep");

    FlopsArgs flops;
    CLI::App* c_flops = app.add_subcommand("flops", "exact operation counts");
    c_flops->add_option("--weights", flops.weights);
    add_net_options(c_flops, flops.net);
    c_flops->add_option("--height", flops.height);
    c_flops->add_option("--width", flops.width);
    c_flops->add_option("--out", flops.out);

    BenchArgs bench;
    CLI::App* c_bench = app.add_subcommand("bench", "latency microbenchmarks");
    c_bench->add_option("--weights", bench.weights);
    add_net_options(c_bench, bench.net);
    c_bench->add_option("--height", bench.height);
    c_bench->add_option("--width", bench.width);
    c_bench->add_option("--warmup", bench.params.warmup);
    c_bench->add_option("--iterations", bench.params.iterations);
    c_bench->add_flag("--contiguity", bench.contiguity, "contiguous vs scattered masked layer");
    c_bench->add_option("--layer-cin", bench.layer.c_in);
    c_bench->add_option("--layer-cout", bench.layer.c_out);
    c_bench->add_option("--layer-height", bench.layer.height);
    c_bench->add_option("--layer-width", bench.layer.width);
    c_bench->add_option("--layer-kernel", bench.layer.kernel);
    c_bench->add_option("--layer-active", bench.layer.active);
    c_bench->add_option("--out", bench.out);
    c_bench->add_option("--seed", bench.seed);

    ReproduceArgs repro;
    CLI::App* c_repro = app.add_subcommand("reproduce", "train/evaluate/profile the full sweep");
    c_repro->add_option("--out", repro.out);
    c_repro->add_flag("--quick", repro.quick, "small frozen preset");
    c_repro->add_flag("--skip-bench", repro.skip_bench, "omit latency columns");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        std::cerr << e.what() << "\n" << app.help() << "\n";
        return 1;
    }

    try {
        if (c_gen->parsed()) return cmd_gen_data(gen);
        if (c_masks->parsed()) return cmd_masks(masks);
        if (c_train->parsed()) {
            merge_train_config_file(train, *c_train);
            return cmd_train(train);
        }
        if (c_eval->parsed()) return cmd_eval(eval);
        if (c_flops->parsed()) return cmd_flops(flops);
        if (c_bench->parsed()) return cmd_bench(bench);
        if (c_repro->parsed()) return cmd_reproduce(repro);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

#include "cwm/reproduce.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cwm/version.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cwm {

ReproduceConfig quick_reproduce_config(const std::string& out_dir) {
    ReproduceConfig cfg;
    cfg.out_dir = out_dir;
    cfg.data.height = 32;
    cfg.data.width = 32;
    cfg.data.min_shapes = 2;
    cfg.data.max_shapes = 4;
    cfg.data.max_speed = 2;
    cfg.data.train_sequences = 200;
    cfg.data.val_sequences = 40;
    cfg.data.seed = 11;
    cfg.base_width = 8;
    // streamed models fine-tune from the same-alpha baseline at a low
    // rate; from-scratch streamed training is unstable under the
    // stop-gradient rule (see README notes on training)
    cfg.train.j = 7;
    cfg.train.sequences_per_sample = 2;
    cfg.train.epochs = 12;
    cfg.train.sgd = SgdConfig{0.002, 0.9, 5e-3, 0.5};
    cfg.train.seed = 5;
    cfg.baseline_train = cfg.train;
    cfg.baseline_train.j = 1;
    cfg.baseline_train.sequences_per_sample = 1;
    cfg.baseline_train.epochs = 30;
    cfg.baseline_train.sgd = SgdConfig{0.01, 0.9, 5e-3, 0.5};
    cfg.abt = AbtConfig{19, true};
    cfg.bench = BenchParams{5, 30};
    cfg.seed = 5;
    return cfg;
}

ReproduceConfig full_reproduce_config(const std::string& out_dir) {
    ReproduceConfig cfg = quick_reproduce_config(out_dir);
    cfg.data.height = 64;
    cfg.data.width = 64;
    cfg.data.max_shapes = 5;
    cfg.data.max_speed = 3;
    cfg.data.train_sequences = 400;
    cfg.data.val_sequences = 80;
    cfg.base_width = 16;
    return cfg;
}

void write_reproduce_csv(const std::vector<ReproduceRow>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "model,alpha,rho,per_step_flops,params,median_latency_us,miou_abt\n";
    for (const ReproduceRow& r : rows)
        os << r.model << "," << r.alpha << "," << r.rho << "," << r.per_step_flops << "," << r.params
           << "," << r.median_latency_us << "," << r.miou_abt << "\n";
}

std::string reproduce_config_json(const ReproduceConfig& cfg) {
    json j;
    j["tool_version"] = kVersion;
    j["out_dir"] = cfg.out_dir;
    j["data"] = {{"height", cfg.data.height},
                 {"width", cfg.data.width},
                 {"num_classes", cfg.data.num_classes},
                 {"min_shapes", cfg.data.min_shapes},
                 {"max_shapes", cfg.data.max_shapes},
                 {"max_speed", cfg.data.max_speed},
                 {"frames", cfg.data.frames},
                 {"annotated_index", cfg.data.annotated_index},
                 {"train_sequences", cfg.data.train_sequences},
                 {"val_sequences", cfg.data.val_sequences},
                 {"seed", cfg.data.seed}};
    j["base_width"] = cfg.base_width;
    j["alphas"] = cfg.alphas;
    j["rhos"] = cfg.rhos;
    j["train"] = {{"j", cfg.train.j},
                  {"sequences_per_sample", cfg.train.sequences_per_sample},
                  {"epochs", cfg.train.epochs},
                  {"lr", cfg.train.sgd.lr},
                  {"momentum", cfg.train.sgd.momentum},
                  {"weight_decay", cfg.train.sgd.weight_decay},
                  {"seed", cfg.train.seed}};
    j["baseline_train"] = {{"j", cfg.baseline_train.j},
                           {"sequences_per_sample", cfg.baseline_train.sequences_per_sample},
                           {"epochs", cfg.baseline_train.epochs}};
    j["abt"] = {{"k", cfg.abt.k}, {"average_pair", cfg.abt.average_pair}};
    j["bench"] = {{"warmup", cfg.bench.warmup}, {"iterations", cfg.bench.iterations}};
    j["seed"] = cfg.seed;
    j["skip_bench"] = cfg.skip_bench;
    return j.dump(2);
}

ReproduceResult run_reproduce(const ReproduceConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(cfg.out_dir);
    {
        std::ofstream os(cfg.out_dir + "/run_config.json");
        os << reproduce_config_json(cfg) << "\n";
    }

    const std::string data_dir = cfg.out_dir + "/data";
    Dataset data = fs::exists(data_dir + "/index.json") && open_dataset(data_dir).cfg.seed == cfg.data.seed
                       ? open_dataset(data_dir)
                       : generate_dataset(cfg.data, data_dir);

    ReproduceResult result;
    auto finish_model = [&](const std::string& name, double alpha, double rho, bool streamed,
                            Network<float>& net, const TrainReport& report, const TrainConfig& tc) {
        std::ostringstream tag;
        tag << name << "_a" << alpha;
        const std::string model_dir = cfg.out_dir + "/" + tag.str();
        fs::create_directories(model_dir);
        save_weights(net, model_dir + "/weights");
        write_train_report_csv(report, model_dir + "/learning_curve.csv");
        write_train_report_json(report, tc, model_dir + "/train_report.json");

        ReproduceRow row;
        row.model = name;
        row.alpha = alpha;
        row.rho = rho;
        row.params = param_count(net.spec);
        FlopReport flops = count_flops(net.spec, cfg.data.height, cfg.data.width);
        row.per_step_flops = streamed ? flops.flops_cwm_step : flops.flops_stateless;
        row.miou_abt = abt_eval(net, data, cfg.abt);
        std::cout << "  miou " << row.miou_abt << std::endl;
        if (!cfg.skip_bench) {
            NetworkBenchReport bench =
                bench_network(net, cfg.data.height, cfg.data.width, cfg.bench, cfg.seed);
            row.median_latency_us = streamed ? bench.cwm.median_us : bench.stateless.median_us;
        }
        result.rows.push_back(row);
    };

    for (double alpha : cfg.alphas) {
        // the stateless baseline trains from scratch ...
        std::cout << "[reproduce] training baseline_a" << alpha << std::flush;
        NetworkSpec base_spec = toynet_spec(cfg.data.num_classes, cfg.base_width, alpha, 1.0);
        for (LayerSpec& l : base_spec.layers) l.cwm_eligible = false;
        Network<float> baseline = build_network<float>(base_spec, cfg.seed);
        TrainReport base_report = train_network(baseline, data, cfg.baseline_train);
        std::cout << "  loss " << base_report.epoch_loss.back() << std::flush;
        finish_model("baseline", alpha, 1.0, false, baseline, base_report, cfg.baseline_train);

        // ... and seeds the streamed variants, which fine-tune at a low
        // rate to adapt to the interlaced regime
        for (double rho : cfg.rhos) {
            std::ostringstream name;
            name << rho << "-BG";
            std::cout << "[reproduce] training " << name.str() << "_a" << alpha << std::flush;
            NetworkSpec spec = toynet_spec(cfg.data.num_classes, cfg.base_width, alpha, rho);
            Network<float> net = build_network<float>(spec, cfg.seed);
            for (auto& [lname, p] : net.params) p = baseline.params.at(lname);
            TrainReport report = train_network(net, data, cfg.train);
            std::cout << "  loss " << report.epoch_loss.back() << std::flush;
            finish_model(name.str(), alpha, rho, true, net, report, cfg.train);
        }
    }

    result.csv_path = cfg.out_dir + "/reproduce.csv";
    write_reproduce_csv(result.rows, result.csv_path);
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace cwm

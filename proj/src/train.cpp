#include "cwm/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "cwm/rng.hpp"
#include "json.hpp"

namespace cwm {

TrainReport train_network(Network<float>& net, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.cfg.annotated_index < cfg.j)
        throw std::invalid_argument("train: sequences have only " +
                                    std::to_string(data.cfg.annotated_index) +
                                    " frames before the annotated one, need j = " + std::to_string(cfg.j));

    const auto t0 = std::chrono::steady_clock::now();
    SgdOptimizer<float> opt(cfg.sgd);
    TrainReport report;
    std::vector<int> order = data.train_indices();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // deterministic per-epoch shuffle
        SplitMix64 rng(derive_seed(~cfg.seed, static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i) {
            size_t k = static_cast<size_t>(rng.next_below(i));
            std::swap(order[i - 1], order[k]);
        }

        double loss_sum = 0.0;
        int64_t loss_count = 0;
        for (int idx : order) {
            SequenceSample s = data.load_sequence(idx);
            std::vector<Tensor<float>> window;
            window.reserve(static_cast<size_t>(cfg.j));
            for (int t = s.annotated_index - cfg.j; t < s.annotated_index; ++t)
                window.push_back(with_batch_dim(s.frames[static_cast<size_t>(t)]));
            const LabelMap& target = s.labels[static_cast<size_t>(s.annotated_index)];
            std::vector<double> losses = train_bisequence_step(
                net, opt, std::span<const Tensor<float>>(window), target, cfg.sequences_per_sample);
            for (double l : losses) {
                if (!std::isfinite(l)) throw std::runtime_error("train: loss diverged (non-finite)");
                loss_sum += l;
                ++loss_count;
            }
        }
        report.epoch_loss.push_back(loss_sum / static_cast<double>(loss_count));
        if (cfg.eval_each_epoch) report.epoch_miou.push_back(abt_eval(net, data, cfg.abt));
    }

    report.optimizer_steps = opt.steps();
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

void write_train_report_csv(const TrainReport& r, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "epoch,loss" << (r.epoch_miou.empty() ? "" : ",miou_abt") << "\n";
    for (size_t i = 0; i < r.epoch_loss.size(); ++i) {
        os << i << "," << r.epoch_loss[i];
        if (!r.epoch_miou.empty()) os << "," << r.epoch_miou[i];
        os << "\n";
    }
}

void write_train_report_json(const TrainReport& r, const TrainConfig& cfg, const std::string& path) {
    nlohmann::json j;
    j["epoch_loss"] = r.epoch_loss;
    j["epoch_miou"] = r.epoch_miou;
    j["wall_seconds"] = r.wall_seconds;
    j["optimizer_steps"] = r.optimizer_steps;
    j["weights_dir"] = r.weights_dir;
    j["config"] = {{"j", cfg.j},
                   {"sequences_per_sample", cfg.sequences_per_sample},
                   {"epochs", cfg.epochs},
                   {"lr", cfg.sgd.lr},
                   {"momentum", cfg.sgd.momentum},
                   {"weight_decay", cfg.sgd.weight_decay},
                   {"seed", cfg.seed}};
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << j.dump(2) << "\n";
}

}  // namespace cwm

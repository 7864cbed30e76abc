#include "cwm/synth.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cwm/rng.hpp"
#include "cwm/tensor_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cwm {

void SynthConfig::validate() const {
    if (std::min(height, width) < 16)
        throw std::invalid_argument("synth: canvas too small for the configured shapes (min side 16)");
    if (num_classes < 2 || num_classes > 5)
        throw std::invalid_argument("synth: num_classes must be in [2,5]");
    if (min_shapes < 1 || max_shapes < min_shapes || max_shapes > 8)
        throw std::invalid_argument("synth: bad shape count range");
    if (max_speed < 0 || max_speed > std::min(height, width) / 4)
        throw std::invalid_argument("synth: max_speed out of range");
    if (noise < 0.0 || noise > 0.45)
        throw std::invalid_argument("synth: noise amplitude must be in [0, 0.45]");
    if (frames < 2) throw std::invalid_argument("synth: need at least 2 frames");
    if (annotated_index < 1 || annotated_index >= frames)
        throw std::invalid_argument("synth: annotated_index must be in [1, frames)");
    if (train_sequences < 0 || val_sequences < 0 || train_sequences + val_sequences < 1)
        throw std::invalid_argument("synth: need at least one sequence");
}

// Colors come in two confusable pairs (rectangle/cross reddish,
// circle/triangle greenish) so class identity needs shape context, not
// just a per-pixel color lookup.
std::array<float, 3> class_color(int class_id) {
    switch (class_id) {
        case 1: return {0.85f, 0.22f, 0.20f};  // rectangle
        case 2: return {0.20f, 0.78f, 0.28f};  // circle
        case 3: return {0.26f, 0.70f, 0.34f};  // triangle
        case 4: return {0.78f, 0.30f, 0.24f};  // cross
        default: throw std::invalid_argument("class_color: no canonical color for class " +
                                             std::to_string(class_id));
    }
}

namespace {

struct Object {
    int class_id = 1;
    int x0 = 0, y0 = 0;  // anchor at frame 0
    int vx = 0, vy = 0;
    std::vector<std::pair<int, int>> footprint;  // (dy, dx) offsets around the anchor
};

std::vector<std::pair<int, int>> make_footprint(int class_id, SplitMix64& rng, int h_max) {
    std::vector<std::pair<int, int>> fp;
    switch (class_id) {
        case 1: {  // rectangle
            int hx = rng.next_int(3, h_max);
            int hy = rng.next_int(3, h_max);
            for (int dy = -hy; dy <= hy; ++dy)
                for (int dx = -hx; dx <= hx; ++dx) fp.emplace_back(dy, dx);
            break;
        }
        case 2: {  // circle
            int r = rng.next_int(3, h_max);
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx)
                    if (dx * dx + dy * dy <= r * r) fp.emplace_back(dy, dx);
            break;
        }
        case 3: {  // upward triangle
            int s = rng.next_int(3, h_max);
            for (int dy = -s; dy <= s; ++dy) {
                int half = (dy + s) / 2;
                for (int dx = -half; dx <= half; ++dx) fp.emplace_back(dy, dx);
            }
            break;
        }
        case 4: {  // cross
            int s = rng.next_int(3, h_max);
            int t = std::max(1, s / 3);
            for (int dy = -s; dy <= s; ++dy)
                for (int dx = -s; dx <= s; ++dx)
                    if (std::abs(dx) <= t || std::abs(dy) <= t) fp.emplace_back(dy, dx);
            break;
        }
        default:
            throw std::logic_error("make_footprint: bad class");
    }
    return fp;
}

inline int wrap(int v, int m) {
    int r = v % m;
    return r < 0 ? r + m : r;
}

struct Sequence {
    Tensor<float> background;  // [3,H,W]
    std::vector<Object> objects;
};

Sequence roll_sequence(const SynthConfig& cfg, uint64_t seq_seed) {
    SplitMix64 rng(seq_seed);
    Sequence seq;
    seq.background = Tensor<float>({3, cfg.height, cfg.width});
    // static per-sequence noise so plain color lookup cannot solve the task
    const float amp = static_cast<float>(cfg.noise);
    for (int64_t i = 0; i < seq.background.size(); ++i)
        seq.background[i] = 0.45f + amp * (2.0f * static_cast<float>(rng.next_unit()) - 1.0f);

    const int h_max = std::max(3, std::min(cfg.height, cfg.width) / 8);
    const int n = rng.next_int(cfg.min_shapes, cfg.max_shapes);
    for (int i = 0; i < n; ++i) {
        Object o;
        o.class_id = rng.next_int(1, cfg.num_classes - 1);
        o.footprint = make_footprint(o.class_id, rng, h_max);
        o.x0 = rng.next_int(0, cfg.width - 1);
        o.y0 = rng.next_int(0, cfg.height - 1);
        o.vx = rng.next_int(-cfg.max_speed, cfg.max_speed);
        o.vy = rng.next_int(-cfg.max_speed, cfg.max_speed);
        seq.objects.push_back(std::move(o));
    }
    return seq;
}

void render_frame(const SynthConfig& cfg, const Sequence& seq, int t, Tensor<float>& frame,
                  LabelMap& label) {
    frame = seq.background;
    label = LabelMap(cfg.height, cfg.width);
    const int64_t plane = static_cast<int64_t>(cfg.height) * cfg.width;
    // later objects occlude earlier ones
    for (const Object& o : seq.objects) {
        const int cx = wrap(o.x0 + t * o.vx, cfg.width);
        const int cy = wrap(o.y0 + t * o.vy, cfg.height);
        const std::array<float, 3> col = class_color(o.class_id);
        for (auto [dy, dx] : o.footprint) {
            const int y = wrap(cy + dy, cfg.height);
            const int x = wrap(cx + dx, cfg.width);
            const int64_t px = static_cast<int64_t>(y) * cfg.width + x;
            frame[0 * plane + px] = col[0];
            frame[1 * plane + px] = col[1];
            frame[2 * plane + px] = col[2];
            label.ids[static_cast<size_t>(px)] = o.class_id;
        }
    }
}

std::string seq_dir(const std::string& root, int idx) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "seq_%05d", idx);
    return root + "/" + buf;
}

std::string frame_name(const char* stem, int t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%02d.cwmt", stem, t);
    return buf;
}

json config_to_json(const SynthConfig& c) {
    return json{{"height", c.height},
                {"width", c.width},
                {"num_classes", c.num_classes},
                {"min_shapes", c.min_shapes},
                {"max_shapes", c.max_shapes},
                {"max_speed", c.max_speed},
                {"noise", c.noise},
                {"frames", c.frames},
                {"annotated_index", c.annotated_index},
                {"train_sequences", c.train_sequences},
                {"val_sequences", c.val_sequences},
                {"seed", c.seed}};
}

SynthConfig config_from_json(const json& j) {
    SynthConfig c;
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.min_shapes = j.at("min_shapes").get<int>();
    c.max_shapes = j.at("max_shapes").get<int>();
    c.max_speed = j.at("max_speed").get<int>();
    c.noise = j.value("noise", 0.08);
    c.frames = j.at("frames").get<int>();
    c.annotated_index = j.at("annotated_index").get<int>();
    c.train_sequences = j.at("train_sequences").get<int>();
    c.val_sequences = j.at("val_sequences").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

}  // namespace

Dataset generate_dataset(const SynthConfig& cfg, const std::string& dir) {
    cfg.validate();
    fs::create_directories(dir);
    const int total = cfg.train_sequences + cfg.val_sequences;
    Tensor<float> frame;
    LabelMap label;
    for (int s = 0; s < total; ++s) {
        const std::string sd = seq_dir(dir, s);
        fs::create_directories(sd);
        Sequence seq = roll_sequence(cfg, derive_seed(cfg.seed, static_cast<uint64_t>(s)));
        for (int t = 0; t < cfg.frames; ++t) {
            render_frame(cfg, seq, t, frame, label);
            save_tensor(sd + "/" + frame_name("frame", t), frame);
            save_tensor(sd + "/" + frame_name("label", t), label_to_tensor(label));
        }
    }
    json index;
    index["format"] = "cwm-dataset";
    index["version"] = 1;
    index["sequences"] = total;
    index["config"] = config_to_json(cfg);
    std::ofstream os(dir + "/index.json");
    if (!os) throw std::runtime_error("synth: cannot write " + dir + "/index.json");
    os << index.dump(2) << "\n";
    return Dataset{dir, cfg};
}

Dataset open_dataset(const std::string& dir) {
    std::ifstream is(dir + "/index.json");
    if (!is) throw std::runtime_error("dataset: cannot read " + dir + "/index.json");
    json index = json::parse(is);
    if (index.value("format", "") != "cwm-dataset")
        throw std::runtime_error("dataset: " + dir + " is not a dataset directory");
    Dataset d{dir, config_from_json(index.at("config"))};
    d.cfg.validate();
    return d;
}

std::vector<int> Dataset::train_indices() const {
    std::vector<int> idx(static_cast<size_t>(cfg.train_sequences));
    for (int i = 0; i < cfg.train_sequences; ++i) idx[static_cast<size_t>(i)] = i;
    return idx;
}

std::vector<int> Dataset::val_indices() const {
    std::vector<int> idx(static_cast<size_t>(cfg.val_sequences));
    for (int i = 0; i < cfg.val_sequences; ++i) idx[static_cast<size_t>(i)] = cfg.train_sequences + i;
    return idx;
}

SequenceSample Dataset::load_sequence(int idx) const {
    if (idx < 0 || idx >= sequences())
        throw std::invalid_argument("dataset: sequence index " + std::to_string(idx) + " out of [0, " +
                                    std::to_string(sequences()) + ")");
    const std::string sd = seq_dir(dir, idx);
    SequenceSample s;
    s.annotated_index = cfg.annotated_index;
    s.frames.reserve(static_cast<size_t>(cfg.frames));
    s.labels.reserve(static_cast<size_t>(cfg.frames));
    for (int t = 0; t < cfg.frames; ++t) {
        s.frames.push_back(load_tensor<float>(sd + "/" + frame_name("frame", t)));
        s.labels.push_back(label_from_tensor(load_tensor<float>(sd + "/" + frame_name("label", t))));
    }
    return s;
}

}  // namespace cwm

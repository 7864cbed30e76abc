#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "cwm/synth.hpp"
#include "cwm/tensor_io.hpp"

using namespace cwm;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "cwm_synth_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

SynthConfig small_cfg() {
    SynthConfig cfg;
    cfg.height = 24;
    cfg.width = 24;
    cfg.train_sequences = 2;
    cfg.val_sequences = 1;
    cfg.frames = 12;
    cfg.annotated_index = 8;
    cfg.seed = 17;
    return cfg;
}

bool file_equal(const std::string& a, const std::string& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return !sa.empty() && sa == sb;
}

// Shift a label map by (dy, dx) with wraparound.
LabelMap translated(const LabelMap& m, int dy, int dx) {
    LabelMap out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            int ty = ((y + dy) % m.height + m.height) % m.height;
            int tx = ((x + dx) % m.width + m.width) % m.width;
            out.at(ty, tx) = m.at(y, x);
        }
    return out;
}

}  // namespace

TEST_CASE("generation is byte-identical for equal seeds") {
    const std::string d1 = tmp_dir("gen_a");
    const std::string d2 = tmp_dir("gen_b");
    SynthConfig cfg = small_cfg();
    generate_dataset(cfg, d1);
    generate_dataset(cfg, d2);
    CHECK(file_equal(d1 + "/seq_00000/frame_00.cwmt", d2 + "/seq_00000/frame_00.cwmt"));
    CHECK(file_equal(d1 + "/seq_00002/label_11.cwmt", d2 + "/seq_00002/label_11.cwmt"));

    SynthConfig other = cfg;
    other.seed = 18;
    const std::string d3 = tmp_dir("gen_c");
    generate_dataset(other, d3);
    CHECK(!file_equal(d1 + "/seq_00000/frame_00.cwmt", d3 + "/seq_00000/frame_00.cwmt"));
}

TEST_CASE("zero velocity freezes the video") {
    const std::string dir = tmp_dir("static");
    SynthConfig cfg = small_cfg();
    cfg.max_speed = 0;
    Dataset d = generate_dataset(cfg, dir);
    SequenceSample s = d.load_sequence(0);
    for (int t = 1; t < cfg.frames; ++t) {
        CHECK(s.frames[static_cast<size_t>(t)].bit_equal(s.frames[0]));
        CHECK(s.labels[static_cast<size_t>(t)] == s.labels[0]);
    }
}

TEST_CASE("single-object label masks translate by the velocity each frame") {
    const std::string dir = tmp_dir("translate");
    SynthConfig cfg = small_cfg();
    cfg.min_shapes = 1;
    cfg.max_shapes = 1;
    cfg.train_sequences = 4;
    cfg.val_sequences = 0;
    Dataset d = generate_dataset(cfg, dir);
    for (int idx = 0; idx < 4; ++idx) {
        SequenceSample s = d.load_sequence(idx);
        // recover the velocity by matching frame 0 -> 1, then hold it
        int vx_found = 99, vy_found = 99;
        for (int vy = -cfg.max_speed; vy <= cfg.max_speed && vx_found == 99; ++vy)
            for (int vx = -cfg.max_speed; vx <= cfg.max_speed; ++vx)
                if (translated(s.labels[0], vy, vx) == s.labels[1]) {
                    vy_found = vy;
                    vx_found = vx;
                    break;
                }
        REQUIRE(vx_found != 99);
        for (int t = 0; t + 1 < cfg.frames; ++t)
            CHECK(translated(s.labels[static_cast<size_t>(t)], vy_found, vx_found) ==
                  s.labels[static_cast<size_t>(t + 1)]);
    }
}

TEST_CASE("shape pixels carry their canonical color, background stays class 0") {
    const std::string dir = tmp_dir("colors");
    Dataset d = generate_dataset(small_cfg(), dir);
    SequenceSample s = d.load_sequence(0);
    const int64_t plane = static_cast<int64_t>(d.cfg.height) * d.cfg.width;
    for (int t : {0, 5}) {
        const Tensor<float>& f = s.frames[static_cast<size_t>(t)];
        const LabelMap& l = s.labels[static_cast<size_t>(t)];
        for (int64_t i = 0; i < plane; ++i) {
            const int32_t id = l.ids[static_cast<size_t>(i)];
            if (id == 0) continue;
            auto col = class_color(id);
            CHECK(f[0 * plane + i] == col[0]);
            CHECK(f[1 * plane + i] == col[1]);
            CHECK(f[2 * plane + i] == col[2]);
        }
    }
}

TEST_CASE("generate then load round trips") {
    const std::string dir = tmp_dir("roundtrip");
    SynthConfig cfg = small_cfg();
    Dataset d = generate_dataset(cfg, dir);
    Dataset reopened = open_dataset(dir);
    CHECK(reopened.cfg.seed == cfg.seed);
    CHECK(reopened.sequences() == 3);
    CHECK(reopened.train_indices() == std::vector<int>{0, 1});
    CHECK(reopened.val_indices() == std::vector<int>{2});

    SequenceSample s = d.load_sequence(1);
    CHECK(static_cast<int>(s.frames.size()) == cfg.frames);
    CHECK(s.annotated_index == cfg.annotated_index);
    CHECK(s.frames[0].shape() == std::vector<int>{3, 24, 24});
}

TEST_CASE("loader errors") {
    const std::string dir = tmp_dir("errors");
    Dataset d = generate_dataset(small_cfg(), dir);
    CHECK_THROWS_AS(d.load_sequence(3), std::invalid_argument);
    CHECK_THROWS_AS(d.load_sequence(-1), std::invalid_argument);

    SUBCASE("truncated file names the path") {
        const std::string victim = dir + "/seq_00001/frame_03.cwmt";
        fs::resize_file(victim, fs::file_size(victim) / 2);
        try {
            d.load_sequence(1);
            FAIL("expected a throw");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("frame_03") != std::string::npos);
        }
    }
    SUBCASE("missing index") { CHECK_THROWS_AS(open_dataset(dir + "/nope"), std::runtime_error); }
}

TEST_CASE("config validation") {
    SynthConfig cfg = small_cfg();
    cfg.height = 8;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);  // canvas too small
    cfg = small_cfg();
    cfg.annotated_index = 12;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_cfg();
    cfg.min_shapes = 4;
    cfg.max_shapes = 2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("with_batch_dim prepends a unit axis") {
    Tensor<float> t({3, 4, 5});
    Tensor<float> b = with_batch_dim(t);
    CHECK(b.shape() == std::vector<int>{1, 3, 4, 5});
    CHECK(b.size() == t.size());
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "cwm/mask.hpp"

using namespace cwm;

TEST_CASE("channel mask structural invariants") {
    ChannelMask m(1, 3, 4);
    CHECK(m.count() == 2);
    CHECK(m.contains(1));
    CHECK(!m.contains(3));
    CHECK_THROWS_AS(ChannelMask(2, 2, 4), std::invalid_argument);   // empty
    CHECK_THROWS_AS(ChannelMask(-1, 2, 4), std::invalid_argument);  // below range
    CHECK_THROWS_AS(ChannelMask(0, 5, 4), std::invalid_argument);   // beyond total
}

TEST_CASE("bi-step generator endpoints") {
    SUBCASE("rho 0 gives two half-full masks with no overlap") {
        MaskSchedule s = bistep_generator(8, 0.0);
        REQUIRE(s.masks.size() == 2);
        CHECK(s.masks[0].start == 0);
        CHECK(s.masks[0].end == 4);
        CHECK(s.masks[1].start == 4);
        CHECK(s.masks[1].end == 8);
        CHECK(s.overlap() == 0);
    }
    SUBCASE("rho 1 gives two full masks") {
        MaskSchedule s = bistep_generator(8, 1.0);
        CHECK(s.masks[0].full());
        CHECK(s.masks[1].full());
    }
    SUBCASE("rho 0.25 at 8 channels overlaps in the middle") {
        MaskSchedule s = bistep_generator(8, 0.25);
        CHECK(s.masks[0].start == 0);
        CHECK(s.masks[0].end == 5);
        CHECK(s.masks[1].start == 3);
        CHECK(s.masks[1].end == 8);
        CHECK(s.overlap() == 2);
    }
    CHECK_THROWS_AS(bistep_generator(1, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(bistep_generator(8, 1.5), std::invalid_argument);
}

TEST_CASE("bi-step schedules satisfy every schedule invariant") {
    for (int c = 2; c <= 512; ++c) {
        for (int r = 0; r <= 10; ++r) {
            const double rho = r / 10.0;
            MaskSchedule s = bistep_generator(c, rho);
            REQUIRE(s.masks.size() == 2);
            CHECK(s.masks[0].count() == s.masks[1].count());
            // consecutive masks cover everything
            CHECK(s.masks[0].start == 0);
            CHECK(s.masks[1].end == c);
            CHECK(s.masks[1].start <= s.masks[0].end);
            // overlap at least floor(rho * C)
            CHECK(s.overlap() >= static_cast<int>(std::floor(rho * c + 1e-9)));
            // the always-active middle sits inside both masks
            if (s.overlap() > 0) {
                CHECK(s.masks[0].contains(c - s.active_count()));
                CHECK(s.masks[1].contains(s.active_count() - 1));
            }
        }
    }
}

TEST_CASE("exact products do not round up twice") {
    // 0.6 * 10 must give 6 active-from-each-end, not 7
    MaskSchedule s = bistep_generator(10, 0.2);
    CHECK(s.active_count() == 6);
    CHECK(bistep_generator(10, 0.1).active_count() == 6);  // ceil(5.5)
}

TEST_CASE("odd channel counts force one overlapping channel at rho 0") {
    MaskSchedule s = bistep_generator(7, 0.0);
    CHECK(s.active_count() == 4);
    CHECK(s.overlap() == 1);
}

TEST_CASE("random contiguous generator") {
    SUBCASE("full-width masks regardless of seed") {
        for (uint64_t seed : {1ull, 99ull}) {
            MaskSchedule s = random_contiguous_generator(8, 8, 3, seed);
            for (const ChannelMask& m : s.masks) CHECK(m.full());
        }
    }
    SUBCASE("same seed reproduces the schedule") {
        MaskSchedule a = random_contiguous_generator(8, 5, 4, 1234);
        MaskSchedule b = random_contiguous_generator(8, 5, 4, 1234);
        REQUIRE(a.masks.size() == b.masks.size());
        for (size_t i = 0; i < a.masks.size(); ++i) {
            CHECK(a.masks[i].start == b.masks[i].start);
            CHECK(a.masks[i].end == b.masks[i].end);
        }
    }
    SUBCASE("any seed satisfies the schedule invariants") {
        for (uint64_t seed = 0; seed < 50; ++seed) {
            MaskSchedule s = random_contiguous_generator(16, 9, 5, seed);
            std::set<int> covered;
            for (const ChannelMask& m : s.masks) {
                CHECK(m.count() == 9);
                for (int c = m.start; c < m.end; ++c) covered.insert(c);
            }
            CHECK(covered.size() == 16);
        }
    }
    SUBCASE("impossible coverage is rejected up front") {
        CHECK_THROWS_AS(random_contiguous_generator(8, 5, 1, 1), std::invalid_argument);
        CHECK_THROWS_AS(random_contiguous_generator(8, 9, 2, 1), std::invalid_argument);
    }
}

TEST_CASE("mask_for_step cycles the schedule from step 1") {
    MaskSchedule s = bistep_generator(8, 0.25);
    CHECK(mask_for_step(s, 1).start == 0);
    CHECK(mask_for_step(s, 2).start == 3);
    CHECK(mask_for_step(s, 3).start == 0);
    for (int64_t t = 1; t < 20; ++t) {
        CHECK(mask_for_step(s, t).start == mask_for_step(s, t + 2).start);
        // two consecutive masks refresh every channel
        const ChannelMask& a = mask_for_step(s, t);
        const ChannelMask& b = mask_for_step(s, t + 1);
        CHECK(std::min(a.start, b.start) == 0);
        CHECK(std::max(a.end, b.end) == 8);
    }
    CHECK_THROWS_AS(mask_for_step(s, 0), std::invalid_argument);

    MaskSchedule single = random_contiguous_generator(8, 8, 1, 5);
    for (int64_t t = 1; t < 5; ++t) CHECK(mask_for_step(single, t).full());
}

TEST_CASE("flop fraction") {
    CHECK(flop_fraction(bistep_generator(8, 0.0)) == 0.5);
    CHECK(flop_fraction(bistep_generator(8, 0.25)) == doctest::Approx(0.625));
    CHECK(flop_fraction(bistep_generator(8, 1.0)) == 1.0);
}

TEST_CASE("schedule diagram draws active channels") {
    std::string d = schedule_diagram(bistep_generator(8, 0.0), 2);
    CHECK(d == "t=1 |####....|\nt=2 |....####|\n");
}

TEST_CASE("hand-built schedules are validated") {
    std::vector<ChannelMask> unequal{ChannelMask(0, 3, 8), ChannelMask(3, 8, 8)};
    CHECK_THROWS_AS(MaskSchedule(8, unequal, std::nullopt), std::invalid_argument);
    std::vector<ChannelMask> gap{ChannelMask(0, 3, 8), ChannelMask(4, 7, 8)};
    CHECK_THROWS_AS(MaskSchedule(8, gap, std::nullopt), std::invalid_argument);
}

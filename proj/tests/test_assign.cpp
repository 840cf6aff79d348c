#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "dicl/assign.hpp"

using namespace dicl;

TEST_CASE("assignment is argmax IoU with a threshold gate") {
    const std::vector<Box> gts = {{0, 0, 10, 10}, {20, 0, 30, 10}};
    const std::vector<Box> preds = {
        {1, 1, 11, 11},    // overlaps gt0
        {21, 0, 31, 10},   // overlaps gt1
        {50, 50, 60, 60},  // background
        {4, 0, 14, 10},    // IoU 6/14 with gt0, below 0.5
    };
    const auto a = assign(preds, gts, 0.5);
    REQUIRE(a.size() == 4);
    CHECK(a[0].gt_index == 0);
    CHECK(a[1].gt_index == 1);
    CHECK(a[2].gt_index == -1);
    CHECK(a[3].gt_index == -1);
    CHECK(a[0].iou == doctest::Approx(iou(preds[0], gts[0])));
    // lower threshold admits the weak match
    CHECK(assign(preds, gts, 0.3)[3].gt_index == 0);
}

TEST_CASE("equal-IoU ties break to the lower gt index") {
    const std::vector<Box> gts = {{0, 0, 10, 10}, {10, 0, 20, 10}};
    const std::vector<Box> pred = {{0, 0, 10, 10}};
    // pred is exactly gt0; add a symmetric pred straddling both
    const std::vector<Box> straddle = {{5, 0, 15, 10}};
    CHECK(assign(pred, gts, 0.5)[0].gt_index == 0);
    const auto a = assign(straddle, gts, 0.1);
    CHECK(a[0].gt_index == 0);  // both IoUs equal, lower index wins
}

TEST_CASE("mask plans respect the probability and cell-count contract") {
    // acceptance criterion 4 runs 10k persons at full scale; this is the
    // module-level version of the same contract
    const std::vector<Box> one = {{0, 0, 60, 140}};
    int applied = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        const MaskPlan plan = plan_masks(one, 0.5, 2, derive_seed(7, {(std::uint64_t)t}));
        REQUIRE(plan.entries.size() == 1);
        const auto& e = plan.entries[0];
        if (e.apply) {
            ++applied;
            CHECK(e.grid_cells.size() >= 1);
            CHECK(e.grid_cells.size() <= 2);
            std::set<std::pair<int, int>> uniq(e.grid_cells.begin(), e.grid_cells.end());
            CHECK(uniq.size() == e.grid_cells.size());
            for (const auto& [r, c] : e.grid_cells) {
                CHECK(r >= 0);
                CHECK(r < kGridRows);
                CHECK(c >= 0);
                CHECK(c < kGridCols);
            }
        } else {
            CHECK(e.grid_cells.empty());
        }
    }
    const double frac = static_cast<double>(applied) / trials;
    CHECK(frac > 0.48);
    CHECK(frac < 0.52);
}

TEST_CASE("grid cells partition the box exactly") {
    const Box box{3, 5, 3 + 61, 5 + 143};  // sizes with remainders
    double area = 0;
    for (int r = 0; r < kGridRows; ++r)
        for (int c = 0; c < kGridCols; ++c) {
            const Box cell = grid_cell_rect(box, r, c);
            CHECK(cell.valid());
            CHECK(cell.x1 >= box.x1);
            CHECK(cell.y1 >= box.y1);
            CHECK(cell.x2 <= box.x2);
            CHECK(cell.y2 <= box.y2);
            area += cell.area();
            // disjoint from right and lower neighbors
            if (c + 1 < kGridCols) CHECK(intersection_area(cell, grid_cell_rect(box, r, c + 1)) == 0);
            if (r + 1 < kGridRows) CHECK(intersection_area(cell, grid_cell_rect(box, r + 1, c)) == 0);
        }
    CHECK(area == doctest::Approx(61.0 * 143.0));
    CHECK(grid_cell_rect(box, kGridRows - 1, kGridCols - 1).x2 == box.x2);
    CHECK(grid_cell_rect(box, kGridRows - 1, kGridCols - 1).y2 == box.y2);
}

TEST_CASE("apply_masks alters exactly the planned cells, bit-exact") {
    ImageU8 img(160, 120);
    Rng rng(5);
    for (auto& p : img.px) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    const std::vector<Box> gts = {{10, 14, 70, 154}, {80, 20, 110, 90}};
    MaskPlan plan;
    plan.entries.resize(2);
    plan.entries[0] = {0, true, {{0, 0}, {13, 5}}};
    plan.entries[1] = {1, false, {}};

    const ImageU8 out = apply_masks(img, gts, plan);
    const auto mean = channel_mean(img);
    std::uint8_t fill[3];
    for (int c = 0; c < 3; ++c) fill[c] = static_cast<std::uint8_t>(std::lround(mean[c] * 255.0));

    auto in_cell = [&](int y, int x) {
        for (const auto& rc : plan.entries[0].grid_cells) {
            const Box cell = grid_cell_rect(gts[0], rc.first, rc.second);
            if (x >= cell.x1 && x < cell.x2 && y >= cell.y1 && y < cell.y2) return true;
        }
        return false;
    };
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                if (in_cell(y, x))
                    CHECK(out.at(y, x, c) == fill[c]);
                else
                    CHECK(out.at(y, x, c) == img.at(y, x, c));
            }
}

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dicl/geometry.hpp"
#include "dicl/image.hpp"
#include "dicl/rng.hpp"

namespace dicl {

/// Prediction-to-ground-truth link. gt_index is -1 for background.
struct AssignedPrediction {
    int pred_index = -1;
    int gt_index = -1;
    double iou = 0.0;
    bool masked = false;
};

inline constexpr int kGridRows = 14;
inline constexpr int kGridCols = 6;

struct MaskPlan {
    struct Entry {
        int gt_index = -1;
        bool apply = false;
        std::vector<std::pair<int, int>> grid_cells;  // (row, col), unique
    };
    std::vector<Entry> entries;  // one per ground truth, in gt order

    bool applied(int gt_index) const {
        return gt_index >= 0 && gt_index < static_cast<int>(entries.size()) &&
               entries[gt_index].apply;
    }
};

/// argmax-IoU assignment with the threshold gate; ties break to the lower
/// gt index, so the result is invariant to prediction order.
inline std::vector<AssignedPrediction> assign(const std::vector<Box>& predicted_boxes,
                                              const std::vector<Box>& gt_boxes,
                                              double threshold) {
    std::vector<AssignedPrediction> out;
    out.reserve(predicted_boxes.size());
    for (size_t i = 0; i < predicted_boxes.size(); ++i) {
        AssignedPrediction a;
        a.pred_index = static_cast<int>(i);
        for (size_t j = 0; j < gt_boxes.size(); ++j) {
            const double v = iou(predicted_boxes[i], gt_boxes[j]);
            if (v > a.iou) {
                a.iou = v;
                a.gt_index = static_cast<int>(j);
            }
        }
        if (a.iou < threshold) a.gt_index = -1;
        out.push_back(a);
    }
    return out;
}

/// Bernoulli(prob) per person; if applied, k ~ Uniform{1..max_cells} distinct
/// cells drawn uniformly from the 14x6 grid.
inline MaskPlan plan_masks(const std::vector<Box>& gt_boxes, double prob, int max_cells,
                           std::uint64_t seed) {
    MaskPlan plan;
    Rng rng(seed);
    for (size_t j = 0; j < gt_boxes.size(); ++j) {
        MaskPlan::Entry e;
        e.gt_index = static_cast<int>(j);
        e.apply = max_cells > 0 && rng.bernoulli(prob);
        if (e.apply) {
            const int k = static_cast<int>(rng.uniform_int(1, max_cells));
            while (static_cast<int>(e.grid_cells.size()) < k) {
                const int cell = static_cast<int>(rng.uniform_int(0, kGridRows * kGridCols - 1));
                const std::pair<int, int> rc{cell / kGridCols, cell % kGridCols};
                bool dup = false;
                for (const auto& c : e.grid_cells) dup = dup || c == rc;
                if (!dup) e.grid_cells.push_back(rc);
            }
        }
        plan.entries.push_back(std::move(e));
    }
    return plan;
}

/// Pixel rectangle of one grid cell: the box is partitioned into 14 rows x
/// 6 columns of equal integer size, remainder absorbed by the last row/col.
inline Box grid_cell_rect(const Box& box, int row, int col) {
    const int x1 = static_cast<int>(box.x1), y1 = static_cast<int>(box.y1);
    const int w = static_cast<int>(box.x2) - x1, h = static_cast<int>(box.y2) - y1;
    const int ch = h / kGridRows, cw = w / kGridCols;
    Box r;
    r.x1 = x1 + col * cw;
    r.y1 = y1 + row * ch;
    r.x2 = (col == kGridCols - 1) ? x1 + w : r.x1 + cw;
    r.y2 = (row == kGridRows - 1) ? y1 + h : r.y1 + ch;
    return r;
}

/// Replaces each planned cell with the whole-image per-channel mean.
inline ImageU8 apply_masks(const ImageU8& image, const std::vector<Box>& gt_boxes,
                           const MaskPlan& plan) {
    ImageU8 out = image;
    const auto mean = channel_mean(image);
    std::uint8_t fill[3];
    for (int c = 0; c < 3; ++c) fill[c] = static_cast<std::uint8_t>(std::lround(mean[c] * 255.0));
    for (const auto& e : plan.entries) {
        if (!e.apply) continue;
        const Box& box = gt_boxes[e.gt_index];
        for (const auto& [row, col] : e.grid_cells) {
            const Box r = grid_cell_rect(box, row, col);
            for (int y = static_cast<int>(r.y1); y < static_cast<int>(r.y2); ++y)
                for (int x = static_cast<int>(r.x1); x < static_cast<int>(r.x2); ++x)
                    for (int c = 0; c < 3; ++c) out.at(y, x, c) = fill[c];
        }
    }
    return out;
}

}  // namespace dicl

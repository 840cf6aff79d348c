#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dicl/model.hpp"
#include "dicl/synth.hpp"

namespace dicl {

struct EvalConfig {
    int gallery_size = 50;
    double match_iou = 0.5;  // true-positive gate against GT of the query id
    std::uint64_t seed = 0;
    // Detector stub at inference: jittered GT proposals scored by the
    // trained classification head.
    int jitter_count = 3;
    double jitter_sigma = 0.1;
};

struct SceneDetections {
    int scene_id = 0;
    DetectionOutput<double> det;
};

struct QueryResult {
    int scene_id = 0;
    int box_index = 0;
    double ap = 0.0;
    bool top1_hit = false;
    bool fallback = false;  // no detection overlapped the query GT box
};

struct EvalResult {
    double mAP = 0.0;
    double top1 = 0.0;
    std::vector<QueryResult> per_query;
    int gallery_size = 0;
};

/// AP over a ranked candidate list: sum of precision-at-hit over hits,
/// divided by the number of GT instances of the query identity in the
/// gallery (all-points interpolation over the ranked detection list).
double average_precision(const std::vector<bool>& ranked_hits, int num_gt);

/// Runs the eval-mode detector on every scene of the manifest.
std::vector<SceneDetections> detect_all(const SiameseModel<double>& model,
                                        const DatasetManifest& manifest, const EvalConfig& cfg);

/// The detected embedding with maximum IoU against the query GT box; falls
/// back to pooling the GT box directly when nothing overlaps.
Vec<double> extract_query_embedding(const SiameseModel<double>& model,
                                    const SceneSample& scene, int box_index,
                                    const SceneDetections& scene_dets, bool* fallback);

/// Protocol core, exposed for oracle tests and null models: candidates are
/// ranked by cosine similarity; a candidate is a true positive iff it has
/// IoU >= match_iou with a not-yet-claimed GT box of the query identity.
EvalResult evaluate_with_detections(const std::vector<SceneDetections>& detections,
                                    const DatasetManifest& manifest, int gallery_size,
                                    const EvalConfig& cfg,
                                    const std::vector<Vec<double>>& query_embeddings,
                                    const std::vector<bool>& fallback_flags);

EvalResult evaluate(const SiameseModel<double>& model, const DatasetManifest& manifest,
                    int gallery_size, const EvalConfig& cfg);

/// Nested galleries (smaller subset of larger) under one seed, shared queries.
std::vector<EvalResult> gallery_sweep(const SiameseModel<double>& model,
                                      const DatasetManifest& manifest,
                                      const std::vector<int>& sizes, const EvalConfig& cfg);

struct RobustnessReport {
    // Rows: [model][testset] with model 0 = without OIC, 1 = with OIC and
    // testset 0 = original, 1 = masked.
    double mAP[2][2] = {};
    double top1[2][2] = {};
    double map_drop_without = 0.0, map_drop_with = 0.0;
    double top1_drop_without = 0.0, top1_drop_with = 0.0;
    std::string to_table() const;
};

RobustnessReport robustness_report(const SiameseModel<double>& model_with,
                                   const SiameseModel<double>& model_without,
                                   const DatasetManifest& manifest, double pixel_fraction,
                                   const EvalConfig& cfg);

/// Monte-Carlo null model: GT boxes as detections, random unit embeddings.
/// Returns (mean mAP, stddev) over `trials` draws.
std::pair<double, double> random_embedding_null(const DatasetManifest& manifest,
                                                int gallery_size, const EvalConfig& cfg,
                                                int trials, std::uint64_t seed);

}  // namespace dicl

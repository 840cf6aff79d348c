#include "dicl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dicl/rng.hpp"

namespace dicl {

namespace {

constexpr std::uint64_t kTagDetect = 31;
constexpr std::uint64_t kTagGallery = 32;
constexpr std::uint64_t kTagNull = 33;

/// Gallery scene order for one query: seeded permutation of all non-query
/// scenes. If the leading `min_size` entries contain no scene with the query
/// identity, the first such scene is swapped into the prefix so every nested
/// gallery satisfies the at-least-one-match invariant.
std::vector<int> gallery_order(const DatasetManifest& manifest, int query_scene_id,
                               int query_identity, int min_size, std::uint64_t seed,
                               int query_index) {
    std::vector<int> order;
    for (size_t i = 0; i < manifest.samples.size(); ++i)
        if (manifest.samples[i].scene_id != query_scene_id) order.push_back(static_cast<int>(i));
    Rng rng(derive_seed(seed, {kTagGallery, static_cast<std::uint64_t>(query_index)}));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(0, i)]);

    auto has_identity = [&](int idx) {
        const auto& s = manifest.samples[idx];
        return std::find(s.true_identity.begin(), s.true_identity.end(), query_identity) !=
               s.true_identity.end();
    };
    min_size = std::min<int>(min_size, static_cast<int>(order.size()));
    bool covered = false;
    for (int i = 0; i < min_size && !covered; ++i) covered = has_identity(order[i]);
    if (!covered) {
        for (size_t i = min_size; i < order.size(); ++i)
            if (has_identity(order[i])) {
                std::swap(order[min_size - 1], order[i]);
                break;
            }
    }
    return order;
}

struct Candidate {
    double similarity;
    int scene_idx;
    int det_idx;
};

QueryResult score_query(const DatasetManifest& manifest,
                        const std::vector<SceneDetections>& detections,
                        const std::vector<int>& gallery, const Vec<double>& query_emb,
                        int query_identity, double match_iou) {
    QueryResult qr;
    std::vector<Candidate> cands;
    int num_gt = 0;
    for (int idx : gallery) {
        const auto& det = detections[idx].det;
        for (size_t d = 0; d < det.embeddings.size(); ++d) {
            const double sim = query_emb.dot(det.embeddings[d]) /
                               (query_emb.norm() * det.embeddings[d].norm());
            cands.push_back({sim, idx, static_cast<int>(d)});
        }
        const auto& s = manifest.samples[idx];
        for (int id : s.true_identity)
            if (id == query_identity) ++num_gt;
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        if (a.scene_idx != b.scene_idx) return a.scene_idx < b.scene_idx;
        return a.det_idx < b.det_idx;
    });

    // Rank-order matching: a candidate is a hit iff it overlaps an unclaimed
    // GT box of the query identity at IoU >= match_iou.
    std::vector<std::vector<bool>> claimed(manifest.samples.size());
    for (size_t i = 0; i < manifest.samples.size(); ++i)
        claimed[i].assign(manifest.samples[i].boxes.size(), false);
    std::vector<bool> hits;
    hits.reserve(cands.size());
    for (const auto& c : cands) {
        const auto& s = manifest.samples[c.scene_idx];
        const Box& db = detections[c.scene_idx].det.boxes[c.det_idx];
        bool hit = false;
        for (size_t b = 0; b < s.boxes.size(); ++b) {
            if (s.true_identity[b] != query_identity || claimed[c.scene_idx][b]) continue;
            if (iou(db, s.boxes[b]) >= match_iou) {
                claimed[c.scene_idx][b] = true;
                hit = true;
                break;
            }
        }
        hits.push_back(hit);
    }
    qr.ap = average_precision(hits, num_gt);
    qr.top1_hit = !hits.empty() && hits.front();
    return qr;
}

}  // namespace

double average_precision(const std::vector<bool>& ranked_hits, int num_gt) {
    if (num_gt <= 0) return 0.0;
    double ap = 0.0;
    int hits = 0;
    for (size_t k = 0; k < ranked_hits.size(); ++k)
        if (ranked_hits[k]) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    return ap / num_gt;
}

std::vector<SceneDetections> detect_all(const SiameseModel<double>& model,
                                        const DatasetManifest& manifest, const EvalConfig& cfg) {
    std::vector<SceneDetections> out;
    for (const auto& s : manifest.samples) {
        SceneDetections sd;
        sd.scene_id = s.scene_id;
        Rng rng(derive_seed(cfg.seed, {kTagDetect, static_cast<std::uint64_t>(s.scene_id)}));
        std::vector<Box> proposals;
        for (const auto& gt : s.boxes) {
            proposals.push_back(gt);
            for (const auto& b :
                 jitter_box(gt, cfg.jitter_count, cfg.jitter_sigma, s.image.w, s.image.h, rng))
                proposals.push_back(b);
        }
        sd.det = model.search_forward(to_tensor<double>(s.image), proposals, /*train_mode=*/false);
        out.push_back(std::move(sd));
    }
    return out;
}

Vec<double> extract_query_embedding(const SiameseModel<double>& model, const SceneSample& scene,
                                    int box_index, const SceneDetections& scene_dets,
                                    bool* fallback) {
    const Box& gt = scene.boxes[box_index];
    double best_iou = 0.0;
    int best = -1;
    for (size_t d = 0; d < scene_dets.det.boxes.size(); ++d) {
        const double v = iou(scene_dets.det.boxes[d], gt);
        if (v > best_iou) {
            best_iou = v;
            best = static_cast<int>(d);
        }
    }
    if (best >= 0) {
        if (fallback) *fallback = false;
        return scene_dets.det.embeddings[best];
    }
    if (fallback) *fallback = true;
    const Tensor3<double> feats = model.extract_features(to_tensor<double>(scene.image));
    return model.region_forward(feats, gt).emb;
}

EvalResult evaluate_with_detections(const std::vector<SceneDetections>& detections,
                                    const DatasetManifest& manifest, int gallery_size,
                                    const EvalConfig& cfg,
                                    const std::vector<Vec<double>>& query_embeddings,
                                    const std::vector<bool>& fallback_flags) {
    EvalResult result;
    result.gallery_size = gallery_size;
    for (size_t q = 0; q < manifest.query_list.size(); ++q) {
        const auto [scene_id, box_index] = manifest.query_list[q];
        const SceneSample& scene = manifest.scene_by_id(scene_id);
        const int identity = scene.true_identity[box_index];
        const std::vector<int> order = gallery_order(manifest, scene_id, identity, gallery_size,
                                                     cfg.seed, static_cast<int>(q));
        const int size = std::min<int>(gallery_size, static_cast<int>(order.size()));
        const std::vector<int> gallery(order.begin(), order.begin() + size);
        QueryResult qr = score_query(manifest, detections, gallery, query_embeddings[q],
                                     identity, cfg.match_iou);
        qr.scene_id = scene_id;
        qr.box_index = box_index;
        qr.fallback = q < fallback_flags.size() && fallback_flags[q];
        result.per_query.push_back(qr);
    }
    if (!result.per_query.empty()) {
        for (const auto& qr : result.per_query) {
            result.mAP += qr.ap;
            result.top1 += qr.top1_hit ? 1.0 : 0.0;
        }
        result.mAP /= static_cast<double>(result.per_query.size());
        result.top1 /= static_cast<double>(result.per_query.size());
    }
    return result;
}

namespace {

void query_embeddings_for(const SiameseModel<double>& model, const DatasetManifest& manifest,
                          const std::vector<SceneDetections>& detections,
                          std::vector<Vec<double>>* embs, std::vector<bool>* fallbacks) {
    for (const auto& [scene_id, box_index] : manifest.query_list) {
        const SceneSample& scene = manifest.scene_by_id(scene_id);
        const SceneDetections* sd = nullptr;
        for (const auto& d : detections)
            if (d.scene_id == scene_id) sd = &d;
        bool fb = false;
        embs->push_back(extract_query_embedding(model, scene, box_index, *sd, &fb));
        fallbacks->push_back(fb);
    }
}

}  // namespace

EvalResult evaluate(const SiameseModel<double>& model, const DatasetManifest& manifest,
                    int gallery_size, const EvalConfig& cfg) {
    const auto detections = detect_all(model, manifest, cfg);
    std::vector<Vec<double>> embs;
    std::vector<bool> fallbacks;
    query_embeddings_for(model, manifest, detections, &embs, &fallbacks);
    return evaluate_with_detections(detections, manifest, gallery_size, cfg, embs, fallbacks);
}

std::vector<EvalResult> gallery_sweep(const SiameseModel<double>& model,
                                      const DatasetManifest& manifest,
                                      const std::vector<int>& sizes, const EvalConfig& cfg) {
    const auto detections = detect_all(model, manifest, cfg);
    std::vector<Vec<double>> embs;
    std::vector<bool> fallbacks;
    query_embeddings_for(model, manifest, detections, &embs, &fallbacks);
    std::vector<EvalResult> out;
    for (int size : sizes) {
        const int clipped = std::min<int>(size, static_cast<int>(manifest.samples.size()) - 1);
        out.push_back(
            evaluate_with_detections(detections, manifest, clipped, cfg, embs, fallbacks));
    }
    return out;
}

RobustnessReport robustness_report(const SiameseModel<double>& model_with,
                                   const SiameseModel<double>& model_without,
                                   const DatasetManifest& manifest, double pixel_fraction,
                                   const EvalConfig& cfg) {
    const DatasetManifest masked = make_masked_testset(manifest, pixel_fraction, cfg.seed);
    RobustnessReport r;
    const SiameseModel<double>* models[2] = {&model_without, &model_with};
    const DatasetManifest* sets[2] = {&manifest, &masked};
    for (int m = 0; m < 2; ++m)
        for (int t = 0; t < 2; ++t) {
            const EvalResult e = evaluate(*models[m], *sets[t], cfg.gallery_size, cfg);
            r.mAP[m][t] = e.mAP;
            r.top1[m][t] = e.top1;
        }
    r.map_drop_without = r.mAP[0][0] - r.mAP[0][1];
    r.map_drop_with = r.mAP[1][0] - r.mAP[1][1];
    r.top1_drop_without = r.top1[0][0] - r.top1[0][1];
    r.top1_drop_with = r.top1[1][0] - r.top1[1][1];
    return r;
}

std::string RobustnessReport::to_table() const {
    std::ostringstream os;
    os << "test_set,without_oic_mAP,without_oic_top1,with_oic_mAP,with_oic_top1\n";
    os << "original," << mAP[0][0] << "," << top1[0][0] << "," << mAP[1][0] << "," << top1[1][0]
       << "\n";
    os << "masked," << mAP[0][1] << "," << top1[0][1] << "," << mAP[1][1] << "," << top1[1][1]
       << "\n";
    os << "drop," << map_drop_without << "," << top1_drop_without << "," << map_drop_with << ","
       << top1_drop_with << "\n";
    return os.str();
}

std::pair<double, double> random_embedding_null(const DatasetManifest& manifest,
                                                int gallery_size, const EvalConfig& cfg,
                                                int trials, std::uint64_t seed) {
    std::vector<double> maps;
    for (int t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, {kTagNull, static_cast<std::uint64_t>(t)}));
        auto random_emb = [&]() {
            Vec<double> v(32);
            for (int i = 0; i < v.size(); ++i) v[i] = rng.normal();
            return Vec<double>(v.normalized());
        };
        std::vector<SceneDetections> detections;
        for (const auto& s : manifest.samples) {
            SceneDetections sd;
            sd.scene_id = s.scene_id;
            for (const auto& b : s.boxes) {
                sd.det.boxes.push_back(b);
                sd.det.scores.push_back(1.0);
                sd.det.embeddings.push_back(random_emb());
            }
            detections.push_back(std::move(sd));
        }
        std::vector<Vec<double>> qembs;
        std::vector<bool> fallbacks;
        for (size_t q = 0; q < manifest.query_list.size(); ++q) {
            qembs.push_back(random_emb());
            fallbacks.push_back(false);
        }
        maps.push_back(
            evaluate_with_detections(detections, manifest, gallery_size, cfg, qembs, fallbacks)
                .mAP);
    }
    double mean = 0.0;
    for (double m : maps) mean += m;
    mean /= maps.size();
    double var = 0.0;
    for (double m : maps) var += (m - mean) * (m - mean);
    var /= std::max<size_t>(1, maps.size() - 1);
    return {mean, std::sqrt(var)};
}

}  // namespace dicl

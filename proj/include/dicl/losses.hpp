#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "dicl/tensor.hpp"

namespace dicl {

/// One search-branch re-id feature with its assignment metadata.
template <class S>
struct SearchEmbedding {
    Vec<S> emb;
    int gt_index = -1;      // -1 = background
    bool masked = false;    // person region was grid-masked this step
    bool is_gt_box = false;  // proposal box equals the ground-truth box
};

/// Intra-image contrast inputs: search-branch features plus one instance-
/// branch feature per ground truth, and a pseudo-label per ground truth
/// (-1 = outlier / unclustered).
template <class S>
struct ContrastBatch {
    std::vector<SearchEmbedding<S>> search;
    std::vector<Vec<S>> instance;
    std::vector<int> pseudo_labels;
};

struct LossFlags {
    bool no_positives = false;   // n^p == 0
    bool no_masked = false;      // n^o == 0
    bool single_identity = false;  // triplet needs >= 2 identities
    bool cold_start = false;     // empty centroid table
};

template <class S>
struct LossGrads {
    std::vector<Vec<S>> d_search;
    std::vector<Vec<S>> d_instance;

    void ensure(const ContrastBatch<S>& b) {
        if (d_search.size() != b.search.size()) {
            d_search.clear();
            for (const auto& e : b.search) d_search.push_back(Vec<S>::Zero(e.emb.size()));
        }
        if (d_instance.size() != b.instance.size()) {
            d_instance.clear();
            for (const auto& e : b.instance) d_instance.push_back(Vec<S>::Zero(e.size()));
        }
    }
};

namespace detail {

/// Cosine similarity with gradients w.r.t. both raw vectors.
template <class S>
S cosine(const Vec<S>& a, const Vec<S>& b, Vec<S>* da, Vec<S>* db) {
    const S na = a.norm(), nb = b.norm();
    const S s = a.dot(b) / (na * nb);
    if (da) *da = b / (na * nb) - s * a / (na * na);
    if (db) *db = a / (na * nb) - s * b / (nb * nb);
    return s;
}

}  // namespace detail

/// Many-to-one consistency: (1/n^p) sum over unmasked assigned predictions of
/// 1 - cos(f_i, f^g_{j(i)}).
template <class S>
S many_to_one_loss(const ContrastBatch<S>& batch, LossGrads<S>* grads = nullptr,
                   LossFlags* flags = nullptr) {
    if (grads) grads->ensure(batch);
    int np = 0;
    for (const auto& e : batch.search)
        if (e.gt_index >= 0 && !e.masked) ++np;
    if (np == 0) {
        if (flags) flags->no_positives = true;
        return S(0);
    }
    S total = S(0);
    for (size_t i = 0; i < batch.search.size(); ++i) {
        const auto& e = batch.search[i];
        if (e.gt_index < 0 || e.masked) continue;
        Vec<S> da, db;
        total += S(1) - detail::cosine(e.emb, batch.instance[e.gt_index], grads ? &da : nullptr,
                                       grads ? &db : nullptr);
        if (grads) {
            grads->d_search[i] -= da / S(np);
            grads->d_instance[e.gt_index] -= db / S(np);
        }
    }
    return total / S(np);
}

/// Same consistency over the masked population (count n^o); 0 when n^o = 0.
template <class S>
S occlusion_loss(const ContrastBatch<S>& batch, LossGrads<S>* grads = nullptr,
                 LossFlags* flags = nullptr) {
    if (grads) grads->ensure(batch);
    int no = 0;
    for (const auto& e : batch.search)
        if (e.gt_index >= 0 && e.masked) ++no;
    if (no == 0) {
        if (flags) flags->no_masked = true;
        return S(0);
    }
    S total = S(0);
    for (size_t i = 0; i < batch.search.size(); ++i) {
        const auto& e = batch.search[i];
        if (e.gt_index < 0 || !e.masked) continue;
        Vec<S> da, db;
        total += S(1) - detail::cosine(e.emb, batch.instance[e.gt_index], grads ? &da : nullptr,
                                       grads ? &db : nullptr);
        if (grads) {
            grads->d_search[i] -= da / S(no);
            grads->d_instance[e.gt_index] -= db / S(no);
        }
    }
    return total / S(no);
}

/// Hard-mined triplet loss over all assigned predictions (masked and
/// unmasked). Positives of anchor i: other predictions sharing its ground
/// truth plus that ground truth's instance embedding. Negatives: predictions
/// and instance embeddings of other ground truths in the same image.
template <class S>
S triplet_loss(const ContrastBatch<S>& batch, S margin, LossGrads<S>* grads = nullptr,
               LossFlags* flags = nullptr, bool clamp_at_zero = true) {
    if (grads) grads->ensure(batch);
    std::vector<int> anchors;
    for (size_t i = 0; i < batch.search.size(); ++i)
        if (batch.search[i].gt_index >= 0) anchors.push_back(static_cast<int>(i));
    int distinct = 0;
    {
        std::vector<bool> seen(batch.instance.size(), false);
        for (int i : anchors)
            if (!seen[batch.search[i].gt_index]) {
                seen[batch.search[i].gt_index] = true;
                ++distinct;
            }
    }
    if (anchors.empty() || distinct < 2) {
        if (flags) flags->single_identity = true;
        return S(0);
    }

    const S eps = S(1e-12);
    S total = S(0);
    for (int i : anchors) {
        const auto& a = batch.search[i];
        // candidate = (is_search, index); hardest positive / hardest negative
        S max_pos = -S(1);
        S min_neg = std::numeric_limits<S>::max();
        int pos_idx = -1, neg_idx = -1;
        bool pos_is_search = false, neg_is_search = false;
        for (int k : anchors) {
            if (k == i) continue;
            const S d = (a.emb - batch.search[k].emb).norm();
            if (batch.search[k].gt_index == a.gt_index) {
                if (d > max_pos) {
                    max_pos = d;
                    pos_idx = k;
                    pos_is_search = true;
                }
            } else if (d < min_neg) {
                min_neg = d;
                neg_idx = k;
                neg_is_search = true;
            }
        }
        for (size_t j = 0; j < batch.instance.size(); ++j) {
            const S d = (a.emb - batch.instance[j]).norm();
            if (static_cast<int>(j) == a.gt_index) {
                if (d > max_pos) {
                    max_pos = d;
                    pos_idx = static_cast<int>(j);
                    pos_is_search = false;
                }
            } else if (d < min_neg) {
                min_neg = d;
                neg_idx = static_cast<int>(j);
                neg_is_search = false;
            }
        }
        const S hinge = margin + max_pos - min_neg;
        const S contrib = clamp_at_zero ? std::max(S(0), hinge) : hinge;
        total += contrib;
        if (!grads) continue;
        const bool active = clamp_at_zero ? hinge > S(0) : true;
        if (!active) continue;
        const S inv_n = S(1) / S(anchors.size());
        Vec<S> d_anchor = Vec<S>::Zero(a.emb.size());
        if (max_pos > eps) {
            const Vec<S>& p = pos_is_search ? batch.search[pos_idx].emb : batch.instance[pos_idx];
            const Vec<S> dir = (a.emb - p) / max_pos;
            d_anchor += dir;
            auto& gp = pos_is_search ? grads->d_search[pos_idx] : grads->d_instance[pos_idx];
            gp -= dir * inv_n;
        }
        if (min_neg > eps) {
            const Vec<S>& n = neg_is_search ? batch.search[neg_idx].emb : batch.instance[neg_idx];
            const Vec<S> dir = (a.emb - n) / min_neg;
            d_anchor -= dir;
            auto& gn = neg_is_search ? grads->d_search[neg_idx] : grads->d_instance[neg_idx];
            gn += dir * inv_n;
        }
        grads->d_search[i] += d_anchor * inv_n;
    }
    return total / S(anchors.size());
}

/// Cluster-centroid softmax (OIM over the memory bank's centroid table).
/// Each contributing instance's feature is the renormalized average of its
/// GT-box search embedding and its instance-branch embedding; outliers
/// (pseudo-label -1) are skipped.
template <class S>
S oim_loss(const ContrastBatch<S>& batch, const Mat<S>& centroids, S temperature,
           LossGrads<S>* grads = nullptr, LossFlags* flags = nullptr) {
    if (grads) grads->ensure(batch);
    if (centroids.rows() == 0) {
        if (flags) flags->cold_start = true;
        return S(0);
    }
    // GT-box search embedding per ground truth, if present in this batch.
    std::vector<int> gt_search(batch.instance.size(), -1);
    for (size_t i = 0; i < batch.search.size(); ++i)
        if (batch.search[i].is_gt_box && batch.search[i].gt_index >= 0)
            gt_search[batch.search[i].gt_index] = static_cast<int>(i);

    S total = S(0);
    int count = 0;
    struct Contribution {
        int gt;
        int search_idx;
        Vec<S> d_feature;
    };
    std::vector<Contribution> contribs;
    for (size_t j = 0; j < batch.instance.size(); ++j) {
        const int label = j < batch.pseudo_labels.size() ? batch.pseudo_labels[j] : -1;
        if (label < 0 || label >= centroids.rows()) continue;
        const Vec<S> sum = gt_search[j] >= 0
                               ? Vec<S>(batch.search[gt_search[j]].emb + batch.instance[j])
                               : batch.instance[j];
        const S norm = sum.norm();
        const Vec<S> f = sum / norm;
        Vec<S> logits = centroids * f / temperature;
        const S m = logits.maxCoeff();
        const Vec<S> ex = (logits.array() - m).exp();
        const S z = ex.sum();
        total += -(logits[label] - m - std::log(z));
        ++count;
        if (grads) {
            Vec<S> p = ex / z;
            p[label] -= S(1);
            Vec<S> d_f = centroids.transpose() * p / temperature;
            // back through f = sum/|sum|
            Vec<S> d_sum = (d_f - f * f.dot(d_f)) / norm;
            contribs.push_back({static_cast<int>(j), gt_search[j], std::move(d_sum)});
        }
    }
    if (count == 0) {
        if (flags && batch.instance.empty() == false) flags->cold_start = true;
        return S(0);
    }
    if (grads)
        for (auto& c : contribs) {
            grads->d_instance[c.gt] += c.d_feature / S(count);
            if (c.search_idx >= 0) grads->d_search[c.search_idx] += c.d_feature / S(count);
        }
    return total / S(count);
}

// ------------------------------------------------------------------------ //
// Detection loss (softmax cross-entropy + smooth-L1 box regression).

template <class S>
struct DetInputs {
    std::vector<Vec<S>> cls_logits;  // per proposal, [bg, person]
    std::vector<int> labels;         // 0/1, parallel to cls_logits
    std::vector<Vec<S>> reg_pred;    // per positive proposal
    std::vector<Vec<S>> reg_target;
};

template <class S>
struct DetGrads {
    std::vector<Vec<S>> d_cls;
    std::vector<Vec<S>> d_reg;
};

template <class S>
S detection_loss(const DetInputs<S>& det, DetGrads<S>* grads = nullptr) {
    S total = S(0);
    if (grads) {
        grads->d_cls.assign(det.cls_logits.size(), Vec<S>::Zero(2));
        grads->d_reg.assign(det.reg_pred.size(), Vec<S>::Zero(4));
    }
    if (!det.cls_logits.empty()) {
        const S inv_n = S(1) / S(det.cls_logits.size());
        for (size_t i = 0; i < det.cls_logits.size(); ++i) {
            const Vec<S>& logits = det.cls_logits[i];
            const S m = logits.maxCoeff();
            const Vec<S> ex = (logits.array() - m).exp();
            const S z = ex.sum();
            total += -(logits[det.labels[i]] - m - std::log(z)) * inv_n;
            if (grads) {
                Vec<S> p = ex / z;
                p[det.labels[i]] -= S(1);
                grads->d_cls[i] = p * inv_n;
            }
        }
    }
    if (!det.reg_pred.empty()) {
        const S inv_n = S(1) / S(det.reg_pred.size());
        for (size_t i = 0; i < det.reg_pred.size(); ++i) {
            for (int d = 0; d < 4; ++d) {
                const S x = det.reg_pred[i][d] - det.reg_target[i][d];
                const S ax = std::abs(x);
                total += (ax < S(1) ? S(0.5) * x * x : ax - S(0.5)) * inv_n;
                if (grads) grads->d_reg[i][d] = (ax < S(1) ? x : (x > S(0) ? S(1) : S(-1))) * inv_n;
            }
        }
    }
    return total;
}

// ------------------------------------------------------------------------ //

template <class S>
struct LossWeights {
    S mto = 1, o = 1, tri = 1, oim = 1, det = 1;
    S margin = S(0.3);
    S temperature = S(0.05);
    bool clamp_triplet = true;
};

template <class S>
struct LossReport {
    S l_mto = 0, l_o = 0, l_tri = 0, l_oim = 0, l_det = 0, l_c = 0, l_all = 0;
    LossFlags flags;
};

/// L_c = weighted sum of the four contrast terms (each already averaged over
/// its own population); L_all = L_c + L_det.
template <class S>
LossReport<S> combined_loss(const ContrastBatch<S>& batch, const Mat<S>& centroids,
                            const DetInputs<S>& det, const LossWeights<S>& w,
                            LossGrads<S>* grads = nullptr, DetGrads<S>* det_grads = nullptr) {
    LossReport<S> r;
    // Weighted gradients: scale per-term grads by running each term into its
    // own buffer when a weight differs from 1; the common all-ones case stays
    // single-pass.
    auto run = [&](auto&& fn, S weight) -> S {
        if (!grads || weight == S(1)) return weight * fn(grads);
        if (weight == S(0)) return fn(nullptr) * S(0);
        LossGrads<S> local;
        const S v = weight * fn(&local);
        grads->ensure(batch);
        for (size_t i = 0; i < local.d_search.size(); ++i)
            grads->d_search[i] += weight * local.d_search[i];
        for (size_t i = 0; i < local.d_instance.size(); ++i)
            grads->d_instance[i] += weight * local.d_instance[i];
        return v;
    };
    if (grads) grads->ensure(batch);
    r.l_mto = run([&](LossGrads<S>* g) { return many_to_one_loss(batch, g, &r.flags); }, w.mto);
    r.l_o = run([&](LossGrads<S>* g) { return occlusion_loss(batch, g, &r.flags); }, w.o);
    r.l_tri = run(
        [&](LossGrads<S>* g) {
            return triplet_loss(batch, w.margin, g, &r.flags, w.clamp_triplet);
        },
        w.tri);
    r.l_oim = run(
        [&](LossGrads<S>* g) { return oim_loss(batch, centroids, w.temperature, g, &r.flags); },
        w.oim);
    r.l_det = w.det * detection_loss(det, det_grads);
    if (det_grads && w.det != S(1)) {
        for (auto& g : det_grads->d_cls) g *= w.det;
        for (auto& g : det_grads->d_reg) g *= w.det;
    }
    r.l_c = r.l_mto + r.l_o + r.l_tri + r.l_oim;
    r.l_all = r.l_c + r.l_det;
    return r;
}

}  // namespace dicl

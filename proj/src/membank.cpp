#include "dicl/membank.hpp"

#include <algorithm>
#include <fstream>

namespace dicl {

namespace {

Eigen::VectorXd normalized(const Eigen::VectorXd& v) {
    const double n = v.norm();
    if (n == 0.0) throw BankError("zero-norm feature");
    return v / n;
}

}  // namespace

void MemoryBank::put(const InstanceKey& key, const Eigen::VectorXd& feature, std::int64_t step) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        Entry e;
        e.feature = normalized(feature);
        e.updated_step = step;
        entries_.emplace(key, std::move(e));
    } else {
        it->second.feature = normalized(feature);
        it->second.updated_step = step;
    }
}

void MemoryBank::update(const InstanceKey& key, const Eigen::VectorXd& new_feature,
                        std::int64_t step) {
    auto it = entries_.find(key);
    if (it == entries_.end())
        throw BankError("update for unknown instance (scene " + std::to_string(key.scene_id) +
                        ", box " + std::to_string(key.box_index) + ")");
    it->second.feature =
        normalized(cfg_.momentum * it->second.feature + (1.0 - cfg_.momentum) * new_feature);
    it->second.updated_step = step;
}

int MemoryBank::cluster_of(const InstanceKey& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? kOutlier : it->second.cluster;
}

std::vector<int> dbscan_cosine(const std::vector<Eigen::VectorXd>& features, double eps,
                               int min_samples) {
    const int n = static_cast<int>(features.size());
    std::vector<std::vector<int>> neighbors(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (1.0 - features[i].dot(features[j]) <= eps) neighbors[i].push_back(j);

    std::vector<bool> core(n);
    for (int i = 0; i < n; ++i) core[i] = static_cast<int>(neighbors[i].size()) >= min_samples;

    std::vector<int> label(n, kOutlier);
    int next = 0;
    for (int i = 0; i < n; ++i) {
        if (!core[i] || label[i] != kOutlier) continue;
        // BFS over density-reachable points, expanding through cores only.
        const int cluster = next++;
        std::vector<int> queue = {i};
        label[i] = cluster;
        while (!queue.empty()) {
            const int p = queue.back();
            queue.pop_back();
            if (!core[p]) continue;
            for (int q : neighbors[p])
                if (label[q] == kOutlier) {
                    label[q] = cluster;
                    queue.push_back(q);
                }
        }
    }
    return label;
}

void MemoryBank::recluster(double eps, int min_samples) {
    std::vector<InstanceKey> keys;
    std::vector<Eigen::VectorXd> feats;
    keys.reserve(entries_.size());
    for (const auto& [k, e] : entries_) {
        keys.push_back(k);
        feats.push_back(e.feature);
    }
    std::vector<int> label = dbscan_cosine(feats, eps, min_samples);

    // Cannot-link repair: within a cluster, a scene keeps only its member
    // closest to the centroid; the rest become outliers. Iterate because a
    // detachment moves the centroid.
    const int n = static_cast<int>(keys.size());
    bool changed = true;
    while (changed) {
        changed = false;
        std::map<int, Eigen::VectorXd> cent;
        std::map<int, int> count;
        for (int i = 0; i < n; ++i) {
            if (label[i] == kOutlier) continue;
            auto [it, fresh] = cent.try_emplace(label[i],
                                                Eigen::VectorXd::Zero(feats[i].size()));
            it->second += feats[i];
            ++count[label[i]];
        }
        for (auto& [c, v] : cent) v.normalize();

        std::map<std::pair<int, int>, int> keeper;  // (cluster, scene) -> index
        for (int i = 0; i < n; ++i) {
            if (label[i] == kOutlier) continue;
            const std::pair<int, int> slot{label[i], keys[i].scene_id};
            auto it = keeper.find(slot);
            if (it == keeper.end()) {
                keeper.emplace(slot, i);
                continue;
            }
            // Distance ties break toward the lower (earlier) key.
            const double d_old = 1.0 - feats[it->second].dot(cent[label[i]]);
            const double d_new = 1.0 - feats[i].dot(cent[label[i]]);
            if (d_new < d_old) {
                label[it->second] = kOutlier;
                it->second = i;
            } else {
                label[i] = kOutlier;
            }
            changed = true;
        }
    }

    if (!cfg_.allow_singletons) {
        std::map<int, int> count;
        for (int i = 0; i < n; ++i)
            if (label[i] != kOutlier) ++count[label[i]];
        for (int i = 0; i < n; ++i)
            if (label[i] != kOutlier && count[label[i]] < 2) label[i] = kOutlier;
    }

    // Compact cluster ids in order of first member so reruns are identical.
    std::map<int, int> remap;
    int next = 0;
    for (int i = 0; i < n; ++i) {
        if (label[i] == kOutlier) continue;
        auto [it, fresh] = remap.try_emplace(label[i], next);
        if (fresh) ++next;
        label[i] = it->second;
    }

    int i = 0;
    for (auto& [k, e] : entries_) e.cluster = label[i++];
    rebuild_centroids();
}

void MemoryBank::set_clusters_from_labels(const std::map<InstanceKey, int>& labels) {
    std::map<int, int> remap;
    int next = 0;
    for (auto& [k, e] : entries_) {
        auto it = labels.find(k);
        if (it == labels.end()) {
            e.cluster = kOutlier;
            continue;
        }
        auto [rit, fresh] = remap.try_emplace(it->second, next);
        if (fresh) ++next;
        e.cluster = rit->second;
    }
    rebuild_centroids();
}

void MemoryBank::rebuild_centroids() {
    centroids_.clear();
    std::map<int, Eigen::VectorXd> sum;
    for (const auto& [k, e] : entries_) {
        if (e.cluster == kOutlier) continue;
        auto [it, fresh] = sum.try_emplace(e.cluster, Eigen::VectorXd::Zero(e.feature.size()));
        it->second += e.feature;
    }
    for (auto& [c, v] : sum) centroids_[c] = v.normalized();
}

Eigen::MatrixXd MemoryBank::centroid_matrix() const {
    if (centroids_.empty()) return Eigen::MatrixXd();
    const int dim = static_cast<int>(centroids_.begin()->second.size());
    Eigen::MatrixXd m(static_cast<int>(centroids_.size()), dim);
    for (const auto& [c, v] : centroids_) m.row(c) = v.transpose();
    return m;
}

void MemoryBank::dump_assignments_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw BankError("cannot write " + path);
    out << "scene_id,box_index,cluster_id\n";
    for (const auto& [k, e] : entries_)
        out << k.scene_id << "," << k.box_index << "," << e.cluster << "\n";
}

}  // namespace dicl

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dicl {

struct BankError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InstanceKey {
    int scene_id = 0;
    int box_index = 0;
    auto operator<=>(const InstanceKey&) const = default;
};

inline constexpr int kOutlier = -1;

struct BankConfig {
    double eps = 0.5;        // cosine-distance DBSCAN radius
    int min_samples = 2;     // neighborhood size for a core point (incl. self)
    double momentum = 0.2;   // kept fraction of the stored feature per update
    bool allow_singletons = false;
};

/// Cluster-level re-id memory bank: one unit-norm feature per training
/// instance, epoch-level DBSCAN clustering with the per-scene cannot-link
/// prior, and momentum feature updates. Single-writer.
class MemoryBank {
public:
    struct Entry {
        Eigen::VectorXd feature;
        int cluster = kOutlier;
        std::int64_t updated_step = -1;
    };

    explicit MemoryBank(BankConfig cfg = {}) : cfg_(cfg) {}

    const BankConfig& config() const { return cfg_; }
    const std::map<InstanceKey, Entry>& entries() const { return entries_; }
    const std::map<int, Eigen::VectorXd>& centroids() const { return centroids_; }
    size_t size() const { return entries_.size(); }

    /// Inserts or replaces an instance feature (renormalized).
    void put(const InstanceKey& key, const Eigen::VectorXd& feature, std::int64_t step = -1);

    /// Momentum update: stored <- normalize(m*stored + (1-m)*new).
    void update(const InstanceKey& key, const Eigen::VectorXd& new_feature, std::int64_t step);

    int cluster_of(const InstanceKey& key) const;

    /// Cosine-distance DBSCAN followed by cannot-link repair (detach the
    /// member farther from the centroid until every cluster holds at most one
    /// instance per scene), then centroid recomputation. Deterministic and
    /// idempotent for unchanged features.
    void recluster(double eps, int min_samples);
    void recluster() { recluster(cfg_.eps, cfg_.min_samples); }

    /// Oracle-label bypass: clusters become the true identities.
    void set_clusters_from_labels(const std::map<InstanceKey, int>& labels);

    /// Centroid table as a dense matrix (row k = centroid of cluster k).
    Eigen::MatrixXd centroid_matrix() const;

    void dump_assignments_csv(const std::string& path) const;

private:
    void rebuild_centroids();

    BankConfig cfg_;
    std::map<InstanceKey, Entry> entries_;
    std::map<int, Eigen::VectorXd> centroids_;
};

/// Plain DBSCAN over cosine distance (1 - a.b on unit-norm features), before
/// any constraint repair. Exposed so tests can compare against a brute-force
/// oracle. Cluster ids are compacted in order of first (sorted-key) member.
std::vector<int> dbscan_cosine(const std::vector<Eigen::VectorXd>& features, double eps,
                               int min_samples);

}  // namespace dicl

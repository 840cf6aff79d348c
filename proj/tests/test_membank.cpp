#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <map>
#include <set>

#include "dicl/membank.hpp"
#include "dicl/rng.hpp"

using namespace dicl;

namespace {

Eigen::VectorXd unit_vec(std::initializer_list<double> v) {
    Eigen::VectorXd x(static_cast<int>(v.size()));
    int i = 0;
    for (double e : v) x[i++] = e;
    return x.normalized();
}

std::vector<Eigen::VectorXd> random_units(int n, int dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Eigen::VectorXd> out;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd v(dim);
        for (int d = 0; d < dim; ++d) v[d] = rng.normal();
        out.push_back(v.normalized());
    }
    return out;
}

// Independent DBSCAN oracle: explicit neighborhood sets, recursive expansion.
std::vector<int> dbscan_oracle(const std::vector<Eigen::VectorXd>& pts, double eps,
                               int min_samples) {
    const int n = static_cast<int>(pts.size());
    std::vector<std::vector<int>> nbr(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (1.0 - pts[i].dot(pts[j]) <= eps) nbr[i].push_back(j);
    std::vector<bool> core(n);
    for (int i = 0; i < n; ++i) core[i] = static_cast<int>(nbr[i].size()) >= min_samples;
    std::vector<int> label(n, -1);
    int next = 0;
    std::function<void(int, int)> grow = [&](int i, int cl) {
        for (int j : nbr[i]) {
            if (label[j] != -1) continue;
            label[j] = cl;
            if (core[j]) grow(j, cl);
        }
    };
    for (int i = 0; i < n; ++i) {
        if (label[i] != -1 || !core[i]) continue;
        label[i] = next;
        grow(i, next);
        ++next;
    }
    return label;
}

// Partition equality up to relabeling; noise (-1) must match exactly.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) return false;
    std::map<int, int> fwd, bwd;
    for (size_t i = 0; i < a.size(); ++i) {
        if ((a[i] == -1) != (b[i] == -1)) return false;
        if (a[i] == -1) continue;
        if (fwd.count(a[i]) && fwd[a[i]] != b[i]) return false;
        if (bwd.count(b[i]) && bwd[b[i]] != a[i]) return false;
        fwd[a[i]] = b[i];
        bwd[b[i]] = a[i];
    }
    return true;
}

}  // namespace

TEST_CASE("dbscan matches the brute-force oracle on 100 random banks") {
    for (int t = 0; t < 100; ++t) {
        Rng rng(9000 + t);
        const int n = static_cast<int>(rng.uniform_int(2, 30));
        // mixture of a few directions plus noise makes nontrivial clusters
        const auto centers = random_units(3, 8, 100 + t);
        std::vector<Eigen::VectorXd> pts;
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd v = centers[rng.uniform_int(0, 2)];
            for (int d = 0; d < v.size(); ++d) v[d] += rng.normal() * 0.3;
            pts.push_back(v.normalized());
        }
        const auto got = dbscan_cosine(pts, 0.5, 2);
        const auto want = dbscan_oracle(pts, 0.5, 2);
        CHECK(same_partition(got, want));
    }
}

TEST_CASE("dbscan separates two tight directions and flags outliers") {
    std::vector<Eigen::VectorXd> pts = {
        unit_vec({1, 0, 0}), unit_vec({0.99, 0.05, 0}), unit_vec({0.98, -0.05, 0}),
        unit_vec({0, 1, 0}), unit_vec({0.05, 0.99, 0}),
        unit_vec({0, 0, 1}),  // isolated
    };
    const auto labels = dbscan_cosine(pts, 0.1, 2);
    CHECK(labels[0] == labels[1]);
    CHECK(labels[1] == labels[2]);
    CHECK(labels[3] == labels[4]);
    CHECK(labels[0] != labels[3]);
    CHECK(labels[5] == kOutlier);
    // compacted ids start at 0 in first-member order
    CHECK(labels[0] == 0);
    CHECK(labels[3] == 1);
}

TEST_CASE("momentum update oracle") {
    MemoryBank bank;
    const InstanceKey k{1, 0};
    bank.put(k, unit_vec({1, 0}));
    bank.update(k, unit_vec({0, 1}), 1);
    const auto& f = bank.entries().at(k).feature;
    // normalize(0.2*[1,0] + 0.8*[0,1]) = [0.2425, 0.9701]
    CHECK(f[0] == doctest::Approx(0.242535625).epsilon(1e-6));
    CHECK(f[1] == doctest::Approx(0.970142500).epsilon(1e-6));
    CHECK(f.norm() == doctest::Approx(1.0));
    CHECK(bank.entries().at(k).updated_step == 1);
    CHECK_THROWS_AS(bank.update(InstanceKey{9, 9}, unit_vec({1, 0}), 2), BankError);
}

TEST_CASE("recluster enforces the cannot-link prior on 100 random banks") {
    for (int t = 0; t < 100; ++t) {
        Rng rng(4000 + t);
        MemoryBank bank;
        const auto centers = random_units(3, 8, 500 + t);
        const int n = static_cast<int>(rng.uniform_int(4, 24));
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd v = centers[rng.uniform_int(0, 2)];
            for (int d = 0; d < v.size(); ++d) v[d] += rng.normal() * 0.2;
            // few scenes, so same-scene collisions inside one cluster are likely
            bank.put(InstanceKey{static_cast<int>(rng.uniform_int(0, 3)), i}, v.normalized());
        }
        bank.recluster();
        std::map<int, std::set<int>> scenes_by_cluster;
        for (const auto& [key, e] : bank.entries()) {
            if (e.cluster == kOutlier) continue;
            // cannot-link: one instance per scene per cluster
            CHECK(scenes_by_cluster[e.cluster].insert(key.scene_id).second);
        }
        // dissolved singletons: every surviving cluster has >= 2 members
        std::map<int, int> sizes;
        for (const auto& [key, e] : bank.entries())
            if (e.cluster != kOutlier) ++sizes[e.cluster];
        for (const auto& [cl, sz] : sizes) CHECK(sz >= 2);
        // centroids are unit norm and cover exactly the surviving clusters
        for (const auto& [cl, c] : bank.centroids()) {
            CHECK(sizes.count(cl));
            CHECK(c.norm() == doctest::Approx(1.0));
        }
        const Eigen::MatrixXd table = bank.centroid_matrix();
        CHECK(table.rows() == static_cast<int>(sizes.size()));
    }
}

TEST_CASE("recluster is idempotent") {
    MemoryBank bank;
    Rng rng(11);
    const auto centers = random_units(2, 6, 77);
    for (int i = 0; i < 12; ++i) {
        Eigen::VectorXd v = centers[i % 2];
        for (int d = 0; d < v.size(); ++d) v[d] += rng.normal() * 0.15;
        bank.put(InstanceKey{i, 0}, v.normalized());
    }
    bank.recluster();
    std::map<InstanceKey, int> first;
    for (const auto& [k, e] : bank.entries()) first[k] = e.cluster;
    bank.recluster();
    for (const auto& [k, e] : bank.entries()) CHECK(e.cluster == first[k]);
}

TEST_CASE("allow_singletons keeps one-member clusters") {
    BankConfig cfg;
    cfg.allow_singletons = true;
    cfg.min_samples = 1;
    MemoryBank bank(cfg);
    bank.put(InstanceKey{0, 0}, unit_vec({1, 0, 0}));
    bank.put(InstanceKey{1, 0}, unit_vec({0, 1, 0}));
    bank.recluster();
    std::set<int> clusters;
    for (const auto& [k, e] : bank.entries()) {
        CHECK(e.cluster != kOutlier);
        clusters.insert(e.cluster);
    }
    CHECK(clusters.size() == 2);
}

TEST_CASE("oracle labels bypass clustering") {
    MemoryBank bank;
    bank.put(InstanceKey{0, 0}, unit_vec({1, 0}));
    bank.put(InstanceKey{0, 1}, unit_vec({0, 1}));
    bank.put(InstanceKey{1, 0}, unit_vec({1, 0.1}));
    std::map<InstanceKey, int> labels = {
        {{0, 0}, 7}, {{0, 1}, 3}, {{1, 0}, 7},
    };
    bank.set_clusters_from_labels(labels);
    // ids compacted: first sorted key {0,0} gets cluster 0
    CHECK(bank.cluster_of(InstanceKey{0, 0}) == 0);
    CHECK(bank.cluster_of(InstanceKey{1, 0}) == 0);
    CHECK(bank.cluster_of(InstanceKey{0, 1}) == 1);
    CHECK(bank.centroid_matrix().rows() == 2);
}

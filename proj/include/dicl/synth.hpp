#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dicl/geometry.hpp"
#include "dicl/image.hpp"

namespace dicl {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SynthConfig {
    int num_identities = 8;
    int train_scenes = 20;
    int test_scenes = 10;
    int image_w = 320;
    int image_h = 192;
    // Person height as a fraction of image height.
    double scale_min = 0.25;
    double scale_max = 0.55;
    double occluder_prob = 0.3;
    int min_persons = 2;
    int max_persons = 4;
    double min_separation = 0.35;  // identity appearance separation (L2)
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError naming the offending field
    static SynthConfig from_json_file(const std::string& path);
    void to_json_file(const std::string& path) const;
};

struct IdentitySpec {
    int identity_id = 0;
    Eigen::VectorXd appearance_params;  // see kAppearanceDim
};

// [head rgb, torso rgb, legs rgb, stripe freq, stripe phase, stripe amp]
inline constexpr int kAppearanceDim = 12;

struct SceneSample {
    int scene_id = 0;
    ImageU8 image;
    std::string image_path;  // relative to the manifest file
    std::vector<Box> boxes;
    std::vector<int> true_identity;  // synthesis/evaluation only
    std::vector<bool> occluded;      // occluder covers >= 10% of the box
    std::vector<Box> occluders;      // occluder geometry, for audits
};

enum class Split { train, test };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

struct DatasetManifest {
    Split split = Split::train;
    std::uint64_t seed = 0;
    std::vector<SceneSample> samples;
    std::vector<std::pair<int, int>> query_list;  // (scene_id, box_index), test only

    const SceneSample& scene_by_id(int scene_id) const;
    int total_boxes() const;
};

struct Dataset {
    DatasetManifest train;
    DatasetManifest test;
    std::vector<IdentitySpec> identities;
};

/// Deterministic appearance signatures; regenerating with the same seed is
/// bit-identical and any two identities are >= min_separation apart.
std::vector<IdentitySpec> make_identities(const SynthConfig& cfg);

Dataset synthesize_dataset(const SynthConfig& cfg);

/// Writes <dir>/<split>.json plus PNGs under <dir>/images/.
void write_annotations(const DatasetManifest& manifest, const std::string& dir);
DatasetManifest read_annotations(const std::string& manifest_path);

/// Replaces round(pixel_fraction*H*W) uniformly chosen pixels of every test
/// image with the per-image channel mean. Train split is rejected.
DatasetManifest make_masked_testset(const DatasetManifest& manifest, double pixel_fraction,
                                    std::uint64_t seed);

}  // namespace dicl

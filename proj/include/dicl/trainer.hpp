#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dicl/losses.hpp"
#include "dicl/membank.hpp"
#include "dicl/model.hpp"
#include "dicl/synth.hpp"

namespace dicl {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class MaskMode { none, search, instance, both };
enum class SicMode { gt_to_gt, pos_to_pos, many_to_one };

const char* mask_mode_name(MaskMode m);
const char* sic_mode_name(SicMode m);
MaskMode mask_mode_from_name(const std::string& s);
SicMode sic_mode_from_name(const std::string& s);

struct TrainConfig {
    std::string name = "default";

    int epochs = 12;
    double lr = 1e-3;
    std::vector<int> lr_decay_epochs = {8, 10};  // 0-based epoch index
    double lr_decay_factor = 0.1;
    double sgd_momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 4;
    int image_w = 0, image_h = 0;  // 0 = train at the dataset's native size

    // Occlusion masking
    double mask_prob = 0.5;
    int mask_max_cells = 2;
    MaskMode mask_mode = MaskMode::search;

    // Spatial-invariant contrast ablation switches
    SicMode sic_mode = SicMode::many_to_one;
    bool dense_triplet = true;
    double margin = 0.3;
    bool clamp_triplet = true;

    double assignment_threshold = 0.5;

    // Memory bank
    double bank_eps = 0.5;
    int bank_min_samples = 2;
    double bank_momentum = 0.2;
    double temperature = 0.05;
    bool oracle_labels = false;  // fully supervised bypass of clustering
    int recluster_every = 1;

    // Proposal stub
    int jitter_count = 3;
    double jitter_sigma = 0.1;
    int bg_count = 4;

    // Model
    int channels = 64;
    int emb_dim = 256;
    int instance_h = 224, instance_w = 96;

    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    /// Honors the DICL_SEED environment override.
    static TrainConfig from_json_file(const std::string& path);
    void to_json_file(const std::string& path) const;
    std::string config_hash() const;
};

double lr_at_epoch(const TrainConfig& cfg, int epoch);

/// Named ablation configurations mirroring the paper's switch tables:
/// baseline, +SIC, +SIC+OIC, the SIC component grid, the positives-to-
/// positives Siamese variant, and the mask-placement variants.
std::vector<TrainConfig> ablation_matrix(const TrainConfig& base);

struct StepMetrics {
    int epoch = 0;
    int step = 0;  // global step index
    double lr = 0;
    LossReport<double> report;
    int n_p = 0, n_o = 0;
};

/// Orchestrates the training loop: epoch-level re-extraction + clustering,
/// per-batch masking, dual-branch forward, combined loss, SGD step, and
/// memory bank updates.
class Trainer {
public:
    Trainer(const TrainConfig& cfg, const DatasetManifest& train_manifest);

    /// Builds the initial memory bank (averaged two-branch features) and the
    /// first cluster assignment.
    void initialize();

    void train_epoch();
    void train();  // initialize() if needed, then all epochs

    SiameseModel<double>& model() { return model_; }
    const SiameseModel<double>& model() const { return model_; }
    MemoryBank& bank() { return bank_; }
    const TrainConfig& config() const { return cfg_; }
    int epoch() const { return epoch_; }
    const std::vector<StepMetrics>& metrics() const { return metrics_; }

    /// JSON-lines metrics log; deterministic byte-for-byte under fixed seed.
    void set_metrics_path(const std::string& path);
    void save_checkpoint(const std::string& path) const;

private:
    struct SceneInputs {
        ImageU8 image;  // possibly resized to (image_w, image_h)
        std::vector<Box> boxes;
        int scene_id = 0;
    };

    SceneInputs scene_inputs(const SceneSample& s) const;
    void refresh_bank_features();
    void train_batch(const std::vector<int>& scene_indices, int step_in_epoch);
    void sgd_step(int accumulated_scenes);
    void log_step(const StepMetrics& m);

    TrainConfig cfg_;
    const DatasetManifest& manifest_;
    SiameseModel<double> model_;
    MemoryBank bank_;
    std::map<std::string, Mat<double>> momentum_;
    int epoch_ = 0;
    std::int64_t global_step_ = 0;
    bool initialized_ = false;
    std::vector<StepMetrics> metrics_;
    std::optional<std::ofstream> metrics_out_;
};

}  // namespace dicl

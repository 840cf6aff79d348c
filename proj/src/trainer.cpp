#include "dicl/trainer.hpp"

#include <cmath>
#include <cstdlib>

#include "dicl/assign.hpp"

namespace dicl {

namespace {

constexpr std::uint64_t kTagShuffle = 21;
constexpr std::uint64_t kTagMask = 22;
constexpr std::uint64_t kTagProposals = 23;

Vec<double> box_deltas(const Box& prop, const Box& gt) {
    Vec<double> d(4);
    const double pw = prop.width(), ph = prop.height();
    d[0] = (gt.x1 + 0.5 * gt.width() - (prop.x1 + 0.5 * pw)) / pw;
    d[1] = (gt.y1 + 0.5 * gt.height() - (prop.y1 + 0.5 * ph)) / ph;
    d[2] = std::log(gt.width() / pw);
    d[3] = std::log(gt.height() / ph);
    return d;
}

}  // namespace

const char* mask_mode_name(MaskMode m) {
    switch (m) {
        case MaskMode::none: return "none";
        case MaskMode::search: return "search";
        case MaskMode::instance: return "instance";
        case MaskMode::both: return "both";
    }
    return "none";
}

const char* sic_mode_name(SicMode m) {
    switch (m) {
        case SicMode::gt_to_gt: return "gt_to_gt";
        case SicMode::pos_to_pos: return "pos_to_pos";
        case SicMode::many_to_one: return "many_to_one";
    }
    return "many_to_one";
}

MaskMode mask_mode_from_name(const std::string& s) {
    if (s == "none") return MaskMode::none;
    if (s == "search") return MaskMode::search;
    if (s == "instance") return MaskMode::instance;
    if (s == "both") return MaskMode::both;
    throw ConfigError("mask_mode: unknown value '" + s + "'");
}

SicMode sic_mode_from_name(const std::string& s) {
    if (s == "gt_to_gt") return SicMode::gt_to_gt;
    if (s == "pos_to_pos") return SicMode::pos_to_pos;
    if (s == "many_to_one") return SicMode::many_to_one;
    throw ConfigError("sic_mode: unknown value '" + s + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs: must be >= 1");
    for (int d : lr_decay_epochs)
        if (d < 0 || d >= epochs) throw ConfigError("lr_decay_epochs: must be within [0, epochs)");
    if (lr <= 0) throw ConfigError("lr: must be positive");
    if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
    if (mask_prob < 0 || mask_prob > 1) throw ConfigError("mask_prob: must be in [0,1]");
    if (mask_max_cells < 0) throw ConfigError("mask_max_cells: must be >= 0");
    if (assignment_threshold <= 0 || assignment_threshold >= 1)
        throw ConfigError("assignment_threshold: must be in (0,1)");
    if (margin < 0) throw ConfigError("margin: must be >= 0");
    if (temperature <= 0) throw ConfigError("temperature: must be positive");
    if (bank_momentum < 0 || bank_momentum > 1)
        throw ConfigError("bank_momentum: must be in [0,1]");
    if (recluster_every < 1) throw ConfigError("recluster_every: must be >= 1");
    if (channels < 1 || emb_dim < 2) throw ConfigError("channels/emb_dim: too small");
    if (instance_h < 32 || instance_w < 32)
        throw ConfigError("instance_h/instance_w: must be >= 32");
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["epochs"] = epochs;
    j["lr"] = lr;
    j["lr_decay_epochs"] = lr_decay_epochs;
    j["lr_decay_factor"] = lr_decay_factor;
    j["sgd_momentum"] = sgd_momentum;
    j["weight_decay"] = weight_decay;
    j["batch_size"] = batch_size;
    j["image_w"] = image_w;
    j["image_h"] = image_h;
    j["mask_prob"] = mask_prob;
    j["mask_max_cells"] = mask_max_cells;
    j["mask_mode"] = mask_mode_name(mask_mode);
    j["sic_mode"] = sic_mode_name(sic_mode);
    j["dense_triplet"] = dense_triplet;
    j["margin"] = margin;
    j["clamp_triplet"] = clamp_triplet;
    j["assignment_threshold"] = assignment_threshold;
    j["bank_eps"] = bank_eps;
    j["bank_min_samples"] = bank_min_samples;
    j["bank_momentum"] = bank_momentum;
    j["temperature"] = temperature;
    j["oracle_labels"] = oracle_labels;
    j["recluster_every"] = recluster_every;
    j["jitter_count"] = jitter_count;
    j["jitter_sigma"] = jitter_sigma;
    j["bg_count"] = bg_count;
    j["channels"] = channels;
    j["emb_dim"] = emb_dim;
    j["instance_h"] = instance_h;
    j["instance_w"] = instance_w;
    j["seed"] = seed;
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.name = j.value("name", c.name);
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.lr_decay_epochs = j.value("lr_decay_epochs", c.lr_decay_epochs);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.sgd_momentum = j.value("sgd_momentum", c.sgd_momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.image_w = j.value("image_w", c.image_w);
    c.image_h = j.value("image_h", c.image_h);
    c.mask_prob = j.value("mask_prob", c.mask_prob);
    c.mask_max_cells = j.value("mask_max_cells", c.mask_max_cells);
    c.mask_mode = mask_mode_from_name(j.value("mask_mode", mask_mode_name(c.mask_mode)));
    c.sic_mode = sic_mode_from_name(j.value("sic_mode", sic_mode_name(c.sic_mode)));
    c.dense_triplet = j.value("dense_triplet", c.dense_triplet);
    c.margin = j.value("margin", c.margin);
    c.clamp_triplet = j.value("clamp_triplet", c.clamp_triplet);
    c.assignment_threshold = j.value("assignment_threshold", c.assignment_threshold);
    c.bank_eps = j.value("bank_eps", c.bank_eps);
    c.bank_min_samples = j.value("bank_min_samples", c.bank_min_samples);
    c.bank_momentum = j.value("bank_momentum", c.bank_momentum);
    c.temperature = j.value("temperature", c.temperature);
    c.oracle_labels = j.value("oracle_labels", c.oracle_labels);
    c.recluster_every = j.value("recluster_every", c.recluster_every);
    c.jitter_count = j.value("jitter_count", c.jitter_count);
    c.jitter_sigma = j.value("jitter_sigma", c.jitter_sigma);
    c.bg_count = j.value("bg_count", c.bg_count);
    c.channels = j.value("channels", c.channels);
    c.emb_dim = j.value("emb_dim", c.emb_dim);
    c.instance_h = j.value("instance_h", c.instance_h);
    c.instance_w = j.value("instance_w", c.instance_w);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open train config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed train config " + path + ": " + e.what());
    }
    TrainConfig c = from_json(j);
    if (const char* env = std::getenv("DICL_SEED")) c.seed = std::strtoull(env, nullptr, 10);
    return c;
}

void TrainConfig::to_json_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write train config: " + path);
    out << to_json().dump(2) << "\n";
}

std::string TrainConfig::config_hash() const {
    // FNV-1a over the canonical JSON form.
    const std::string s = to_json().dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    double lr = cfg.lr;
    for (int d : cfg.lr_decay_epochs)
        if (epoch >= d) lr *= cfg.lr_decay_factor;
    return lr;
}

std::vector<TrainConfig> ablation_matrix(const TrainConfig& base) {
    auto variant = [&](const std::string& name, SicMode sic, bool dense, MaskMode mask) {
        TrainConfig c = base;
        c.name = name;
        c.sic_mode = sic;
        c.dense_triplet = dense;
        c.mask_mode = mask;
        return c;
    };
    return {
        variant("baseline", SicMode::gt_to_gt, false, MaskMode::none),
        variant("sic", SicMode::many_to_one, true, MaskMode::none),
        variant("sic_oic", SicMode::many_to_one, true, MaskMode::search),
        variant("t3b_many_to_one_only", SicMode::many_to_one, false, MaskMode::none),
        variant("t3c_dense_only", SicMode::gt_to_gt, true, MaskMode::none),
        variant("t4b_pos_to_pos", SicMode::pos_to_pos, true, MaskMode::none),
        variant("t5c_mask_instance", SicMode::many_to_one, true, MaskMode::instance),
        variant("t5d_mask_both", SicMode::many_to_one, true, MaskMode::both),
    };
}

// ------------------------------------------------------------------------ //

Trainer::Trainer(const TrainConfig& cfg, const DatasetManifest& train_manifest)
    : cfg_(cfg), manifest_(train_manifest) {
    cfg_.validate();
    if (manifest_.split != Split::train)
        throw TrainError("Trainer requires the train split");
    ModelConfig mc;
    mc.channels = cfg_.channels;
    mc.emb_dim = cfg_.emb_dim;
    mc.instance_h = cfg_.instance_h;
    mc.instance_w = cfg_.instance_w;
    mc.init_seed = cfg_.seed;
    model_ = SiameseModel<double>(mc);
    BankConfig bc;
    bc.eps = cfg_.bank_eps;
    bc.min_samples = cfg_.bank_min_samples;
    bc.momentum = cfg_.bank_momentum;
    bank_ = MemoryBank(bc);
}

Trainer::SceneInputs Trainer::scene_inputs(const SceneSample& s) const {
    SceneInputs in;
    in.scene_id = s.scene_id;
    if (cfg_.image_w > 0 && cfg_.image_h > 0 &&
        (cfg_.image_w != s.image.w || cfg_.image_h != s.image.h)) {
        in.image = resize_image(s.image, cfg_.image_h, cfg_.image_w);
        const double sx = static_cast<double>(cfg_.image_w) / s.image.w;
        const double sy = static_cast<double>(cfg_.image_h) / s.image.h;
        for (const auto& b : s.boxes)
            in.boxes.push_back(Box{b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy});
    } else {
        in.image = s.image;
        in.boxes = s.boxes;
    }
    return in;
}

void Trainer::refresh_bank_features() {
    for (const auto& sample : manifest_.samples) {
        if (sample.boxes.empty()) continue;  // nothing to store
        const SceneInputs in = scene_inputs(sample);
        const Tensor3<double> img = to_tensor<double>(in.image);
        const Tensor3<double> feats = model_.extract_features(img);
        for (size_t j = 0; j < in.boxes.size(); ++j) {
            const Vec<double> s_emb = model_.region_forward(feats, in.boxes[j]).emb;
            const Vec<double> g_emb = model_.instance_forward(in.image, in.boxes[j]);
            bank_.put({sample.scene_id, static_cast<int>(j)}, (s_emb + g_emb).normalized(),
                      global_step_);
        }
    }
}

void Trainer::initialize() {
    refresh_bank_features();
    if (cfg_.oracle_labels) {
        std::map<InstanceKey, int> labels;
        for (const auto& s : manifest_.samples)
            for (size_t j = 0; j < s.boxes.size(); ++j)
                labels[{s.scene_id, static_cast<int>(j)}] = s.true_identity[j];
        bank_.set_clusters_from_labels(labels);
    } else {
        bank_.recluster();
    }
    initialized_ = true;
}

void Trainer::train_batch(const std::vector<int>& scene_indices, int step_in_epoch) {
    model_.zero_grad();
    const Eigen::MatrixXd centroids = bank_.centroid_matrix();
    LossReport<double> mean_report;
    int n_p_total = 0, n_o_total = 0;

    struct BankUpdate {
        InstanceKey key;
        Eigen::VectorXd feature;
    };
    std::vector<BankUpdate> bank_updates;

    for (int scene_idx : scene_indices) {
        const SceneSample& sample = manifest_.samples[scene_idx];
        const SceneInputs in = scene_inputs(sample);
        const int n_gt = static_cast<int>(in.boxes.size());
        if (n_gt == 0) continue;

        const std::uint64_t sid = static_cast<std::uint64_t>(sample.scene_id);
        const std::uint64_t ep = static_cast<std::uint64_t>(epoch_);
        const std::uint64_t st = static_cast<std::uint64_t>(step_in_epoch);

        const double prob = cfg_.mask_mode == MaskMode::none ? 0.0 : cfg_.mask_prob;
        const MaskPlan plan = plan_masks(in.boxes, prob, cfg_.mask_max_cells,
                                         derive_seed(cfg_.seed, {kTagMask, ep, st, sid}));
        const bool mask_search =
            cfg_.mask_mode == MaskMode::search || cfg_.mask_mode == MaskMode::both;
        const bool mask_instance =
            cfg_.mask_mode == MaskMode::instance || cfg_.mask_mode == MaskMode::both;
        const ImageU8 search_img = mask_search ? apply_masks(in.image, in.boxes, plan) : in.image;
        const ImageU8 instance_img =
            mask_instance ? apply_masks(in.image, in.boxes, plan) : in.image;

        // Proposals: per GT its own box plus jittered copies, then background.
        Rng prop_rng(derive_seed(cfg_.seed, {kTagProposals, ep, st, sid}));
        std::vector<Box> proposals;
        std::vector<bool> is_gt_prop;
        for (int j = 0; j < n_gt; ++j) {
            proposals.push_back(in.boxes[j]);
            is_gt_prop.push_back(true);
            for (const auto& b : jitter_box(in.boxes[j], cfg_.jitter_count, cfg_.jitter_sigma,
                                            in.image.w, in.image.h, prop_rng)) {
                proposals.push_back(b);
                is_gt_prop.push_back(false);
            }
        }
        for (const auto& b :
             sample_background_boxes(in.boxes, cfg_.bg_count, in.image.w, in.image.h, prop_rng)) {
            proposals.push_back(b);
            is_gt_prop.push_back(false);
        }
        const std::vector<AssignedPrediction> assigned =
            assign(proposals, in.boxes, cfg_.assignment_threshold);

        auto pass = model_.search_forward_train(to_tensor<double>(search_img), proposals);
        std::vector<typename SiameseModel<double>::InstancePass> inst_passes;
        for (int j = 0; j < n_gt; ++j)
            inst_passes.push_back(model_.instance_forward_train(
                crop_resize<double>(instance_img, in.boxes[j], cfg_.instance_h, cfg_.instance_w)));

        ContrastBatch<double> batch;
        for (size_t i = 0; i < proposals.size(); ++i) {
            SearchEmbedding<double> e;
            e.emb = pass.outs[i].emb;
            e.gt_index = assigned[i].gt_index;
            e.masked = mask_search && e.gt_index >= 0 && plan.applied(e.gt_index);
            e.is_gt_box = is_gt_prop[i] && e.gt_index >= 0;
            batch.search.push_back(std::move(e));
        }
        for (const auto& ip : inst_passes) batch.instance.push_back(ip.emb);
        for (int j = 0; j < n_gt; ++j)
            batch.pseudo_labels.push_back(bank_.cluster_of({sample.scene_id, j}));

        DetInputs<double> det;
        std::vector<int> reg_prop;  // proposal index per reg entry
        for (size_t i = 0; i < proposals.size(); ++i) {
            det.cls_logits.push_back(pass.outs[i].cls_logits);
            det.labels.push_back(assigned[i].gt_index >= 0 ? 1 : 0);
            if (assigned[i].gt_index >= 0) {
                det.reg_pred.push_back(pass.outs[i].reg);
                det.reg_target.push_back(box_deltas(proposals[i], in.boxes[assigned[i].gt_index]));
                reg_prop.push_back(static_cast<int>(i));
            }
        }

        // Loss assembly per the ablation switches.
        LossGrads<double> grads;
        grads.ensure(batch);
        DetGrads<double> det_grads;
        LossReport<double> r;

        if (cfg_.sic_mode == SicMode::many_to_one) {
            r.l_mto = many_to_one_loss(batch, &grads, &r.flags);
        } else if (cfg_.sic_mode == SicMode::gt_to_gt) {
            ContrastBatch<double> view = batch;
            for (auto& e : view.search)
                if (!e.is_gt_box) e.gt_index = -1;
            LossGrads<double> g2;
            r.l_mto = many_to_one_loss(view, &g2, &r.flags);
            for (size_t i = 0; i < g2.d_search.size(); ++i) grads.d_search[i] += g2.d_search[i];
            for (size_t i = 0; i < g2.d_instance.size(); ++i)
                grads.d_instance[i] += g2.d_instance[i];
        }
        // pos_to_pos is handled below (needs extra instance passes).
        std::vector<typename SiameseModel<double>::InstancePass> pos_passes;
        std::vector<int> pos_search_idx;
        if (cfg_.sic_mode == SicMode::pos_to_pos) {
            ContrastBatch<double> pos_batch;
            for (size_t i = 0; i < batch.search.size(); ++i) {
                const auto& e = batch.search[i];
                if (e.gt_index < 0 || e.masked) continue;
                Box b = clip_box(proposals[i], in.image.w, in.image.h);
                if (!b.valid()) continue;
                pos_passes.push_back(model_.instance_forward_train(
                    crop_resize<double>(instance_img, b, cfg_.instance_h, cfg_.instance_w)));
                SearchEmbedding<double> se;
                se.emb = e.emb;
                se.gt_index = static_cast<int>(pos_batch.instance.size());
                pos_batch.search.push_back(std::move(se));
                pos_batch.instance.push_back(pos_passes.back().emb);
                pos_search_idx.push_back(static_cast<int>(i));
            }
            LossGrads<double> g2;
            r.l_mto = many_to_one_loss(pos_batch, &g2, &r.flags);
            for (size_t k = 0; k < pos_batch.search.size(); ++k)
                grads.d_search[pos_search_idx[k]] += g2.d_search[k];
            for (size_t k = 0; k < pos_passes.size(); ++k)
                if (g2.d_instance[k].size())
                    model_.instance_backward(pos_passes[k], g2.d_instance[k]);
        }

        r.l_o = occlusion_loss(batch, &grads, &r.flags);
        if (cfg_.dense_triplet)
            r.l_tri = triplet_loss(batch, cfg_.margin, &grads, &r.flags, cfg_.clamp_triplet);
        r.l_oim = oim_loss(batch, centroids, cfg_.temperature, &grads, &r.flags);
        r.l_det = detection_loss(det, &det_grads);
        r.l_c = r.l_mto + r.l_o + r.l_tri + r.l_oim;
        r.l_all = r.l_c + r.l_det;

        if (!std::isfinite(r.l_all))
            throw TrainError("NaN/inf loss at epoch " + std::to_string(epoch_) + " step " +
                             std::to_string(step_in_epoch) + " scene " +
                             std::to_string(sample.scene_id) + " seed " +
                             std::to_string(cfg_.seed));

        // Backward through both branches.
        std::vector<typename SiameseModel<double>::RegionGrad> region_grads(proposals.size());
        for (size_t i = 0; i < proposals.size(); ++i) {
            region_grads[i].d_cls = det_grads.d_cls[i];
            if (grads.d_search[i].squaredNorm() > 0) region_grads[i].d_emb = grads.d_search[i];
        }
        for (size_t k = 0; k < reg_prop.size(); ++k)
            region_grads[reg_prop[k]].d_reg = det_grads.d_reg[k];
        model_.search_backward(pass, region_grads);
        for (int j = 0; j < n_gt; ++j)
            if (grads.d_instance[j].squaredNorm() > 0)
                model_.instance_backward(inst_passes[j], grads.d_instance[j]);

        // Bank updates (masked persons are excluded so the bank stays
        // occlusion-free).
        for (int j = 0; j < n_gt; ++j) {
            if (cfg_.mask_mode != MaskMode::none && plan.applied(j)) continue;
            int gt_box_pred = -1;
            for (size_t i = 0; i < batch.search.size(); ++i)
                if (batch.search[i].is_gt_box && batch.search[i].gt_index == j)
                    gt_box_pred = static_cast<int>(i);
            if (gt_box_pred < 0) continue;
            bank_updates.push_back(
                {{sample.scene_id, j},
                 (batch.search[gt_box_pred].emb + batch.instance[j]).normalized()});
        }

        int n_p = 0, n_o = 0;
        for (const auto& e : batch.search) {
            if (e.gt_index >= 0 && !e.masked) ++n_p;
            if (e.gt_index >= 0 && e.masked) ++n_o;
        }
        n_p_total += n_p;
        n_o_total += n_o;
        mean_report.l_mto += r.l_mto;
        mean_report.l_o += r.l_o;
        mean_report.l_tri += r.l_tri;
        mean_report.l_oim += r.l_oim;
        mean_report.l_det += r.l_det;
    }

    const int n_scenes = static_cast<int>(scene_indices.size());
    sgd_step(n_scenes);

    for (const auto& u : bank_updates) bank_.update(u.key, u.feature, global_step_);

    mean_report.l_mto /= n_scenes;
    mean_report.l_o /= n_scenes;
    mean_report.l_tri /= n_scenes;
    mean_report.l_oim /= n_scenes;
    mean_report.l_det /= n_scenes;
    mean_report.l_c = mean_report.l_mto + mean_report.l_o + mean_report.l_tri + mean_report.l_oim;
    mean_report.l_all = mean_report.l_c + mean_report.l_det;

    StepMetrics m;
    m.epoch = epoch_;
    m.step = static_cast<int>(global_step_);
    m.lr = lr_at_epoch(cfg_, epoch_);
    m.report = mean_report;
    m.n_p = n_p_total;
    m.n_o = n_o_total;
    log_step(m);
    ++global_step_;
}

void Trainer::sgd_step(int accumulated_scenes) {
    const double lr = lr_at_epoch(cfg_, epoch_);
    const double scale = 1.0 / std::max(1, accumulated_scenes);
    model_.visit_params([&](const std::string& name, auto& p, auto& g) {
        auto [it, fresh] = momentum_.try_emplace(name, Mat<double>::Zero(p.rows(), p.cols()));
        Mat<double>& v = it->second;
        v = cfg_.sgd_momentum * v + (scale * g + cfg_.weight_decay * p);
        p -= lr * v;
    });
}

void Trainer::train_epoch() {
    if (!initialized_) throw TrainError("train_epoch: bank not initialized");
    if (epoch_ >= cfg_.epochs) throw TrainError("train_epoch: schedule exhausted");

    if (epoch_ % cfg_.recluster_every == 0) {
        if (global_step_ > 0) refresh_bank_features();
        if (cfg_.oracle_labels) {
            std::map<InstanceKey, int> labels;
            for (const auto& s : manifest_.samples)
                for (size_t j = 0; j < s.boxes.size(); ++j)
                    labels[{s.scene_id, static_cast<int>(j)}] = s.true_identity[j];
            bank_.set_clusters_from_labels(labels);
        } else {
            bank_.recluster();
        }
    }

    std::vector<int> order(manifest_.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(derive_seed(cfg_.seed, {kTagShuffle, static_cast<std::uint64_t>(epoch_)}));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(0, i)]);

    int step_in_epoch = 0;
    for (size_t start = 0; start < order.size(); start += cfg_.batch_size) {
        std::vector<int> batch(order.begin() + start,
                               order.begin() + std::min(order.size(),
                                                        start + cfg_.batch_size));
        train_batch(batch, step_in_epoch++);
    }
    ++epoch_;
}

void Trainer::train() {
    if (!initialized_) initialize();
    while (epoch_ < cfg_.epochs) train_epoch();
}

void Trainer::set_metrics_path(const std::string& path) {
    metrics_out_.emplace(path);
    if (!*metrics_out_) throw TrainError("cannot open metrics log: " + path);
}

void Trainer::log_step(const StepMetrics& m) {
    metrics_.push_back(m);
    if (!metrics_out_) return;
    nlohmann::json j;
    j["epoch"] = m.epoch;
    j["step"] = m.step;
    j["lr"] = m.lr;
    j["l_mto"] = m.report.l_mto;
    j["l_o"] = m.report.l_o;
    j["l_tri"] = m.report.l_tri;
    j["l_oim"] = m.report.l_oim;
    j["l_det"] = m.report.l_det;
    j["l_c"] = m.report.l_c;
    j["l_all"] = m.report.l_all;
    j["n_p"] = m.n_p;
    j["n_o"] = m.n_o;
    *metrics_out_ << j.dump() << "\n";
    metrics_out_->flush();
}

void Trainer::save_checkpoint(const std::string& path) const {
    nlohmann::json meta;
    meta["config_hash"] = cfg_.config_hash();
    meta["epoch"] = epoch_;
    meta["seed"] = cfg_.seed;
    meta["config"] = cfg_.to_json();
    const_cast<SiameseModel<double>&>(model_).save(path, meta);
}

}  // namespace dicl

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicl/image.hpp"
#include "dicl/layers.hpp"
#include "dicl/roi_align.hpp"

namespace dicl {

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    int channels = 64;  // backbone/head width
    int emb_dim = 256;
    int pool_h = 14, pool_w = 6;
    int instance_h = 224, instance_w = 96;  // fixed instance-branch crop size
    double nms_iou = 0.5;
    double score_thresh = 0.3;
    std::uint64_t init_seed = 0;
};

template <class S>
struct DetectionOutput {
    std::vector<Box> boxes;
    std::vector<double> scores;
    std::vector<Vec<S>> embeddings;
};

template <class S>
struct BackboneCache {
    ConvCache<S> conv[4];
    ReluCache<S> act[4];
};

template <class S>
struct RegionOut {
    Vec<S> cls_logits;  // [background, person]
    Vec<S> reg;         // (dx, dy, dw, dh)
    Vec<S> emb;         // unit-norm
};

template <class S>
struct RegionCache {
    RoiCache<S> roi;
    ConvCache<S> conv[3];
    ReluCache<S> act[3];
    LinearCache<S> cls, reg, reid;
    L2NormCache<S> norm;
    int feat_h = 0, feat_w = 0;
};

/// Greedy NMS over score-sorted boxes; returns surviving indices.
inline std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                            double iou_thresh) {
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    std::vector<int> keep;
    std::vector<bool> dead(boxes.size(), false);
    for (int i : order) {
        if (dead[i]) continue;
        keep.push_back(i);
        for (int j : order)
            if (!dead[j] && j != i && iou(boxes[i], boxes[j]) >= iou_thresh) dead[j] = true;
    }
    return keep;
}

/// Two-branch Siamese network. The head (3x3 convs + cls/reg/re-id linears)
/// is one parameter set shared by the search and instance paths.
template <class S>
class SiameseModel {
public:
    SiameseModel() = default;

    explicit SiameseModel(const ModelConfig& cfg) : cfg_(cfg) {
        Rng rng(derive_seed(cfg.init_seed, {0x5eed}));
        const int C = cfg.channels;
        backbone_[0].init(3, C, 2, rng);
        for (int i = 1; i < 4; ++i) backbone_[i].init(C, C, 2, rng);
        for (int i = 0; i < 3; ++i) head_conv_[i].init(C, C, 1, rng);
        const int flat = C * cfg.pool_h * cfg.pool_w;
        fc_cls_.init(flat, 2, rng);
        fc_reg_.init(flat, 4, rng);
        fc_reid_.init(flat, cfg.emb_dim, rng);
    }

    const ModelConfig& config() const { return cfg_; }

    // ------------------------------------------------------------------ //

    /// Stride-16 feature extraction; input is zero-padded to a multiple of 16.
    Tensor3<S> extract_features(const Tensor3<S>& image, BackboneCache<S>* cache = nullptr) const {
        if (image.h < 32 || image.w < 32)
            throw InputError("extract_features: image smaller than 32x32");
        Tensor3<S> x = pad16(image);
        for (int i = 0; i < 4; ++i) {
            x = backbone_[i].forward(x, cache ? &cache->conv[i] : nullptr);
            x = relu(x, cache ? &cache->act[i] : nullptr);
        }
        return x;
    }

    void backbone_backward(const BackboneCache<S>& cache, const Tensor3<S>& d_feats) {
        Tensor3<S> g = d_feats;
        Tensor3<S> tmp;
        for (int i = 3; i >= 0; --i) {
            tmp = g;
            relu_backward(tmp, cache.act[i], &g);
            backbone_[i].backward(g, cache.conv[i], i > 0 ? &tmp : nullptr);
            if (i > 0) g = std::move(tmp);
        }
    }

    Tensor3<S> pool_region(const Tensor3<S>& feats, const Box& box,
                           RoiCache<S>* cache = nullptr) const {
        return roi_align(feats, box, 1.0 / 16.0, cfg_.pool_h, cfg_.pool_w, cache);
    }

    RegionOut<S> region_forward(const Tensor3<S>& feats, const Box& box,
                                RegionCache<S>* cache = nullptr) const {
        RegionCache<S> local;
        RegionCache<S>& c = cache ? *cache : local;
        c.feat_h = feats.h;
        c.feat_w = feats.w;
        Tensor3<S> x = pool_region(feats, box, cache ? &c.roi : nullptr);
        for (int i = 0; i < 3; ++i) {
            x = head_conv_[i].forward(x, cache ? &c.conv[i] : nullptr);
            x = relu(x, cache ? &c.act[i] : nullptr);
        }
        const Vec<S> flat = x.flat();
        RegionOut<S> out;
        out.cls_logits = fc_cls_.forward(flat, cache ? &c.cls : nullptr);
        out.reg = fc_reg_.forward(flat, cache ? &c.reg : nullptr);
        out.emb = l2_normalize(fc_reid_.forward(flat, cache ? &c.reid : nullptr),
                               cache ? &c.norm : nullptr);
        return out;
    }

    /// Accumulates head parameter grads and adds the region's contribution to
    /// d_feats. Any of the output grads may be empty (treated as zero).
    void region_backward(const RegionCache<S>& cache, const Vec<S>& d_cls, const Vec<S>& d_reg,
                         const Vec<S>& d_emb, Tensor3<S>* d_feats) {
        const int flat_len = cfg_.channels * cfg_.pool_h * cfg_.pool_w;
        Vec<S> gflat = Vec<S>::Zero(flat_len);
        Vec<S> gin;
        if (d_cls.size()) {
            fc_cls_.backward(d_cls, cache.cls, &gin);
            gflat += gin;
        }
        if (d_reg.size()) {
            fc_reg_.backward(d_reg, cache.reg, &gin);
            gflat += gin;
        }
        if (d_emb.size()) {
            const Vec<S> d_pre = l2_normalize_backward(d_emb, cache.norm);
            fc_reid_.backward(d_pre, cache.reid, &gin);
            gflat += gin;
        }
        Tensor3<S> g(cfg_.channels, cfg_.pool_h, cfg_.pool_w);
        g.flat() = gflat;
        Tensor3<S> tmp;
        for (int i = 2; i >= 0; --i) {
            tmp = g;
            relu_backward(tmp, cache.act[i], &g);
            head_conv_[i].backward(g, cache.conv[i], &tmp);
            g = std::move(tmp);
        }
        if (d_feats) roi_align_backward(g, cache.roi, d_feats);
    }

    // ------------------------------------------------------------------ //

    struct SearchPass {
        BackboneCache<S> bb;
        Tensor3<S> feats;
        std::vector<Box> proposals;
        std::vector<RegionCache<S>> regions;
        std::vector<RegionOut<S>> outs;
    };

    SearchPass search_forward_train(const Tensor3<S>& image, const std::vector<Box>& proposals) {
        SearchPass p;
        p.proposals = proposals;
        p.feats = extract_features(image, &p.bb);
        p.regions.resize(proposals.size());
        p.outs.reserve(proposals.size());
        for (size_t i = 0; i < proposals.size(); ++i)
            p.outs.push_back(region_forward(p.feats, proposals[i], &p.regions[i]));
        return p;
    }

    struct RegionGrad {
        Vec<S> d_cls, d_reg, d_emb;  // empty == zero
    };

    void search_backward(const SearchPass& pass, const std::vector<RegionGrad>& grads) {
        Tensor3<S> d_feats(pass.feats.c, pass.feats.h, pass.feats.w);
        for (size_t i = 0; i < pass.regions.size(); ++i) {
            const auto& g = grads[i];
            if (!g.d_cls.size() && !g.d_reg.size() && !g.d_emb.size()) continue;
            region_backward(pass.regions[i], g.d_cls, g.d_reg, g.d_emb, &d_feats);
        }
        backbone_backward(pass.bb, d_feats);
    }

    /// Spec-facing forward: all proposals in train mode; score threshold,
    /// box refinement, and NMS in eval mode.
    DetectionOutput<S> search_forward(const Tensor3<S>& image, const std::vector<Box>& proposals,
                                      bool train_mode) const {
        DetectionOutput<S> out;
        if (proposals.empty()) return out;
        const Tensor3<S> feats = extract_features(image);
        const double img_w = image.w, img_h = image.h;
        std::vector<Box> boxes;
        std::vector<double> scores;
        std::vector<Vec<S>> embs;
        for (const auto& prop : proposals) {
            RegionOut<S> r = region_forward(feats, prop);
            const double score = person_score(r.cls_logits);
            Box b = train_mode ? prop : clip_box(apply_deltas(prop, r.reg), img_w, img_h);
            boxes.push_back(b);
            scores.push_back(score);
            embs.push_back(std::move(r.emb));
        }
        if (train_mode) {
            out.boxes = std::move(boxes);
            out.scores = std::move(scores);
            out.embeddings = std::move(embs);
            return out;
        }
        std::vector<int> kept;
        for (size_t i = 0; i < boxes.size(); ++i)
            if (scores[i] >= cfg_.score_thresh && boxes[i].valid()) kept.push_back(static_cast<int>(i));
        std::vector<Box> kb;
        std::vector<double> ks;
        for (int i : kept) {
            kb.push_back(boxes[i]);
            ks.push_back(scores[i]);
        }
        for (int i : nms(kb, ks, cfg_.nms_iou)) {
            out.boxes.push_back(kb[i]);
            out.scores.push_back(ks[i]);
            out.embeddings.push_back(embs[kept[i]]);
        }
        return out;
    }

    // ------------------------------------------------------------------ //

    struct InstancePass {
        BackboneCache<S> bb;
        Tensor3<S> feats;
        RegionCache<S> region;
        Vec<S> emb;
    };

    /// Instance branch: a fixed-size crop through the shared backbone, pooled
    /// over its full extent to the head's 14x6 grid, re-id output only.
    InstancePass instance_forward_train(const Tensor3<S>& crop) {
        check_crop(crop);
        InstancePass p;
        p.feats = extract_features(crop, &p.bb);
        const Box full{0, 0, static_cast<double>(crop.w), static_cast<double>(crop.h)};
        p.emb = region_forward(p.feats, full, &p.region).emb;
        return p;
    }

    void instance_backward(const InstancePass& pass, const Vec<S>& d_emb) {
        Tensor3<S> d_feats(pass.feats.c, pass.feats.h, pass.feats.w);
        region_backward(pass.region, Vec<S>(), Vec<S>(), d_emb, &d_feats);
        backbone_backward(pass.bb, d_feats);
    }

    Vec<S> instance_forward(const Tensor3<S>& crop) const {
        check_crop(crop);
        const Tensor3<S> feats = extract_features(crop);
        const Box full{0, 0, static_cast<double>(crop.w), static_cast<double>(crop.h)};
        return region_forward(feats, full).emb;
    }

    Vec<S> instance_forward(const ImageU8& image, const Box& box) const {
        return instance_forward(crop_resize<S>(image, box, cfg_.instance_h, cfg_.instance_w));
    }

    // ------------------------------------------------------------------ //

    static double person_score(const Vec<S>& cls_logits) {
        const double a = static_cast<double>(cls_logits[0]);
        const double b = static_cast<double>(cls_logits[1]);
        const double m = std::max(a, b);
        return std::exp(b - m) / (std::exp(a - m) + std::exp(b - m));
    }

    static Box apply_deltas(const Box& prop, const Vec<S>& d) {
        const double pw = prop.width(), ph = prop.height();
        const double cx = prop.x1 + 0.5 * pw + static_cast<double>(d[0]) * pw;
        const double cy = prop.y1 + 0.5 * ph + static_cast<double>(d[1]) * ph;
        const double w = pw * std::exp(std::clamp(static_cast<double>(d[2]), -4.0, 4.0));
        const double h = ph * std::exp(std::clamp(static_cast<double>(d[3]), -4.0, 4.0));
        return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    }

    template <class F>
    void visit_params(F&& f) {
        for (int i = 0; i < 4; ++i) {
            f("backbone.conv" + std::to_string(i) + ".weight", backbone_[i].weight,
              backbone_[i].gweight);
            f("backbone.conv" + std::to_string(i) + ".bias", backbone_[i].bias,
              backbone_[i].gbias);
        }
        for (int i = 0; i < 3; ++i) {
            f("head.conv" + std::to_string(i) + ".weight", head_conv_[i].weight,
              head_conv_[i].gweight);
            f("head.conv" + std::to_string(i) + ".bias", head_conv_[i].bias, head_conv_[i].gbias);
        }
        f("head.cls.weight", fc_cls_.weight, fc_cls_.gweight);
        f("head.cls.bias", fc_cls_.bias, fc_cls_.gbias);
        f("head.reg.weight", fc_reg_.weight, fc_reg_.gweight);
        f("head.reg.bias", fc_reg_.bias, fc_reg_.gbias);
        f("head.reid.weight", fc_reid_.weight, fc_reid_.gweight);
        f("head.reid.bias", fc_reid_.bias, fc_reid_.gbias);
    }

    void zero_grad() {
        visit_params([](const std::string&, auto& p, auto& g) {
            (void)p;
            g.setZero();
        });
    }

    // ------------------------------------------------------------------ //
    // Checkpoint: "DICL1" magic, one JSON metadata line, then per tensor a
    // name line, int64 rows/cols, and row-major float64 payload.

    void save(const std::string& path, const nlohmann::json& metadata) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
        out << "DICL1\n" << metadata.dump() << "\n";
        visit_params([&](const std::string& name, auto& p, auto&) {
            out << name << "\n";
            const std::int64_t rows = p.rows(), cols = p.cols();
            out.write(reinterpret_cast<const char*>(&rows), 8);
            out.write(reinterpret_cast<const char*>(&cols), 8);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < cols; ++c) {
                    const double v = static_cast<double>(p(r, c));
                    out.write(reinterpret_cast<const char*>(&v), 8);
                }
        });
    }

    nlohmann::json load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
        std::string magic, meta_line;
        std::getline(in, magic);
        if (magic != "DICL1") throw std::runtime_error("bad checkpoint magic in " + path);
        std::getline(in, meta_line);
        const nlohmann::json metadata = nlohmann::json::parse(meta_line);
        visit_params([&](const std::string& name, auto& p, auto&) {
            std::string stored;
            std::getline(in, stored);
            if (stored != name)
                throw std::runtime_error("checkpoint tensor mismatch: expected " + name +
                                         ", found " + stored);
            std::int64_t rows = 0, cols = 0;
            in.read(reinterpret_cast<char*>(&rows), 8);
            in.read(reinterpret_cast<char*>(&cols), 8);
            if (rows != p.rows() || cols != p.cols())
                throw std::runtime_error("checkpoint shape mismatch for " + name);
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t c = 0; c < cols; ++c) {
                    double v;
                    in.read(reinterpret_cast<char*>(&v), 8);
                    p(r, c) = static_cast<S>(v);
                }
        });
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
        return metadata;
    }

private:
    static Tensor3<S> pad16(const Tensor3<S>& x) {
        const int ph = (x.h + 15) / 16 * 16, pw = (x.w + 15) / 16 * 16;
        if (ph == x.h && pw == x.w) return x;
        Tensor3<S> out(x.c, ph, pw);
        for (int y = 0; y < x.h; ++y)
            out.data.middleCols(y * pw, x.w) = x.data.middleCols(y * x.w, x.w);
        return out;
    }

    void check_crop(const Tensor3<S>& crop) const {
        if (crop.h != cfg_.instance_h || crop.w != cfg_.instance_w)
            throw InputError("instance_forward: crop must be " + std::to_string(cfg_.instance_h) +
                             "x" + std::to_string(cfg_.instance_w));
    }

    ModelConfig cfg_;
    Conv2d<S> backbone_[4];
    Conv2d<S> head_conv_[3];
    Linear<S> fc_cls_, fc_reg_, fc_reid_;
};

// ---------------------------------------------------------------------- //
// Proposal stub (no RPN): ground-truth boxes plus jittered copies for
// positives, random non-overlapping boxes for background.

inline std::vector<Box> jitter_box(const Box& gt, int count, double sigma_frac, double img_w,
                                   double img_h, Rng& rng) {
    std::vector<Box> out;
    for (int i = 0; i < count; ++i) {
        const double w = gt.width(), h = gt.height();
        const double cx = gt.x1 + 0.5 * w + rng.normal(0.0, sigma_frac * w);
        const double cy = gt.y1 + 0.5 * h + rng.normal(0.0, sigma_frac * h);
        const double nw = std::max(4.0, w * (1.0 + rng.normal(0.0, sigma_frac)));
        const double nh = std::max(4.0, h * (1.0 + rng.normal(0.0, sigma_frac)));
        Box b = clip_box(Box{cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh}, img_w,
                         img_h);
        if (!b.valid()) b = gt;
        out.push_back(b);
    }
    return out;
}

inline std::vector<Box> sample_background_boxes(const std::vector<Box>& gt_boxes, int count,
                                                double img_w, double img_h, Rng& rng) {
    std::vector<Box> out;
    for (int i = 0; i < count; ++i) {
        Box best{0, 0, std::min(16.0, img_w), std::min(24.0, img_h)};
        for (int attempt = 0; attempt < 30; ++attempt) {
            const double w = rng.uniform(0.05, 0.3) * img_w;
            const double h = rng.uniform(0.1, 0.5) * img_h;
            const double x1 = rng.uniform(0.0, img_w - w);
            const double y1 = rng.uniform(0.0, img_h - h);
            const Box b{x1, y1, x1 + w, y1 + h};
            bool clear = true;
            for (const auto& gt : gt_boxes)
                if (iou(b, gt) >= 0.3) {
                    clear = false;
                    break;
                }
            if (clear) {
                best = b;
                break;
            }
        }
        out.push_back(best);
    }
    return out;
}

}  // namespace dicl

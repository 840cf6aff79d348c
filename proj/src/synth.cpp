#include "dicl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "dicl/png_io.hpp"
#include "dicl/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dicl {

namespace {

constexpr int kMinBoxH = 16;
constexpr int kMinBoxW = 8;
constexpr double kAspect = 0.42;  // person width / height

constexpr std::uint64_t kTagIdentities = 11;
constexpr std::uint64_t kTagDeal = 12;
constexpr std::uint64_t kTagScene = 13;
constexpr std::uint64_t kTagRender = 14;

std::uint64_t split_tag(Split s) { return s == Split::train ? 1 : 2; }

int scene_id_base(Split s) { return s == Split::train ? 0 : 1000000; }

struct PersonPlan {
    int identity = 0;
    int x1 = 0, y1 = 0, h = 0, w = 0;
};

struct OccluderPlan {
    int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double gray = 0.5;
};

struct ScenePlan {
    int scene_id = 0;
    Split split = Split::train;
    std::vector<PersonPlan> persons;
    std::vector<OccluderPlan> occluders;
};

Box plan_box(const PersonPlan& p) {
    return Box{static_cast<double>(p.x1), static_cast<double>(p.y1),
               static_cast<double>(p.x1 + p.w), static_cast<double>(p.y1 + p.h)};
}

int person_width(int h) { return std::max(kMinBoxW, static_cast<int>(std::lround(kAspect * h))); }

/// Deals identities so per-identity counts across the whole dataset differ by
/// at most one (shuffled deck, refilled when empty, no repeats in a scene).
class IdentityDeck {
public:
    IdentityDeck(int num_ids, Rng& rng) : num_ids_(num_ids), rng_(rng) { refill(); }

    std::vector<int> deal(int k) {
        std::vector<int> out;
        std::vector<int> skipped;
        while (static_cast<int>(out.size()) < k) {
            if (deck_.empty()) refill();
            int id = deck_.back();
            deck_.pop_back();
            if (std::find(out.begin(), out.end(), id) != out.end())
                skipped.push_back(id);
            else
                out.push_back(id);
        }
        // Return skipped cards to the bottom to keep counts balanced.
        deck_.insert(deck_.begin(), skipped.begin(), skipped.end());
        return out;
    }

private:
    void refill() {
        std::vector<int> fresh(num_ids_);
        for (int i = 0; i < num_ids_; ++i) fresh[i] = i;
        for (int i = num_ids_ - 1; i > 0; --i)
            std::swap(fresh[i], fresh[rng_.uniform_int(0, i)]);
        deck_.insert(deck_.begin(), fresh.begin(), fresh.end());
    }

    int num_ids_;
    Rng& rng_;
    std::vector<int> deck_;
};

void plan_scene_geometry(ScenePlan& plan, const SynthConfig& cfg,
                         const std::vector<int>& identities) {
    Rng rng(derive_seed(cfg.seed, {kTagScene, split_tag(plan.split),
                                   static_cast<std::uint64_t>(plan.scene_id)}));
    const double band_mid = 0.5 * (cfg.scale_min + cfg.scale_max);
    for (int id : identities) {
        PersonPlan p;
        p.identity = id;
        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
            const bool high = rng.bernoulli(0.5);
            const double frac = high ? rng.uniform(band_mid, cfg.scale_max)
                                     : rng.uniform(cfg.scale_min, band_mid);
            p.h = std::max(kMinBoxH, static_cast<int>(std::lround(frac * cfg.image_h)));
            p.h = std::min(p.h, cfg.image_h);
            p.w = std::min(person_width(p.h), cfg.image_w);
            p.x1 = static_cast<int>(rng.uniform_int(0, cfg.image_w - p.w));
            p.y1 = static_cast<int>(rng.uniform_int(0, cfg.image_h - p.h));
            placed = true;
            for (const auto& q : plan.persons)
                if (iou(plan_box(p), plan_box(q)) > 0.3) {
                    placed = false;
                    break;
                }
        }
        plan.persons.push_back(p);  // last attempt kept even if crowded
    }
    // Occluders are placed fully inside their person's box so each covers
    // between ~12% and ~30% of it.
    for (const auto& p : plan.persons) {
        if (!rng.bernoulli(cfg.occluder_prob)) continue;
        OccluderPlan o;
        const int ow = std::max(2, static_cast<int>(std::lround(rng.uniform(0.35, 0.55) * p.w)));
        const int oh = std::max(2, static_cast<int>(std::lround(rng.uniform(0.35, 0.55) * p.h)));
        o.x1 = p.x1 + static_cast<int>(rng.uniform_int(0, p.w - ow));
        o.y1 = p.y1 + static_cast<int>(rng.uniform_int(0, p.h - oh));
        o.x2 = o.x1 + ow;
        o.y2 = o.y1 + oh;
        o.gray = rng.uniform(0.35, 0.65);
        plan.occluders.push_back(o);
    }
}

/// Guarantees every identity appears at >= 2 distinct pixel heights across
/// the dataset by nudging the second instance when all heights coincide.
void repair_scales(std::vector<ScenePlan>& plans, const SynthConfig& cfg) {
    std::map<int, std::vector<PersonPlan*>> by_id;
    for (auto& plan : plans)
        for (auto& p : plan.persons) by_id[p.identity].push_back(&p);
    for (auto& [id, instances] : by_id) {
        if (instances.size() < 2) continue;
        bool distinct = false;
        for (size_t i = 1; i < instances.size() && !distinct; ++i)
            distinct = instances[i]->h != instances[0]->h;
        if (distinct) continue;
        PersonPlan* p = instances[1];
        const int delta = std::max(8, p->h / 4);
        int nh = p->h + delta;
        if (nh > cfg.image_h || p->y1 + nh > cfg.image_h) nh = p->h - delta;
        nh = std::max(kMinBoxH, nh);
        p->h = nh;
        p->w = std::min(person_width(nh), cfg.image_w);
        p->x1 = std::min(p->x1, cfg.image_w - p->w);
        p->y1 = std::min(p->y1, cfg.image_h - p->h);
    }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

ImageU8 render_scene(const ScenePlan& plan, const std::vector<IdentitySpec>& identities,
                     const SynthConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, {kTagRender, split_tag(plan.split),
                                   static_cast<std::uint64_t>(plan.scene_id)}));
    const int H = cfg.image_h, W = cfg.image_w;
    std::vector<double> buf(static_cast<size_t>(H) * W * 3, 0.0);
    auto at = [&](int y, int x, int c) -> double& {
        return buf[(static_cast<size_t>(y) * W + x) * 3 + c];
    };

    // Background: bilinearly upsampled coarse color grid + fine noise.
    const int gh = 6, gw = 10;
    std::vector<double> grid(gh * gw * 3);
    for (auto& v : grid) v = rng.uniform(0.0, 0.7);
    for (int y = 0; y < H; ++y) {
        const double gy = static_cast<double>(y) / H * (gh - 1);
        const int y0 = static_cast<int>(gy);
        const int y1 = std::min(y0 + 1, gh - 1);
        const double fy = gy - y0;
        for (int x = 0; x < W; ++x) {
            const double gx = static_cast<double>(x) / W * (gw - 1);
            const int x0 = static_cast<int>(gx);
            const int x1 = std::min(x0 + 1, gw - 1);
            const double fx = gx - x0;
            for (int c = 0; c < 3; ++c) {
                const double v =
                    (1 - fy) * ((1 - fx) * grid[(y0 * gw + x0) * 3 + c] +
                                fx * grid[(y0 * gw + x1) * 3 + c]) +
                    fy * ((1 - fx) * grid[(y1 * gw + x0) * 3 + c] +
                          fx * grid[(y1 * gw + x1) * 3 + c]);
                at(y, x, c) = clamp01(v + rng.normal(0.0, 0.02));
            }
        }
    }

    // Persons: head / striped torso / shaded legs from the identity signature.
    for (const auto& p : plan.persons) {
        const Eigen::VectorXd& a = identities[p.identity].appearance_params;
        const double freq = a[9], phase = a[10], amp = a[11];
        for (int y = p.y1; y < p.y1 + p.h; ++y) {
            const double t = static_cast<double>(y - p.y1) / p.h;
            for (int x = p.x1; x < p.x1 + p.w; ++x) {
                const double u = static_cast<double>(x - p.x1) / p.w;
                double rgb[3];
                if (t < 0.15) {
                    for (int c = 0; c < 3; ++c) rgb[c] = a[c];
                } else if (t < 0.55) {
                    const double stripe =
                        1.0 + amp * std::sin(6.283185307179586 * (freq * t + phase));
                    for (int c = 0; c < 3; ++c) rgb[c] = a[3 + c] * stripe;
                } else {
                    const double shade = 0.8 + 0.4 * u;
                    for (int c = 0; c < 3; ++c) rgb[c] = a[6 + c] * shade;
                }
                for (int c = 0; c < 3; ++c)
                    at(y, x, c) = clamp01(rgb[c] + rng.normal(0.0, 0.02));
            }
        }
    }

    for (const auto& o : plan.occluders)
        for (int y = std::max(0, o.y1); y < std::min(H, o.y2); ++y)
            for (int x = std::max(0, o.x1); x < std::min(W, o.x2); ++x)
                for (int c = 0; c < 3; ++c) at(y, x, c) = o.gray;

    ImageU8 img(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(at(y, x, c) * 255.0));
    return img;
}

/// Exact pixel-grid coverage of the occluder union over `box`.
bool covered_at_least(const Box& box, const std::vector<OccluderPlan>& occluders,
                      double min_fraction) {
    const int bx1 = static_cast<int>(box.x1), by1 = static_cast<int>(box.y1);
    const int bx2 = static_cast<int>(box.x2), by2 = static_cast<int>(box.y2);
    long covered = 0;
    for (int y = by1; y < by2; ++y)
        for (int x = bx1; x < bx2; ++x)
            for (const auto& o : occluders)
                if (x >= o.x1 && x < o.x2 && y >= o.y1 && y < o.y2) {
                    ++covered;
                    break;
                }
    const long total = static_cast<long>(bx2 - bx1) * (by2 - by1);
    return total > 0 && covered >= min_fraction * total;
}

SceneSample realize_scene(const ScenePlan& plan, const std::vector<IdentitySpec>& identities,
                          const SynthConfig& cfg) {
    SceneSample s;
    s.scene_id = plan.scene_id;
    s.image = render_scene(plan, identities, cfg);
    s.image_path = std::string("images/") + split_name(plan.split) + "_" +
                   std::to_string(plan.scene_id) + ".png";
    for (const auto& p : plan.persons) {
        s.boxes.push_back(plan_box(p));
        s.true_identity.push_back(p.identity);
    }
    for (const auto& o : plan.occluders)
        s.occluders.push_back(Box{static_cast<double>(o.x1), static_cast<double>(o.y1),
                                  static_cast<double>(o.x2), static_cast<double>(o.y2)});
    for (const auto& b : s.boxes) s.occluded.push_back(covered_at_least(b, plan.occluders, 0.1));
    return s;
}

json box_to_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw LoadError("malformed box entry");
    return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

void SynthConfig::validate() const {
    if (num_identities < 2) throw ConfigError("num_identities: must be >= 2");
    if (train_scenes < 1) throw ConfigError("train_scenes: must be >= 1");
    if (test_scenes < 1) throw ConfigError("test_scenes: must be >= 1");
    if (image_w < 32 || image_h < 32) throw ConfigError("image_w/image_h: must be >= 32");
    if (!(scale_min > 0 && scale_max <= 1.0 && scale_min < scale_max))
        throw ConfigError("scale_min/scale_max: need 0 < scale_min < scale_max <= 1");
    const int min_h = static_cast<int>(std::lround(scale_min * image_h));
    if (min_h < kMinBoxH)
        throw ConfigError("scale_min: smallest person height " + std::to_string(min_h) +
                          " px is below the 16x8 px minimum box");
    if (person_width(min_h) < kMinBoxW) throw ConfigError("scale_min: box width below 8 px");
    if (occluder_prob < 0 || occluder_prob > 1)
        throw ConfigError("occluder_prob: must be in [0,1]");
    if (min_persons < 1 || max_persons < min_persons)
        throw ConfigError("min_persons/max_persons: need 1 <= min <= max");
    if (max_persons > num_identities)
        throw ConfigError("max_persons: exceeds num_identities (identities are unique per scene)");
    const int min_deals = (train_scenes + test_scenes) * min_persons;
    if (min_deals < 2 * num_identities)
        throw ConfigError("num_identities: too many for the scene budget; every identity "
                          "needs >= 2 instances");
}

SynthConfig SynthConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw LoadError("malformed config " + path + ": " + e.what());
    }
    SynthConfig c;
    c.num_identities = j.value("num_identities", c.num_identities);
    c.train_scenes = j.value("train_scenes", c.train_scenes);
    c.test_scenes = j.value("test_scenes", c.test_scenes);
    c.image_w = j.value("image_w", c.image_w);
    c.image_h = j.value("image_h", c.image_h);
    c.scale_min = j.value("scale_min", c.scale_min);
    c.scale_max = j.value("scale_max", c.scale_max);
    c.occluder_prob = j.value("occluder_prob", c.occluder_prob);
    c.min_persons = j.value("min_persons", c.min_persons);
    c.max_persons = j.value("max_persons", c.max_persons);
    c.min_separation = j.value("min_separation", c.min_separation);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

void SynthConfig::to_json_file(const std::string& path) const {
    json j;
    j["num_identities"] = num_identities;
    j["train_scenes"] = train_scenes;
    j["test_scenes"] = test_scenes;
    j["image_w"] = image_w;
    j["image_h"] = image_h;
    j["scale_min"] = scale_min;
    j["scale_max"] = scale_max;
    j["occluder_prob"] = occluder_prob;
    j["min_persons"] = min_persons;
    j["max_persons"] = max_persons;
    j["min_separation"] = min_separation;
    j["seed"] = seed;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config: " + path);
    out << j.dump(2) << "\n";
}

std::vector<IdentitySpec> make_identities(const SynthConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, {kTagIdentities}));
    std::vector<IdentitySpec> out;
    for (int id = 0; id < cfg.num_identities; ++id) {
        IdentitySpec spec;
        spec.identity_id = id;
        bool ok = false;
        for (int attempt = 0; attempt < 2000 && !ok; ++attempt) {
            Eigen::VectorXd a(kAppearanceDim);
            for (int c = 0; c < 9; ++c) a[c] = rng.uniform(0.1, 0.9);
            a[9] = rng.uniform(2.0, 6.0);
            a[10] = rng.uniform(0.0, 1.0);
            a[11] = rng.uniform(0.1, 0.3);
            ok = true;
            for (const auto& other : out)
                if ((a - other.appearance_params).norm() < cfg.min_separation) {
                    ok = false;
                    break;
                }
            if (ok) spec.appearance_params = a;
        }
        if (!ok)
            throw ConfigError("min_separation: cannot place " +
                              std::to_string(cfg.num_identities) + " identities apart");
        out.push_back(std::move(spec));
    }
    return out;
}

Dataset synthesize_dataset(const SynthConfig& cfg) {
    cfg.validate();
    Dataset ds;
    ds.identities = make_identities(cfg);

    // Phase 1 (serial, cheap): identity dealing and geometry for every scene.
    Rng deal_rng(derive_seed(cfg.seed, {kTagDeal}));
    IdentityDeck deck(cfg.num_identities, deal_rng);
    std::vector<ScenePlan> plans;
    auto plan_split = [&](Split split, int count) {
        for (int i = 0; i < count; ++i) {
            ScenePlan plan;
            plan.split = split;
            plan.scene_id = scene_id_base(split) + i;
            const int k = std::min<int>(
                cfg.num_identities,
                static_cast<int>(deal_rng.uniform_int(cfg.min_persons, cfg.max_persons)));
            plan_scene_geometry(plan, cfg, deck.deal(k));
            plans.push_back(std::move(plan));
        }
    };
    plan_split(Split::train, cfg.train_scenes);
    plan_split(Split::test, cfg.test_scenes);
    repair_scales(plans, cfg);

    // Phase 2: rendering is a pure function of (plan, identities, seed) so
    // scenes could be realized in parallel without changing a pixel.
    ds.train.split = Split::train;
    ds.test.split = Split::test;
    ds.train.seed = ds.test.seed = cfg.seed;
    for (const auto& plan : plans) {
        auto& manifest = plan.split == Split::train ? ds.train : ds.test;
        manifest.samples.push_back(realize_scene(plan, ds.identities, cfg));
    }

    // Queries: one per test identity that appears in >= 2 test scenes.
    std::map<int, std::vector<std::pair<int, int>>> test_occ;  // id -> (scene_id, box_idx)
    for (const auto& s : ds.test.samples)
        for (size_t b = 0; b < s.boxes.size(); ++b)
            test_occ[s.true_identity[b]].push_back({s.scene_id, static_cast<int>(b)});
    for (const auto& [id, occ] : test_occ)
        if (occ.size() >= 2) ds.test.query_list.push_back(occ.front());

    return ds;
}

const SceneSample& DatasetManifest::scene_by_id(int scene_id) const {
    for (const auto& s : samples)
        if (s.scene_id == scene_id) return s;
    throw LoadError("unknown scene_id " + std::to_string(scene_id));
}

int DatasetManifest::total_boxes() const {
    int n = 0;
    for (const auto& s : samples) n += static_cast<int>(s.boxes.size());
    return n;
}

void write_annotations(const DatasetManifest& manifest, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    json j;
    j["split"] = split_name(manifest.split);
    j["seed"] = manifest.seed;
    j["samples"] = json::array();
    for (const auto& s : manifest.samples) {
        json e;
        e["scene_id"] = s.scene_id;
        e["image_path"] = s.image_path;
        e["boxes"] = json::array();
        for (const auto& b : s.boxes) e["boxes"].push_back(box_to_json(b));
        e["true_identity"] = s.true_identity;
        e["occluded"] = s.occluded;
        e["occluders"] = json::array();
        for (const auto& b : s.occluders) e["occluders"].push_back(box_to_json(b));
        j["samples"].push_back(std::move(e));
        write_png((fs::path(dir) / s.image_path).string(), s.image);
    }
    j["query_list"] = json::array();
    for (const auto& [sid, bi] : manifest.query_list) j["query_list"].push_back({sid, bi});

    const fs::path manifest_path = fs::path(dir) / (std::string(split_name(manifest.split)) +
                                                    ".json");
    std::ofstream out(manifest_path);
    if (!out) throw IoError("cannot write manifest: " + manifest_path.string());
    out << j.dump(2) << "\n";
}

DatasetManifest read_annotations(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw LoadError("missing manifest: " + manifest_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw LoadError("malformed manifest " + manifest_path + ": " + e.what());
    }
    DatasetManifest m;
    try {
        const std::string split = j.at("split").get<std::string>();
        if (split == "train")
            m.split = Split::train;
        else if (split == "test")
            m.split = Split::test;
        else
            throw LoadError("unknown split: " + split);
        m.seed = j.at("seed").get<std::uint64_t>();
        const fs::path base = fs::path(manifest_path).parent_path();
        for (const auto& e : j.at("samples")) {
            SceneSample s;
            s.scene_id = e.at("scene_id").get<int>();
            s.image_path = e.at("image_path").get<std::string>();
            s.image = read_png((base / s.image_path).string());
            for (const auto& bj : e.at("boxes")) s.boxes.push_back(box_from_json(bj));
            s.true_identity = e.at("true_identity").get<std::vector<int>>();
            s.occluded = e.at("occluded").get<std::vector<bool>>();
            if (e.contains("occluders"))
                for (const auto& bj : e.at("occluders")) s.occluders.push_back(box_from_json(bj));
            if (s.true_identity.size() != s.boxes.size() || s.occluded.size() != s.boxes.size())
                throw LoadError("scene " + std::to_string(s.scene_id) +
                                ": annotation lists have mismatched lengths");
            std::vector<int> ids = s.true_identity;
            std::sort(ids.begin(), ids.end());
            if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
                throw LoadError("scene " + std::to_string(s.scene_id) +
                                ": duplicate identity in one scene");
            for (const auto& b : s.boxes)
                if (!b.valid() || b.x1 < 0 || b.y1 < 0 || b.x2 > s.image.w || b.y2 > s.image.h)
                    throw LoadError("scene " + std::to_string(s.scene_id) +
                                    ": box out of bounds or degenerate");
            m.samples.push_back(std::move(s));
        }
        for (const auto& q : j.at("query_list"))
            m.query_list.push_back({q[0].get<int>(), q[1].get<int>()});
    } catch (const json::exception& e) {
        throw LoadError("malformed manifest " + manifest_path + ": " + e.what());
    }
    return m;
}

DatasetManifest make_masked_testset(const DatasetManifest& manifest, double pixel_fraction,
                                    std::uint64_t seed) {
    if (manifest.split != Split::test)
        throw UsageError("make_masked_testset: masked sets are built from the test split only");
    if (!(pixel_fraction > 0 && pixel_fraction < 1))
        throw ConfigError("pixel_fraction: must be in (0,1)");

    DatasetManifest out = manifest;
    for (auto& s : out.samples) {
        const auto mean = channel_mean(s.image);
        std::uint8_t fill[3];
        for (int c = 0; c < 3; ++c)
            fill[c] = static_cast<std::uint8_t>(std::lround(mean[c] * 255.0));

        const long total = static_cast<long>(s.image.h) * s.image.w;
        const long n = std::lround(pixel_fraction * static_cast<double>(total));
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(s.scene_id)}));
        // Partial Fisher-Yates: first n entries are a uniform sample.
        std::vector<int> idx(total);
        for (long i = 0; i < total; ++i) idx[i] = static_cast<int>(i);
        for (long i = 0; i < n; ++i)
            std::swap(idx[i], idx[rng.uniform_int(i, total - 1)]);
        for (long i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c)
                s.image.px[static_cast<size_t>(idx[i]) * 3 + c] = fill[c];
    }
    return out;
}

}  // namespace dicl

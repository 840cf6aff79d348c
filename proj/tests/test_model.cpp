#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "dicl/model.hpp"

using namespace dicl;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.channels = 4;
    cfg.emb_dim = 8;
    cfg.instance_h = 64;
    cfg.instance_w = 48;
    cfg.init_seed = 3;
    return cfg;
}

Tensor3<double> random_tensor(int c, int h, int w, std::uint64_t seed) {
    Tensor3<double> t(c, h, w);
    Rng rng(seed);
    for (int i = 0; i < t.data.size(); ++i) t.data.data()[i] = rng.normal();
    return t;
}

ImageU8 random_image(int h, int w, std::uint64_t seed) {
    ImageU8 img(h, w);
    Rng rng(seed);
    for (auto& p : img.px) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    return img;
}

// Independent direct 3x3 convolution for the im2col oracle.
Tensor3<double> conv_naive(const Conv2d<double>& conv, const Tensor3<double>& x) {
    const int oh = (x.h + 2 - 3) / conv.stride + 1;
    const int ow = (x.w + 2 - 3) / conv.stride + 1;
    Tensor3<double> out(conv.out_ch, oh, ow);
    for (int oc = 0; oc < conv.out_ch; ++oc)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = conv.bias[oc];
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        for (int ic = 0; ic < conv.in_ch; ++ic) {
                            const int iy = oy * conv.stride - 1 + ky;
                            const int ix = ox * conv.stride - 1 + kx;
                            if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                            acc += conv.weight(oc, (ky * 3 + kx) * conv.in_ch + ic) *
                                   x.at(ic, iy, ix);
                        }
                out.at(oc, oy, ox) = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("conv forward matches a direct convolution oracle") {
    Rng rng(1);
    for (int stride : {1, 2}) {
        Conv2d<double> conv;
        conv.init(3, 5, stride, rng);
        const auto x = random_tensor(3, 9, 7, 11);
        const auto a = conv.forward(x, nullptr);
        const auto b = conv_naive(conv, x);
        REQUIRE(a.same_shape(b));
        CHECK((a.data - b.data).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("conv backward matches finite differences") {
    Rng rng(2);
    Conv2d<double> conv;
    conv.init(2, 3, 2, rng);
    const auto x = random_tensor(2, 6, 6, 12);
    ConvCache<double> cache;
    auto y = conv.forward(x, &cache);
    const auto gout = random_tensor(y.c, y.h, y.w, 13);

    Tensor3<double> gin;
    conv.backward(gout, cache, &gin);

    auto loss = [&](const Tensor3<double>& in) { return conv.forward(in, nullptr).flat().dot(gout.flat()); };
    const double eps = 1e-6;
    for (int i = 0; i < 20; ++i) {
        Rng pick(100 + i);
        const int idx = static_cast<int>(pick.uniform_int(0, x.data.size() - 1));
        Tensor3<double> xp = x, xm = x;
        xp.data.data()[idx] += eps;
        xm.data.data()[idx] -= eps;
        const double fd = (loss(xp) - loss(xm)) / (2 * eps);
        CHECK(gin.data.data()[idx] == doctest::Approx(fd).epsilon(1e-5));
    }
    // weight gradient FD
    for (int i = 0; i < 10; ++i) {
        Rng pick(200 + i);
        const int r = static_cast<int>(pick.uniform_int(0, conv.weight.rows() - 1));
        const int c = static_cast<int>(pick.uniform_int(0, conv.weight.cols() - 1));
        const double orig = conv.weight(r, c);
        conv.weight(r, c) = orig + eps;
        const double lp = loss(x);
        conv.weight(r, c) = orig - eps;
        const double lm = loss(x);
        conv.weight(r, c) = orig;
        CHECK(conv.gweight(r, c) == doctest::Approx((lp - lm) / (2 * eps)).epsilon(1e-5));
    }
}

TEST_CASE("l2_normalize backward matches finite differences") {
    Rng rng(4);
    Vec<double> x(6);
    for (int i = 0; i < 6; ++i) x[i] = rng.normal();
    L2NormCache<double> cache;
    l2_normalize(x, &cache);
    Vec<double> gout(6);
    for (int i = 0; i < 6; ++i) gout[i] = rng.normal();
    const Vec<double> gin = l2_normalize_backward(gout, cache);
    const double eps = 1e-7;
    for (int i = 0; i < 6; ++i) {
        Vec<double> xp = x, xm = x;
        xp[i] += eps;
        xm[i] -= eps;
        const double fd = (l2_normalize<double>(xp, nullptr).dot(gout) -
                           l2_normalize<double>(xm, nullptr).dot(gout)) /
                          (2 * eps);
        CHECK(gin[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("roi_align matches a hand bilinear oracle") {
    // 1-channel 4x4 ramp feature map, identity spatial scale.
    Tensor3<double> feats(1, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) feats.at(0, y, x) = y * 4 + x;
    const Box box{0.5, 0.5, 2.5, 2.5};
    const auto out = roi_align(feats, box, 1.0, 2, 2);
    // cell (i,j) center: (0.5 + (j+0.5)*1.0, 0.5 + (i+0.5)*1.0) - 0.5
    // => sample coords (0.5, 0.5), (1.5, 0.5), ... in (x, y)
    auto bilinear = [&](double sx, double sy) {
        const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        auto v = [&](int y, int x) {
            return feats.at(0, std::clamp(y, 0, 3), std::clamp(x, 0, 3));
        };
        return (1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x0 + 1)) +
               fy * ((1 - fx) * v(y0 + 1, x0) + fx * v(y0 + 1, x0 + 1));
    };
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            CHECK(out.at(0, i, j) ==
                  doctest::Approx(bilinear(0.5 + (j + 0.5) - 0.5, 0.5 + (i + 0.5) - 0.5)));
    // exact value check for the first cell: sample at (0.5, 0.5)
    CHECK(out.at(0, 0, 0) == doctest::Approx(0.5 * (0 + 1) * 0.5 + 0.5 * (4 + 5) * 0.5));
}

TEST_CASE("roi_align backward matches finite differences") {
    auto feats = random_tensor(2, 5, 5, 21);
    const Box box{3.0, 2.0, 60.0, 70.0};
    RoiCache<double> cache;
    auto out = roi_align(feats, box, 1.0 / 16.0, 3, 2, &cache);
    const auto gout = random_tensor(out.c, out.h, out.w, 22);
    Tensor3<double> gin(2, 5, 5);
    roi_align_backward(gout, cache, &gin);
    const double eps = 1e-6;
    for (int i = 0; i < 15; ++i) {
        Rng pick(300 + i);
        const int idx = static_cast<int>(pick.uniform_int(0, feats.data.size() - 1));
        Tensor3<double> fp = feats, fm = feats;
        fp.data.data()[idx] += eps;
        fm.data.data()[idx] -= eps;
        const double lp = roi_align(fp, box, 1.0 / 16.0, 3, 2).flat().dot(gout.flat());
        const double lm = roi_align(fm, box, 1.0 / 16.0, 3, 2).flat().dot(gout.flat());
        CHECK(gin.data.data()[idx] == doctest::Approx((lp - lm) / (2 * eps)).epsilon(1e-5));
    }
}

TEST_CASE("backbone is stride 16 with padding to a multiple of 16") {
    SiameseModel<double> model(tiny_config());
    const auto f = model.extract_features(random_tensor(3, 40, 70, 31));
    CHECK(f.h == 3);  // ceil(40/16)
    CHECK(f.w == 5);  // ceil(70/16)
    CHECK_THROWS_AS(model.extract_features(random_tensor(3, 16, 64, 1)), InputError);
}

TEST_CASE("backbone output is local: far-away pixels cannot affect a cell") {
    SiameseModel<double> model(tiny_config());
    auto img = random_tensor(3, 64, 128, 32);
    const auto f0 = model.extract_features(img);
    // receptive field of 4 stacked stride-2 3x3 convs is 31 pixels
    img.at(0, 5, 120) += 10.0;
    const auto f1 = model.extract_features(img);
    CHECK(f1.at(0, 3, 0) == doctest::Approx(f0.at(0, 3, 0)));
    CHECK((f1.data - f0.data).cwiseAbs().maxCoeff() > 0);
}

TEST_CASE("end-to-end gradient flow through the search branch") {
    SiameseModel<double> model(tiny_config());
    const auto img = random_tensor(3, 48, 64, 41);
    const std::vector<Box> props = {{8, 4, 30, 44}, {20, 10, 50, 46}};
    auto pass = model.search_forward_train(img, props);

    // scalar objective: sum of all outputs weighted by fixed random vectors
    Rng rng(42);
    std::vector<SiameseModel<double>::RegionGrad> grads(props.size());
    for (auto& g : grads) {
        g.d_cls = Vec<double>(2);
        g.d_reg = Vec<double>(4);
        g.d_emb = Vec<double>(model.config().emb_dim);
        for (int i = 0; i < 2; ++i) g.d_cls[i] = rng.normal();
        for (int i = 0; i < 4; ++i) g.d_reg[i] = rng.normal();
        for (int i = 0; i < g.d_emb.size(); ++i) g.d_emb[i] = rng.normal();
    }
    auto objective = [&]() {
        double v = 0;
        const auto feats = model.extract_features(img);
        for (size_t i = 0; i < props.size(); ++i) {
            const auto out = model.region_forward(feats, props[i]);
            v += grads[i].d_cls.dot(out.cls_logits) + grads[i].d_reg.dot(out.reg) +
                 grads[i].d_emb.dot(out.emb);
        }
        return v;
    };

    model.zero_grad();
    model.search_backward(pass, grads);

    const double eps = 1e-6;
    int checked = 0;
    model.visit_params([&](const std::string& name, auto& p, auto& g) {
        // sample a few parameters per tensor
        Rng pick(std::hash<std::string>{}(name));
        for (int k = 0; k < 2; ++k) {
            const int r = static_cast<int>(pick.uniform_int(0, p.rows() - 1));
            const int c = static_cast<int>(pick.uniform_int(0, p.cols() - 1));
            const double orig = p(r, c);
            p(r, c) = orig + eps;
            const double lp = objective();
            p(r, c) = orig - eps;
            const double lm = objective();
            p(r, c) = orig;
            const double fd = (lp - lm) / (2 * eps);
            if (std::abs(fd) < 1e-10) continue;
            CHECK(g(r, c) == doctest::Approx(fd).epsilon(1e-4));
            ++checked;
        }
    });
    CHECK(checked > 10);
}

TEST_CASE("weight sharing: instance branch equals search path on the crop") {
    ModelConfig cfg = tiny_config();
    SiameseModel<double> model(cfg);
    const ImageU8 img = random_image(120, 90, 7);
    const Box box{10, 15, 60, 110};
    const auto crop = crop_resize<double>(img, box, cfg.instance_h, cfg.instance_w);
    const Vec<double> inst = model.instance_forward(crop);
    // search path on the crop image with the full-extent box
    const auto feats = model.extract_features(crop);
    const Box full{0, 0, static_cast<double>(crop.w), static_cast<double>(crop.h)};
    const Vec<double> search = model.region_forward(feats, full).emb;
    CHECK((inst - search).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(inst.norm() == doctest::Approx(1.0));
}

TEST_CASE("instance branch rejects wrong crop sizes") {
    SiameseModel<double> model(tiny_config());
    CHECK_THROWS_AS(model.instance_forward(random_tensor(3, 32, 32, 1)), InputError);
}

TEST_CASE("person_score and apply_deltas oracles") {
    Vec<double> logits(2);
    logits << 0.0, 0.0;
    CHECK(SiameseModel<double>::person_score(logits) == doctest::Approx(0.5));
    logits << -2.0, 2.0;
    CHECK(SiameseModel<double>::person_score(logits) ==
          doctest::Approx(1.0 / (1.0 + std::exp(-4.0))));

    const Box prop{10, 20, 30, 60};  // cx 20, cy 40, w 20, h 40
    Vec<double> d(4);
    d << 0.1, -0.05, std::log(1.5), 0.0;
    const Box out = SiameseModel<double>::apply_deltas(prop, d);
    CHECK((out.x1 + out.x2) / 2 == doctest::Approx(20 + 0.1 * 20));
    CHECK((out.y1 + out.y2) / 2 == doctest::Approx(40 - 0.05 * 40));
    CHECK(out.width() == doctest::Approx(30.0));
    CHECK(out.height() == doctest::Approx(40.0));
}

TEST_CASE("nms keeps the highest-scored of overlapping boxes") {
    const std::vector<Box> boxes = {{0, 0, 10, 10}, {1, 1, 11, 11}, {30, 30, 40, 40}};
    const std::vector<double> scores = {0.6, 0.9, 0.5};
    const auto keep = nms(boxes, scores, 0.5);
    REQUIRE(keep.size() == 2);
    CHECK(keep[0] == 1);
    CHECK(keep[1] == 2);
}

TEST_CASE("eval-mode search_forward thresholds and suppresses") {
    SiameseModel<double> model(tiny_config());
    const auto img = random_tensor(3, 64, 64, 55);
    const std::vector<Box> props = {{5, 5, 30, 55}, {6, 6, 31, 56}, {35, 10, 60, 60}};
    const auto det = model.search_forward(img, props, false);
    CHECK(det.boxes.size() <= props.size());
    for (double s : det.scores) CHECK(s >= model.config().score_thresh);
    for (size_t i = 0; i < det.boxes.size(); ++i)
        for (size_t j = i + 1; j < det.boxes.size(); ++j)
            CHECK(iou(det.boxes[i], det.boxes[j]) < model.config().nms_iou);
    // train mode returns every proposal untouched
    const auto tr = model.search_forward(img, props, true);
    REQUIRE(tr.boxes.size() == props.size());
    for (size_t i = 0; i < props.size(); ++i) CHECK(tr.boxes[i] == props[i]);
}

TEST_CASE("checkpoint round-trips parameters and metadata") {
    SiameseModel<double> a(tiny_config());
    nlohmann::json meta;
    meta["epoch"] = 3;
    meta["config_hash"] = "abc";
    const std::string path = "test_model.ckpt";
    a.save(path, meta);
    SiameseModel<double> b(tiny_config());
    // perturb b so load must actually restore
    b.visit_params([](const std::string&, auto& p, auto&) { p.array() += 0.5; });
    const auto loaded = b.load(path);
    CHECK(loaded["epoch"] == 3);
    CHECK(loaded["config_hash"] == "abc");
    bool equal = true;
    a.visit_params([&](const std::string& name, auto& pa, auto&) {
        b.visit_params([&](const std::string& nb, auto& pb, auto&) {
            if (name == nb) equal = equal && (pa.array() == pb.array()).all();
        });
    });
    CHECK(equal);
    // wrong architecture is rejected
    ModelConfig other = tiny_config();
    other.channels = 6;
    SiameseModel<double> c(other);
    CHECK_THROWS(c.load(path));
    std::remove(path.c_str());
}

TEST_CASE("proposal stub geometry") {
    Rng rng(9);
    const Box gt{20, 30, 60, 110};
    const auto jit = jitter_box(gt, 3, 0.1, 320, 192, rng);
    REQUIRE(jit.size() == 3);
    for (const auto& b : jit) {
        CHECK(b.valid());
        CHECK(b.x1 >= 0);
        CHECK(b.y1 >= 0);
        CHECK(b.x2 <= 320);
        CHECK(b.y2 <= 192);
        CHECK(iou(b, gt) > 0.3);  // 10% jitter stays near the source box
    }
    const std::vector<Box> gts = {gt, {200, 40, 250, 150}};
    const auto bg = sample_background_boxes(gts, 4, 320, 192, rng);
    REQUIRE(bg.size() == 4);
    for (const auto& b : bg) {
        CHECK(b.valid());
        for (const auto& g : gts) CHECK(iou(b, g) < 0.3);
    }
}

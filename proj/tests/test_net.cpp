#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "support/testutil.hpp"
#include "warpchain/net.hpp"
#include "warpchain/synth.hpp"

using namespace warpchain;

namespace {

// dataset of synthetic scenes warped by small random fields
std::vector<TrainingExample> tiny_dataset(int count, int size, double r, std::uint64_t seed) {
    std::vector<TrainingExample> out;
    SceneParams sp;
    sp.n_rect_min = 2;
    sp.n_rect_max = 4;
    sp.n_line_min = 0;
    sp.n_line_max = 1;
    for (int i = 0; i < count; ++i) {
        const SynthScene scene = make_scene(size, size, sp, derive_seed(seed, 1, i));
        TrainingExample ex;
        ex.i1 = scene.intensity;
        if (r > 0.0) {
            FieldGenRanges fr;
            fr.r = 0.7 * r;
            fr.n_min = 1;
            fr.n_max = 2;
            fr.shift_max = 0.15 * r;
            fr.sigma_min = size / 6.0;
            fr.sigma_max = size / 3.0;
            fr.width = size;
            fr.height = size;
            ex.gt = random_field(size, size, sample_params(fr, derive_seed(seed, 2, i)));
        } else {
            ex.gt = identity_field(size, size);
        }
        ex.i2 = warp(scene.mask, ex.gt);
        ex.mask = Raster(size, size, 1, 1.0);
        out.push_back(std::move(ex));
    }
    return out;
}

template <typename T>
std::vector<T*> param_pointers(NetT<T>& net) {
    std::vector<T*> ptrs;
    for (auto& p : net.params) {
        for (auto& w : p.w) ptrs.push_back(&w);
        for (auto& b : p.b) ptrs.push_back(&b);
    }
    return ptrs;
}

}  // namespace

TEST_CASE("build_scale_net matches the layer table") {
    const ScaleNet net = build_scale_net(3, 1, 1.0);

    // encoder filter counts 16, 32, 32, 32, 64, 64 per modality, final 2
    std::vector<int> enc_a;
    int final_filters = 0;
    for (const LayerSpec& s : net.layers) {
        if (s.op == LayerOp::Conv && s.name.back() == 'a') enc_a.push_back(s.filters);
        if (s.name == "conv16") final_filters = s.filters;
    }
    CHECK(enc_a == std::vector<int>{16, 32, 32, 32, 64, 64});
    CHECK(final_filters == 2);

    // parameter count oracle: sum of k^2 c_in c_out + c_out over the 26
    // conv rows of the table (channels 3 and 1)
    const int rows[26][3] = {
        {5, 3, 16},  {5, 16, 32}, {3, 32, 32},  {3, 32, 32}, {3, 32, 64}, {3, 64, 64},
        {5, 1, 16},  {5, 16, 32}, {3, 32, 32},  {3, 32, 32}, {3, 32, 64}, {3, 64, 64},
        {3, 64, 32}, {3, 32, 32}, {3, 64, 64},  {3, 64, 64}, {3, 128, 64}, {3, 64, 64},
        {3, 64, 64}, {3, 128, 64}, {3, 64, 64}, {3, 64, 32}, {3, 64, 64}, {3, 64, 64},
        {3, 64, 32}, {3, 32, 2}};
    std::int64_t expect = 0;
    for (const auto& r : rows) {
        expect += std::int64_t(r[0]) * r[0] * r[1] * r[2] + r[2];
    }
    CHECK(net.parameter_count() == expect);

    CHECK_THROWS_AS(build_scale_net(0, 1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(build_scale_net(1, 1, 1.5), std::invalid_argument);
}

TEST_CASE("forward closes shapes and is deterministic") {
    ScaleNet net = build_scale_net(1, 1, 0.125);
    xavier_init(net, 7);
    const Raster i1 = wctest::random_raster(12, 8, 1, 1);
    const Raster i2 = wctest::random_raster(12, 8, 1, 2);
    const DeformationField out = forward(net, i1, i2);
    CHECK(out.width() == 12);
    CHECK(out.height() == 8);

    const DeformationField again = forward(net, i1, i2);
    CHECK(out.data() == again.data());

    CHECK_THROWS_AS(forward(net, wctest::random_raster(10, 8, 1, 3), i2),
                    std::invalid_argument);
    CHECK_THROWS_AS(forward(net, wctest::random_raster(13, 8, 1, 3),
                            wctest::random_raster(13, 8, 1, 4)),
                    std::invalid_argument);
}

TEST_CASE("zero final layer predicts the zero field") {
    ScaleNet net = build_scale_net(1, 1, 0.125);
    xavier_init(net, 11);
    auto& last = net.params.back();
    std::fill(last.w.begin(), last.w.end(), 0.0f);
    std::fill(last.b.begin(), last.b.end(), 0.0f);
    const DeformationField out =
        forward(net, wctest::random_raster(8, 8, 1, 5), wctest::random_raster(8, 8, 1, 6));
    for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("contrast changes move the output through the rectifier") {
    ScaleNet net = build_scale_net(1, 1, 0.125);
    xavier_init(net, 13);
    // with zero biases the rectifier network is positively homogeneous, so
    // give the biases some spread before testing nonlinearity
    Rng brng(19);
    for (auto& p : net.params) {
        for (auto& b : p.b) b = float(brng.uniform(-0.2, 0.2));
    }
    const Raster i1 = wctest::random_raster(8, 8, 1, 7);
    const Raster i2 = wctest::random_raster(8, 8, 1, 8);
    Raster j1 = i1, j2 = i2;
    for (double& v : j1.data()) v *= 2.0;
    for (double& v : j2.data()) v *= 2.0;
    const DeformationField a = forward(net, i1, i2);
    const DeformationField b = forward(net, j1, j2);
    double diff = 0.0, diff_linear = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        diff = std::max(diff, std::abs(a.data()[i] - b.data()[i]));
        diff_linear = std::max(diff_linear, std::abs(2.0 * a.data()[i] - b.data()[i]));
    }
    CHECK(diff > 1e-6);         // not invariant
    CHECK(diff_linear > 1e-6);  // not linear either
}

TEST_CASE("field_loss values and finite differences") {
    const int n = 6;
    const DeformationField gt = wctest::smooth_field(n, n, 1.0, 31);
    const Raster ones(n, n, 1, 1.0);

    std::vector<double> g;
    CHECK(field_loss(gt, gt, ones, 0.0, &g) == doctest::Approx(0.0));
    for (double v : g) CHECK(v == 0.0);

    // constant error (3,4) on k unmasked pixels -> 25 k
    DeformationField off = gt;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            off.dx(x, y) += 3.0;
            off.dy(x, y) += 4.0;
        }
    }
    CHECK(field_loss(off, gt, ones, 0.0) == doctest::Approx(25.0 * n * n));

    // finite differences in double precision, with mask and laplacian term
    Raster mask(n, n, 1, 1.0);
    mask.at(2, 2, 0) = 4.0;
    mask.at(3, 1, 0) = 4.0;
    DeformationField pred = wctest::smooth_field(n, n, 1.0, 32);
    std::vector<double> grad;
    field_loss(pred, gt, mask, 0.37, &grad);
    std::vector<double> fd(grad.size());
    const double h = 1e-7;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double keep = pred.data()[i];
        pred.data()[i] = keep + h;
        const double up = field_loss(pred, gt, mask, 0.37);
        pred.data()[i] = keep - h;
        const double dn = field_loss(pred, gt, mask, 0.37);
        pred.data()[i] = keep;
        fd[i] = (up - dn) / (2 * h);
    }
    CHECK(wctest::grad_rel_error(grad, fd) < 1e-6);
}

TEST_CASE("backward: zero output gradient gives zero parameter gradients") {
    NetT<double> net = build_scale_net_t<double>(1, 1, 0.0625);
    xavier_init(net, 17);
    ForwardCache<double> cache;
    forward(net, wctest::random_raster(8, 8, 1, 9), wctest::random_raster(8, 8, 1, 10), &cache);
    NetGrads<double> grads = make_grads(net);
    backward(net, cache, std::vector<double>(8 * 8 * 2, 0.0), grads);
    for (const auto& p : grads.g) {
        for (double v : p.w) CHECK(v == 0.0);
        for (double v : p.b) CHECK(v == 0.0);
    }

    // stale cache rejected
    ForwardCache<double> stale;
    CHECK_THROWS_AS(backward(net, stale, std::vector<double>(128, 0.0), grads),
                    std::invalid_argument);
}

TEST_CASE("full-network parameter gradients match finite differences") {
    NetT<double> net = build_scale_net_t<double>(1, 1, 0.0625);
    // seed chosen so no preactivation sits within the finite-difference
    // step of a rectifier kink or pooling tie
    xavier_init(net, 25);
    const Raster i1 = wctest::random_raster(8, 8, 1, 11);
    const Raster i2 = wctest::random_raster(8, 8, 1, 12);
    const DeformationField gt = wctest::smooth_field(8, 8, 1.0, 13);
    Raster mask(8, 8, 1, 1.0);
    mask.at(4, 4, 0) = 4.0;
    const double lambda = 0.21;

    auto loss_of = [&]() {
        const DeformationField pred = forward(net, i1, i2);
        return field_loss(pred, gt, mask, lambda);
    };

    ForwardCache<double> cache;
    const DeformationField pred = forward(net, i1, i2, &cache);
    std::vector<double> dgrad;
    field_loss(pred, gt, mask, lambda, &dgrad);
    NetGrads<double> grads = make_grads(net);
    backward(net, cache, dgrad, grads);

    std::vector<double> analytic, fd;
    auto ptrs = param_pointers(net);
    std::vector<double*> gptrs;
    for (auto& p : grads.g) {
        for (auto& w : p.w) gptrs.push_back(&w);
        for (auto& b : p.b) gptrs.push_back(&b);
    }
    REQUIRE(ptrs.size() == gptrs.size());
    const double h = 1e-6;
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        const double keep = *ptrs[i];
        *ptrs[i] = keep + h;
        const double up = loss_of();
        *ptrs[i] = keep - h;
        const double dn = loss_of();
        *ptrs[i] = keep;
        analytic.push_back(*gptrs[i]);
        fd.push_back((up - dn) / (2 * h));
    }
    CHECK(wctest::grad_rel_error(analytic, fd) < 1e-4);
}

TEST_CASE("unused modality branch gets zero gradients on zero input") {
    NetT<double> net = build_scale_net_t<double>(1, 1, 0.125);
    xavier_init(net, 29);  // biases are zero
    const Raster i1 = wctest::random_raster(8, 8, 1, 14);
    const Raster zero(8, 8, 1, 0.0);
    ForwardCache<double> cache;
    const DeformationField pred = forward(net, i1, zero, &cache);
    std::vector<double> dgrad(pred.data().size());
    for (std::size_t i = 0; i < dgrad.size(); ++i) dgrad[i] = 0.1 + 0.001 * double(i % 17);
    NetGrads<double> grads = make_grads(net);
    backward(net, cache, dgrad, grads);
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        if (net.layers[li].name.size() && net.layers[li].name.back() == 'b' &&
            net.layers[li].op == LayerOp::Conv) {
            for (double v : grads.g[li].w) CHECK(v == 0.0);
            for (double v : grads.g[li].b) CHECK(v == 0.0);
        }
    }
}

TEST_CASE("xavier_init statistics") {
    ScaleNet net = build_scale_net(3, 1, 1.0);
    xavier_init(net, 31);
    // pick the largest layer for tight statistics
    std::size_t big = 0;
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        if (net.params[i].w.size() > net.params[big].w.size()) big = i;
    }
    const auto& p = net.params[big];
    double var = 0.0;
    for (float w : p.w) var += double(w) * double(w);
    var /= double(p.w.size());
    const double expect = 2.0 / (double(p.k) * p.k * p.cin + double(p.k) * p.k * p.cout);
    CHECK(var == doctest::Approx(expect).epsilon(0.10));
    for (const auto& q : net.params) {
        for (float b : q.b) CHECK(b == 0.0f);
    }

    ScaleNet net2 = build_scale_net(3, 1, 1.0);
    xavier_init(net2, 31);
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        CHECK(net.params[i].w == net2.params[i].w);
    }
}

TEST_CASE("adam_step") {
    ScaleNet net = build_scale_net(1, 1, 0.0625);
    xavier_init(net, 37);
    const ScaleNet before = net;
    AdamState<float> st = make_adam(net);
    NetGrads<float> zero = make_grads(net);
    adam_step(net, st, zero, 0.01);
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        CHECK(net.params[i].w == before.params[i].w);
        CHECK(net.params[i].b == before.params[i].b);
    }

    // first step moves each coordinate by about lr in the -sign direction
    NetGrads<float> g = make_grads(net);
    Rng rng(5);
    for (auto& p : g.g) {
        for (auto& w : p.w) w = float(rng.uniform(-2.0, 2.0));
    }
    ScaleNet stepped = before;
    AdamState<float> st2 = make_adam(stepped);
    adam_step(stepped, st2, g, 0.01);
    for (std::size_t i = 0; i < stepped.params.size(); ++i) {
        for (std::size_t j = 0; j < stepped.params[i].w.size(); ++j) {
            const float gj = g.g[i].w[j];
            if (std::abs(gj) < 1e-3) continue;
            const double delta = double(stepped.params[i].w[j]) - double(before.params[i].w[j]);
            CHECK(delta == doctest::Approx(-0.01 * (gj > 0 ? 1.0 : -1.0)).epsilon(1e-3));
        }
    }

    NetGrads<float> wrong;
    CHECK_THROWS_AS(adam_step(net, st, wrong, 0.01), std::invalid_argument);
}

TEST_CASE("bin_accuracy") {
    const DeformationField f = wctest::smooth_field(12, 12, 1.5, 41);
    CHECK(bin_accuracy(f, f, 2.0) == 1.0);

    // uniform random guesses land in the right unit cell ~1/16 of the time
    Rng rng(43);
    std::int64_t total = 0;
    double acc = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        DeformationField pred(64, 64), gt(64, 64);
        for (std::size_t i = 0; i < pred.data().size(); ++i) {
            pred.data()[i] = rng.uniform(-2.0, 2.0);
            gt.data()[i] = rng.uniform(-2.0, 2.0);
        }
        acc += bin_accuracy(pred, gt, 2.0) * 4096;
        total += 4096;
    }
    const double rate = acc / double(total);
    CHECK(rate > 0.05);
    CHECK(rate < 0.08);

    DeformationField big(4, 4);
    big.dx(0, 0) = 5.0;
    CHECK_THROWS_AS(bin_accuracy(f, big, 2.0), std::invalid_argument);
}

TEST_CASE("training drives a constant-zero target to near-zero loss") {
    const auto data = tiny_dataset(6, 24, 0.0, 51);
    TrainConfig cfg;
    cfg.batch = 4;
    cfg.patch = 16;
    cfg.lr = 0.002;
    cfg.iters = 500;
    cfg.decay_every = 1000;
    cfg.width_mult = 0.125;
    cfg.warm_images = 0;
    cfg.warm_iters = 0;
    cfg.seed = 3;
    cfg.accept_ratio = 0.02;
    const TrainResult res = train_scale_block(VectorExampleSource(data), 0, cfg);
    // trailing-window average approaches zero
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 50; ++i) head += res.trace[std::size_t(i)].loss;
    for (int i = 0; i < 50; ++i) tail += res.trace[res.trace.size() - 1 - std::size_t(i)].loss;
    CHECK(tail < 0.1 * head);
    CHECK(tail / 50.0 < 1e-3);
}

TEST_CASE("learning rate decays 4 percent every decay period") {
    const auto data = tiny_dataset(2, 12, 0.0, 61);
    TrainConfig cfg;
    cfg.batch = 1;
    cfg.patch = 8;
    cfg.lr = 0.001;
    cfg.decay = 0.96;
    cfg.decay_every = 1000;
    cfg.iters = 1001;
    cfg.width_mult = 0.0625;
    cfg.warm_images = 0;
    cfg.warm_iters = 0;
    cfg.seed = 5;
    cfg.accept_ratio = 0.0;
    const TrainResult res = train_scale_block(VectorExampleSource(data), 0, cfg);
    CHECK(res.trace[999].lr == doctest::Approx(0.001));
    CHECK(res.trace[1000].lr == doctest::Approx(0.001 * 0.96));
}

TEST_CASE("warm start overfits a tiny subset") {
    const auto data = tiny_dataset(4, 32, 2.0, 71);
    TrainConfig cfg;
    cfg.batch = 4;
    cfg.patch = 32;
    cfg.lr = 0.005;
    cfg.iters = 400;
    cfg.width_mult = 0.25;
    cfg.warm_images = 4;
    cfg.warm_iters = 400;  // the whole run is the warm start
    cfg.seed = 7;
    cfg.accept_ratio = 0.02;

    ScaleNet net = build_scale_net(1, 1, cfg.width_mult);
    xavier_init(net, cfg.seed);
    const Raster ones(32, 32, 1, 1.0);
    auto full_loss = [&](const ScaleNet& n) {
        double total = 0.0;
        for (const auto& ex : data) {
            total += field_loss(forward(n, ex.i1, ex.i2), ex.gt, ones, 0.0);
        }
        return total;
    };
    const double initial = full_loss(net);
    const TrainResult res = train_scale_block_on(std::move(net), VectorExampleSource(data), cfg);
    const double trained = full_loss(res.net);
    CHECK(trained < 0.10 * initial);  // measured ratio 0.016
}

TEST_CASE("training is bit-deterministic given the seed") {
    const auto data = tiny_dataset(3, 16, 0.0, 81);
    TrainConfig cfg;
    cfg.batch = 2;
    cfg.patch = 8;
    cfg.iters = 20;
    cfg.width_mult = 0.0625;
    cfg.warm_images = 0;
    cfg.warm_iters = 0;
    cfg.seed = 11;
    cfg.accept_ratio = 0.0;
    const TrainResult a = train_scale_block(VectorExampleSource(data), 0, cfg);
    const TrainResult b = train_scale_block(VectorExampleSource(data), 0, cfg);
    for (std::size_t i = 0; i < a.net.params.size(); ++i) {
        CHECK(a.net.params[i].w == b.net.params[i].w);
        CHECK(a.net.params[i].b == b.net.params[i].b);
    }
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].loss == b.trace[i].loss);
    }
}

TEST_CASE("batch loss is invariant under permuting examples") {
    const auto data = tiny_dataset(4, 16, 2.0, 91);
    const Raster ones(16, 16, 1, 1.0);
    ScaleNet net = build_scale_net(1, 1, 0.125);
    xavier_init(net, 3);
    double fwd_sum = 0.0, rev_sum = 0.0;
    for (const auto& ex : data) fwd_sum += field_loss(forward(net, ex.i1, ex.i2), ex.gt, ones, 0.0);
    for (auto it = data.rbegin(); it != data.rend(); ++it) {
        rev_sum += field_loss(forward(net, it->i1, it->i2), it->gt, ones, 0.0);
    }
    CHECK(fwd_sum == doctest::Approx(rev_sum).epsilon(1e-12));
}

TEST_CASE("net serialization round trip") {
    ScaleNet net = build_scale_net(1, 2, 0.25);
    net.scale_tag = 3;
    xavier_init(net, 97);
    save_net(net, "test_net_tmp.net");
    const ScaleNet back = load_net("test_net_tmp.net");
    CHECK(back.scale_tag == 3);
    CHECK(back.channels_b == 2);
    CHECK(back.parameter_count() == net.parameter_count());
    const Raster i1 = wctest::random_raster(8, 8, 1, 15);
    const Raster i2 = wctest::random_raster(8, 8, 2, 16);
    const DeformationField a = forward(net, i1, i2);
    const DeformationField b = forward(back, i1, i2);
    CHECK(a.data() == b.data());
    std::remove("test_net_tmp.net");
}

TEST_CASE("forward is translation-equivariant for 4 px shifts") {
    // biases are zero after xavier init, so zero image regions stay
    // exactly zero through every layer and zero padding behaves like the
    // infinite plane; the content sits far enough from the border that
    // its receptive cone (about 40 px each side through the decoder)
    // never reaches it
    ScaleNet net = build_scale_net(1, 1, 0.25);
    xavier_init(net, 101);
    const int n = 128, shift = 4, cs = 16, ox = 56, oy = 56;
    Raster a1(n, n, 1, 0.0), a2(n, n, 1, 0.0), b1(n, n, 1, 0.0), b2(n, n, 1, 0.0);
    const Raster content1 = wctest::random_raster(cs, cs, 1, 17);
    const Raster content2 = wctest::random_raster(cs, cs, 1, 18);
    for (int y = 0; y < cs; ++y) {
        for (int x = 0; x < cs; ++x) {
            a1.at(x + ox, y + oy, 0) = content1.at(x, y, 0);
            a2.at(x + ox, y + oy, 0) = content2.at(x, y, 0);
            b1.at(x + ox + shift, y + oy, 0) = content1.at(x, y, 0);
            b2.at(x + ox + shift, y + oy, 0) = content2.at(x, y, 0);
        }
    }
    const DeformationField fa = forward(net, a1, a2);
    const DeformationField fb = forward(net, b1, b2);
    double worst = 0.0;
    for (int y = 4; y < n - 4; ++y) {
        for (int x = 4; x < n - 4 - shift; ++x) {
            worst = std::max(worst, std::abs(fb.dx(x + shift, y) - fa.dx(x, y)));
            worst = std::max(worst, std::abs(fb.dy(x + shift, y) - fa.dy(x, y)));
        }
    }
    CHECK(worst < 1e-5);
}

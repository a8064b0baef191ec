#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "support/oracle_block.hpp"
#include "support/testutil.hpp"
#include "warpchain/chain.hpp"
#include "warpchain/eval.hpp"
#include "warpchain/synth.hpp"

using namespace warpchain;

namespace {

struct Pair {
    Raster i1, i2;
    DeformationField gt;
};

Pair synthetic_pair(int n, double amplitude, std::uint64_t seed) {
    SceneParams sp;
    const SynthScene scene = make_scene(n, n, sp, derive_seed(seed, 3));
    Pair p;
    FieldGenRanges fr;
    fr.r = 0.7 * amplitude;
    fr.n_min = 2;
    fr.n_max = 4;
    fr.shift_max = 0.075 * amplitude;
    fr.sigma_min = n / 6.0;
    fr.sigma_max = n / 3.0;
    fr.width = n;
    fr.height = n;
    p.gt = random_field(n, n, sample_params(fr, derive_seed(seed, 4)));
    p.i1 = scene.intensity;
    p.i2 = warp(scene.mask, p.gt);
    return p;
}

// constant-translation block for the additive/compositional comparison
class ConstBlock : public AlignerBlock {
public:
    ConstBlock(double dx, double dy) : dx_(dx), dy_(dy) {}
    DeformationField refine(const Raster& a, const Raster&, const DeformationField&,
                            int) override {
        DeformationField f(a.width(), a.height());
        for (int y = 0; y < f.height(); ++y) {
            for (int x = 0; x < f.width(); ++x) {
                f.dx(x, y) = dx_;
                f.dy(x, y) = dy_;
            }
        }
        return f;
    }

private:
    double dx_, dy_;
};

ChainConfig oracle_chain(const DeformationField& gt, int coarsest) {
    ChainConfig cfg;
    for (int s = coarsest; s >= 0; --s) {
        cfg.blocks.emplace_back(s, std::make_shared<wctest::OracleBlock>(&gt));
    }
    return cfg;
}

}  // namespace

TEST_CASE("zero blocks produce the identity field") {
    const Pair p = synthetic_pair(64, 10.0, 1);
    ChainConfig cfg;
    for (int s = 3; s >= 0; --s) cfg.blocks.emplace_back(s, std::make_shared<wctest::ZeroBlock>());
    const DeformationField out = align_chain(p.i1, p.i2, cfg);
    for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("a single scale-0 block is passed through verbatim") {
    ScaleNet net = build_scale_net(1, 1, 0.125);
    xavier_init(net, 5);
    const Pair p = synthetic_pair(32, 2.0, 2);
    ChainConfig cfg;
    cfg.blocks.emplace_back(0, std::make_shared<NetBlock>(net));
    const DeformationField out = align_chain(p.i1, p.i2, cfg);
    const DeformationField direct = forward(net, p.i1, p.i2);
    CHECK(wctest::max_abs_diff(out.data(), direct.data()) == 0.0);
}

TEST_CASE("chain config validation") {
    ChainConfig empty;
    CHECK_THROWS_AS(empty.validate(8, 8), std::invalid_argument);
    ChainConfig wrong;
    wrong.blocks.emplace_back(0, std::make_shared<wctest::ZeroBlock>());
    wrong.blocks.emplace_back(1, std::make_shared<wctest::ZeroBlock>());
    CHECK_THROWS_AS(wrong.validate(8, 8), std::invalid_argument);  // scales must decrease
    ChainConfig top;
    top.blocks.emplace_back(2, std::make_shared<wctest::ZeroBlock>());
    top.blocks.emplace_back(1, std::make_shared<wctest::ZeroBlock>());
    CHECK_THROWS_AS(top.validate(8, 8), std::invalid_argument);  // must end at scale 0
}

TEST_CASE("oracle blocks align 20 px deformations below 1 px mean error") {
    double worst_mean = 0.0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const Pair p = synthetic_pair(128, 20.0, 100 + seed);
        const DeformationField out = align_chain(p.i1, p.i2, oracle_chain(p.gt, 3));
        EndpointStats st;
        endpoint_error(out, p.gt, &st);
        worst_mean = std::max(worst_mean, st.mean);
    }
    CHECK(worst_mean < 1.0);
}

TEST_CASE("accumulated displacement respects the per-scale bound") {
    const Pair p = synthetic_pair(128, 20.0, 300);
    const DeformationField out = align_chain(p.i1, p.i2, oracle_chain(p.gt, 3));
    double bound = 0.0;
    for (int s = 3; s >= 0; --s) bound += double(1 << (s + 1));
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            CHECK(std::abs(out.dx(x, y)) <= bound + 1e-9);
            CHECK(std::abs(out.dy(x, y)) <= bound + 1e-9);
        }
    }
}

TEST_CASE("fast chain shares one parameter set across scales") {
    auto block = std::make_shared<wctest::ZeroBlock>();
    const ChainConfig cfg = fast_chain(block, 3);
    CHECK(cfg.blocks.size() == 4);
    for (const auto& [s, b] : cfg.blocks) CHECK(b.get() == block.get());

    const Pair p = synthetic_pair(64, 5.0, 3);
    const DeformationField out = align_chain(p.i1, p.i2, cfg);
    for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("additive and compositional modes agree on constant translations") {
    const Pair p = synthetic_pair(64, 5.0, 4);
    ChainConfig comp;
    comp.blocks.emplace_back(2, std::make_shared<ConstBlock>(0.5, -0.25));
    comp.blocks.emplace_back(1, std::make_shared<ConstBlock>(-0.75, 1.0));
    comp.blocks.emplace_back(0, std::make_shared<ConstBlock>(1.25, 0.5));
    ChainConfig add = comp;
    add.mode = LinkMode::Additive;
    const DeformationField a = align_chain(p.i1, p.i2, comp);
    const DeformationField b = align_chain(p.i1, p.i2, add);
    CHECK(wctest::max_abs_diff(a.data(), b.data()) < 1e-12);
    // the sum of per-scale translations, scaled by 2^s
    CHECK(a.dx(10, 10) == doctest::Approx(0.5 * 4 - 0.75 * 2 + 1.25).epsilon(1e-12));
    CHECK(a.dy(10, 10) == doctest::Approx(-0.25 * 4 + 1.0 * 2 + 0.5).epsilon(1e-12));
}

TEST_CASE("accurate mode equals the plain chain for equivariant blocks") {
    const int n = 32;
    // blob pair offset by a small translation: centroid block is exactly
    // dihedral-equivariant
    Raster i1 = wctest::blob_image(n, n, n / 2 + 1, n / 2 - 1, 4.0);
    Raster i2 = wctest::blob_image(n, n, n / 2 - 1, n / 2 + 1, 4.0);
    ChainConfig cfg = fast_chain(std::make_shared<wctest::CentroidBlock>(), 1);
    const DeformationField plain = align_chain(i1, i2, cfg);
    const DeformationField acc = align_accurate(i1, i2, cfg);
    EndpointStats st;
    endpoint_error(acc, plain, &st);
    CHECK(st.max < 1e-9);
}

TEST_CASE("accurate mode output is exactly dihedral-equivariant") {
    ScaleNet net = build_scale_net(1, 1, 0.125);
    xavier_init(net, 7);
    const Pair p = synthetic_pair(32, 3.0, 5);
    ChainConfig cfg = fast_chain(std::make_shared<NetBlock>(net), 2);
    const DeformationField base = align_accurate(p.i1, p.i2, cfg);
    for (const auto& g : dihedral_elements()) {
        const DeformationField transformed =
            align_accurate(dihedral_apply(p.i1, g), dihedral_apply(p.i2, g), cfg);
        const DeformationField back = conjugate_field(transformed, g);
        EndpointStats st;
        endpoint_error(back, base, &st);
        CHECK(st.max < 1e-5);
    }
}

TEST_CASE("accurate mode runs the blocks 8 times") {
    ScaleNet net = build_scale_net(1, 1, 0.125);
    xavier_init(net, 9);
    const Pair p = synthetic_pair(32, 3.0, 6);
    auto block = std::make_shared<NetBlock>(net);
    ChainConfig cfg = fast_chain(block, 0);
    reset_cost(cfg);
    align_chain(p.i1, p.i2, cfg);
    const unsigned long long one = block->macs();
    reset_cost(cfg);
    align_accurate(p.i1, p.i2, cfg);
    CHECK(block->macs() == 8 * one);
}

TEST_CASE("cost_estimate") {
    CHECK(cost_estimate(1000, 1, 2.0) == doctest::Approx(2000.0));
    CHECK(cost_estimate(1024, 3, 1.0) == doctest::Approx(1344.0));
    // every finite scale count stays strictly below the 4/3 limit
    for (int s = 1; s <= 12; ++s) {
        CHECK(cost_estimate(999, s, 3.0) < 4.0 / 3.0 * 999 * 3.0);
    }
    CHECK_THROWS_AS(cost_estimate(0, 1, 1.0), std::invalid_argument);
}

TEST_CASE("measured cost scales linearly with pixels and stays below the bound") {
    ScaleNet net = build_scale_net(1, 1, 0.125);
    xavier_init(net, 11);
    auto run = [&](int n) {
        const Pair p = synthetic_pair(n, 5.0, 7);
        auto block = std::make_shared<NetBlock>(net);
        ChainConfig cfg = fast_chain(block, 2);
        align_chain(p.i1, p.i2, cfg);
        return double(block->macs());
    };
    const double at64 = run(64);
    const double at128 = run(128);
    CHECK(at128 / at64 == doctest::Approx(4.0).epsilon(0.05));

    // measured cost per pixel <= cost_estimate with K measured from the
    // scale-0 block alone
    const Pair p = synthetic_pair(64, 5.0, 8);
    auto kblock = std::make_shared<NetBlock>(net);
    ChainConfig solo;
    solo.blocks.emplace_back(0, kblock);
    align_chain(p.i1, p.i2, solo);
    const double k_measured = double(kblock->macs()) / (64.0 * 64.0);
    auto chain_block = std::make_shared<NetBlock>(net);
    ChainConfig cfg = fast_chain(chain_block, 2);
    align_chain(p.i1, p.i2, cfg);
    const double measured = measured_cost_per_pixel(cfg, 64.0 * 64.0);
    CHECK(measured <= cost_estimate(1.0, 3, k_measured) + 1e-9);
    CHECK(measured < 4.0 / 3.0 * k_measured);

    // a full chain of distinct but identical blocks costs the same as the
    // fast chain reusing one block
    std::vector<std::shared_ptr<NetBlock>> blocks;
    ChainConfig full;
    for (int s = 2; s >= 0; --s) {
        blocks.push_back(std::make_shared<NetBlock>(net));
        full.blocks.emplace_back(s, blocks.back());
    }
    align_chain(p.i1, p.i2, full);
    unsigned long long full_macs = 0;
    for (const auto& b : blocks) full_macs += b->macs();
    CHECK(double(full_macs) == doctest::Approx(measured * 64.0 * 64.0));
}

TEST_CASE("chain manifest round trip") {
    ChainManifest m;
    m.blocks = {{3, "s3.net"}, {2, "s2.net"}, {1, "s1.net"}, {0, "s0.net"}};
    m.mode = LinkMode::Additive;
    m.accurate = true;
    m.save("test_chain_tmp.json");
    const ChainManifest back = ChainManifest::load("test_chain_tmp.json");
    CHECK(back.blocks.size() == 4);
    CHECK(back.blocks[1].scale == 2);
    CHECK(back.blocks[1].net_path == "s2.net");
    CHECK(back.mode == LinkMode::Additive);
    CHECK(back.accurate);
    std::remove("test_chain_tmp.json");
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "warpchain/chain.hpp"
#include "warpchain/eval.hpp"
#include "warpchain/io.hpp"

using namespace warpchain;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(WARPCHAIN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
}

}  // namespace

TEST_CASE("cli end to end: gen-data, train, align, eval") {
    const fs::path dir = fs::temp_directory_path() / "wc_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    std::ofstream cfg(dir / "c.cfg");
    cfg << "gen.size = 32\n"
        << "gen.task_r = 2\n"
        << "net.batch = 2\n"
        << "net.patch = 16\n"
        << "net.width_mult = 0.0625\n"
        << "net.iters = 8\n"
        << "net.warm_iters = 0\n"
        << "net.accept_ratio = 0.02\n";
    cfg.close();

    const std::string c = " --config " + (dir / "c.cfg").string();
    CHECK(run("gen-data" + c + " --out " + (dir / "data").string() +
              " --count 3 --seed 7") == 0);
    CHECK(fs::exists(dir / "data" / "manifest.json"));
    CHECK(fs::exists(dir / "data" / "ex0002_kp.json"));

    CHECK(run("train" + c + " --scale 0 --data " + (dir / "data").string() + " --out " +
              (dir / "s0.net").string() + " --seed 9") == 0);
    CHECK(fs::exists(dir / "s0.net"));
    CHECK(fs::exists(dir / "s0.loss.csv"));

    ChainManifest m;
    m.blocks = {{2, "s0.net"}, {1, "s0.net"}, {0, "s0.net"}};
    m.save((dir / "chain.json").string());

    const std::string io = " --i1 " + (dir / "data" / "ex0000_i1.f32r").string() + " --i2 " +
                           (dir / "data" / "ex0000_i2.f32r").string();
    CHECK(run("align --chain " + (dir / "chain.json").string() + io + " --out " +
              (dir / "field.f32r").string()) == 0);
    const Raster field = read_f32r((dir / "field.f32r").string());
    CHECK(field.channels() == 2);
    CHECK(field.width() == 32);

    // the additive and accurate paths also run
    CHECK(run("align --chain " + (dir / "chain.json").string() + io + " --out " +
              (dir / "field2.f32r").string() + " --mode additive --fast") == 0);
    CHECK(run("align --chain " + (dir / "chain.json").string() + io + " --out " +
              (dir / "field3.f32r").string() + " --accurate") == 0);

    CHECK(run("eval --field " + (dir / "field.f32r").string() + " --gt " +
              (dir / "data" / "ex0000_gt.f32r").string() + " --keypoints " +
              (dir / "data" / "ex0000_kp.json").string() + " --out " +
              (dir / "report").string() + " --i1 " +
              (dir / "data" / "ex0000_i1.f32r").string()) == 0);
    CHECK(fs::exists(dir / "report" / "pck.csv"));
    CHECK(fs::exists(dir / "report" / "hist.csv"));
    CHECK(fs::exists(dir / "report" / "warped.ppm"));

    // nonzero exit and a diagnostic on a bad invocation
    CHECK(run("align --chain missing.json" + io + " --out x.f32r") != 0);
    CHECK(run("eval --field nope.f32r --gt nope.f32r --keypoints nope.json --out r") != 0);

    fs::remove_all(dir);
}

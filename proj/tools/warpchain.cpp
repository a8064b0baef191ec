// warpchain - dataset synthesis, scale-block training, chain alignment
// and evaluation reports from the command line.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "warpchain/chain.hpp"
#include "warpchain/config.hpp"
#include "warpchain/eval.hpp"
#include "warpchain/io.hpp"
#include "warpchain/net.hpp"

namespace fs = std::filesystem;
using namespace warpchain;

namespace {

DatasetParams dataset_params_from(const Config& cfg, int size) {
    DatasetParams p;
    p.size = size > 0 ? size : cfg.get("gen.size", 128);
    p.scene.n_rect_min = cfg.get("gen.rects_min", p.scene.n_rect_min);
    p.scene.n_rect_max = cfg.get("gen.rects_max", p.scene.n_rect_max);
    p.scene.rect_min_frac = cfg.get("gen.rect_min_frac", p.scene.rect_min_frac);
    p.scene.rect_max_frac = cfg.get("gen.rect_max_frac", p.scene.rect_max_frac);
    p.scene.n_line_min = cfg.get("gen.lines_min", p.scene.n_line_min);
    p.scene.n_line_max = cfg.get("gen.lines_max", p.scene.n_line_max);
    p.scene.line_width = cfg.get("gen.line_width", p.scene.line_width);
    p.scene.noise = cfg.get("gen.noise", p.scene.noise);
    p.corner_channel = cfg.get("gen.corners", false);
    p.edge_factor = cfg.get("raster.edge_factor", 4.0);
    p.edge_thickness = cfg.get("raster.edge_thickness", 2);

    const double task_r = cfg.get("gen.task_r", 0.0);
    if (task_r > 0.0) {
        p.field = scale_task_ranges(task_r, p.size, p.size);
    } else {
        p.field.r = cfg.get("deform.r", 20.0);
        p.field.n_min = cfg.get("deform.n_min", 1);
        p.field.n_max = cfg.get("deform.n_max", 8);
        p.field.shift_max = cfg.get("deform.shift_max", p.field.r / 2.0);
        p.field.sigma_min = cfg.get("deform.sigma_min_frac", 1.0 / 16.0) * p.size;
        p.field.sigma_max = cfg.get("deform.sigma_max_frac", 1.0 / 4.0) * p.size;
        p.field.width = p.size;
        p.field.height = p.size;
    }
    return p;
}

TrainConfig train_config_from(const Config& cfg) {
    TrainConfig t;
    t.batch = cfg.get("net.batch", t.batch);
    t.patch = cfg.get("net.patch", t.patch);
    t.lr = cfg.get("net.lr", t.lr);
    t.decay = cfg.get("net.decay", t.decay);
    t.decay_every = cfg.get("net.decay_every", t.decay_every);
    t.iters = cfg.get("net.iters", t.iters);
    t.lambda_lap = cfg.get("net.lambda_lap", t.lambda_lap);
    t.width_mult = cfg.get("net.width_mult", t.width_mult);
    t.warm_images = cfg.get("net.warm_images", t.warm_images);
    t.warm_iters = cfg.get("net.warm_iters", t.warm_iters);
    t.seed = std::uint64_t(cfg.get("net.seed", 1));
    t.accept_ratio = cfg.get("net.accept_ratio", t.accept_ratio);
    return t;
}

Raster to_gray3(const Raster& img) {
    Raster out(img.width(), img.height(), 3);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            for (int k = 0; k < 3; ++k) {
                out.at(x, y, k) = img.at(x, y, std::min(k, img.channels() - 1));
            }
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coarse-to-fine multimodal registration chain"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_dir, heldout_dir;
    std::string chain_path, i1_path, i2_path, field_path, gt_path, kp_path;
    int count = 100, scale = 0, size = 0, iters = -1;
    std::uint64_t seed = 0;
    bool have_seed = false, fast = false, accurate = false;
    std::string mode = "compositional";
    double bin_width = 1.0;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "random seed")->each([&](const std::string&) {
            have_seed = true;
        });
    };

    CLI::App* gen = app.add_subcommand("gen-data", "synthesize a training/eval dataset");
    gen->add_option("--config", config_path, "key=value config file");
    gen->add_option("--out", out_path, "output directory")->required();
    gen->add_option("--count", count, "number of examples")->required();
    gen->add_option("--size", size, "image side length");
    add_seed(gen);

    CLI::App* train = app.add_subcommand("train", "train one scale-specific block");
    train->add_option("--config", config_path, "key=value config file");
    train->add_option("--scale", scale, "scale tag s")->required();
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_path, "output network file")->required();
    train->add_option("--iters", iters, "override net.iters");
    add_seed(train);

    CLI::App* align = app.add_subcommand("align", "run the chain on an image pair");
    align->add_option("--chain", chain_path, "chain manifest JSON")->required();
    align->add_option("--i1", i1_path, "moving image (F32R)")->required();
    align->add_option("--i2", i2_path, "fixed image (F32R)")->required();
    align->add_option("--out", out_path, "output field (2-channel F32R)")->required();
    align->add_flag("--fast", fast, "one block for every scale");
    align->add_flag("--accurate", accurate, "average over the 8 dihedral runs");
    align->add_option("--mode", mode, "compositional|additive");

    CLI::App* eval = app.add_subcommand("eval", "PCK + histogram report for a field");
    eval->add_option("--field", field_path, "predicted field (F32R)")->required();
    eval->add_option("--gt", gt_path, "ground-truth field (F32R)")->required();
    eval->add_option("--keypoints", kp_path, "keypoint JSON")->required();
    eval->add_option("--out", out_path, "report directory")->required();
    eval->add_option("--i1", i1_path, "optional image to warp for warped.ppm");
    eval->add_option("--bin-width", bin_width, "histogram bin width");

    CLI::App* control = app.add_subcommand(
        "control", "negative control: direct full-range training report");
    control->add_option("--config", config_path, "key=value config file");
    control->add_option("--data", data_dir, "training dataset directory")->required();
    control->add_option("--heldout", heldout_dir, "held-out dataset directory")->required();
    control->add_option("--out", out_path, "report JSON path")->required();
    control->add_option("--iters", iters, "override net.iters");
    add_seed(control);

    CLI11_PARSE(app, argc, argv);

    try {
        Config cfg;
        if (!config_path.empty()) cfg = Config::load(config_path);

        if (gen->parsed()) {
            const DatasetParams p = dataset_params_from(cfg, size);
            gen_dataset(p, count, have_seed ? seed : 1, out_path);
            std::cout << "wrote " << count << " examples to " << out_path << "\n";
        } else if (train->parsed()) {
            TrainConfig t = train_config_from(cfg);
            if (have_seed) t.seed = seed;
            if (iters >= 0) t.iters = iters;
            const VectorExampleSource source(load_dataset(data_dir));
            const TrainResult res = train_scale_block(source, scale, t);
            save_net(res.net, out_path);
            fs::path trace = out_path;
            trace.replace_extension(".loss.csv");
            write_loss_csv(res.trace, trace.string());
            std::cout << "trained scale-" << scale << " block: " << out_path << "\n";
        } else if (align->parsed()) {
            const ChainManifest manifest = ChainManifest::load(chain_path);
            const std::string base = fs::path(chain_path).parent_path().string();
            const Raster a = read_f32r(i1_path);
            const Raster b = read_f32r(i2_path);
            ChainConfig chain = chain_from_manifest(manifest, base);
            if (mode == "additive") {
                chain.mode = LinkMode::Additive;
            } else if (mode != "compositional") {
                throw std::runtime_error("align: unknown mode " + mode);
            }
            if (fast) {
                // reuse one block (prefer the s=2-specific one) across scales
                std::shared_ptr<AlignerBlock> block = chain.blocks.front().second;
                int coarsest = chain.blocks.front().first;
                for (const auto& [s, blk] : chain.blocks) {
                    if (s == 2) block = blk;
                    coarsest = std::max(coarsest, s);
                }
                chain = fast_chain(block, coarsest, chain.mode);
            }
            const DeformationField out = (accurate || manifest.accurate)
                                             ? align_accurate(a, b, chain)
                                             : align_chain(a, b, chain);
            write_f32r(out.to_raster(), out_path);
            std::cout << "wrote field " << out_path << "\n";
        } else if (eval->parsed()) {
            const DeformationField field = DeformationField::from_raster(read_f32r(field_path));
            const DeformationField gt = DeformationField::from_raster(read_f32r(gt_path));
            const KeypointSet kp = KeypointSet::load_json(kp_path);
            fs::create_directories(out_path);
            write_pck_csv(pck(field, kp, default_pck_thresholds()),
                          (fs::path(out_path) / "pck.csv").string());
            write_hist_csv(error_histogram(field, gt, bin_width),
                           (fs::path(out_path) / "hist.csv").string());
            if (!i1_path.empty()) {
                const Raster img = read_f32r(i1_path);
                write_ppm(to_gray3(warp(img, field)),
                          (fs::path(out_path) / "warped.ppm").string());
            }
            std::cout << "wrote report to " << out_path << "\n";
        } else if (control->parsed()) {
            TrainConfig t = train_config_from(cfg);
            if (have_seed) t.seed = seed;
            if (iters >= 0) t.iters = iters;
            t.warm_iters = 0;  // the "first try" setup has no warm start
            const double r = cfg.get("deform.r", 20.0);
            const VectorExampleSource source(load_dataset(data_dir));
            const TrainResult res = train_scale_block(source, 0, t);
            const NegativeControlReport rep =
                negative_control(res.net, load_dataset(heldout_dir), r);
            std::ofstream os(out_path);
            if (!os) throw std::runtime_error("control: cannot write " + out_path);
            os << rep.to_json() << "\n";
            std::cout << rep.to_json() << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

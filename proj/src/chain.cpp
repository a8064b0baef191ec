#include "warpchain/chain.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace warpchain {

DeformationField NetBlock::refine(const Raster& a, const Raster& b,
                                  const DeformationField& /*current*/, int /*scale*/) {
    return forward<float>(net_, a, b, nullptr, &macs_);
}

void ChainConfig::validate(int w, int h) const {
    if (blocks.empty()) throw std::invalid_argument("ChainConfig: no blocks");
    int prev = -1;
    for (const auto& [scale, block] : blocks) {
        if (scale < 0) throw std::invalid_argument("ChainConfig: negative scale");
        if (!block) throw std::invalid_argument("ChainConfig: null block");
        if (prev >= 0 && scale >= prev) {
            throw std::invalid_argument("ChainConfig: scales must strictly decrease");
        }
        prev = scale;
        const int f = 1 << scale;
        if (w % f != 0 || h % f != 0) {
            throw std::invalid_argument("ChainConfig: image dims not divisible by 2^" +
                                        std::to_string(scale));
        }
    }
    if (blocks.back().first != 0) {
        throw std::invalid_argument("ChainConfig: chain must end at scale 0");
    }
}

DeformationField align_chain(const Raster& i1, const Raster& i2, const ChainConfig& cfg) {
    if (i1.width() != i2.width() || i1.height() != i2.height()) {
        throw std::invalid_argument("align_chain: image dimensions differ");
    }
    cfg.validate(i1.width(), i1.height());
    const int w = i1.width(), h = i1.height();
    DeformationField field = identity_field(w, h);
    for (const auto& [scale, block] : cfg.blocks) {
        // warp-then-downsample: the current field is applied at full
        // resolution, then both images are reduced to the working size
        Raster a = warp(i1, field);
        Raster b = i2;
        for (int s = 0; s < scale; ++s) {
            a = downsample2(a);
            b = downsample2(b);
        }
        DeformationField f;
        try {
            f = block->refine(a, b, field, scale);
        } catch (const std::exception& e) {
            throw std::runtime_error("align_chain: block at scale " + std::to_string(scale) +
                                     " failed: " + e.what());
        }
        if (f.width() != a.width() || f.height() != a.height()) {
            throw std::runtime_error("align_chain: block at scale " + std::to_string(scale) +
                                     " returned a field of the wrong size");
        }
        for (int s = 0; s < scale; ++s) f = upsample_field(f);
        field = (cfg.mode == LinkMode::Compositional) ? compose(field, f)
                                                      : add_fields(field, f);
    }
    return field;
}

ChainConfig fast_chain(std::shared_ptr<AlignerBlock> block, int coarsest_scale, LinkMode mode) {
    ChainConfig cfg;
    cfg.mode = mode;
    for (int s = coarsest_scale; s >= 0; --s) cfg.blocks.emplace_back(s, block);
    return cfg;
}

DeformationField align_accurate(const Raster& i1, const Raster& i2, const ChainConfig& cfg) {
    const auto elems = dihedral_elements();
    DeformationField mean(i1.width(), i1.height());
    std::vector<DeformationField> partial(elems.size());
    for (std::size_t gi = 0; gi < elems.size(); ++gi) {
        const DihedralElement g = elems[gi];
        const Raster a = dihedral_apply(i1, g);
        const Raster b = dihedral_apply(i2, g);
        partial[gi] = conjugate_field(align_chain(a, b, cfg), g);
    }
    for (std::size_t gi = 0; gi < elems.size(); ++gi) {
        for (std::size_t i = 0; i < mean.data().size(); ++i) {
            mean.data()[i] += partial[gi].data()[i] / double(elems.size());
        }
    }
    return mean;
}

double cost_estimate(double n_pixels, int scales, double k_per_pixel) {
    if (n_pixels <= 0 || k_per_pixel <= 0 || scales < 1) {
        throw std::invalid_argument("cost_estimate: n, K must be > 0 and scales >= 1");
    }
    double total = 0.0;
    for (int s = 0; s < scales; ++s) total += std::pow(0.25, s) * n_pixels * k_per_pixel;
    return total;
}

double measured_cost_per_pixel(const ChainConfig& cfg, double n_pixels) {
    unsigned long long macs = 0;
    // a fast chain shares one block across slots: count each block once
    std::vector<const AlignerBlock*> seen;
    for (const auto& [scale, block] : cfg.blocks) {
        bool dup = false;
        for (const AlignerBlock* p : seen) dup = dup || p == block.get();
        if (!dup) {
            macs += block->macs();
            seen.push_back(block.get());
        }
    }
    return double(macs) / n_pixels;
}

void reset_cost(const ChainConfig& cfg) {
    for (const auto& [scale, block] : cfg.blocks) block->reset_macs();
}

ChainManifest ChainManifest::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("ChainManifest: cannot open " + path);
    nlohmann::json j;
    is >> j;
    ChainManifest m;
    for (const auto& b : j.at("blocks")) {
        m.blocks.push_back({b.at("scale").get<int>(), b.at("net").get<std::string>()});
    }
    const std::string mode = j.value("mode", "compositional");
    if (mode == "compositional") {
        m.mode = LinkMode::Compositional;
    } else if (mode == "additive") {
        m.mode = LinkMode::Additive;
    } else {
        throw std::runtime_error("ChainManifest: unknown mode " + mode);
    }
    m.accurate = j.value("accurate", false);
    return m;
}

void ChainManifest::save(const std::string& path) const {
    nlohmann::json j;
    j["blocks"] = nlohmann::json::array();
    for (const Entry& e : blocks) {
        j["blocks"].push_back({{"scale", e.scale}, {"net", e.net_path}});
    }
    j["mode"] = mode == LinkMode::Compositional ? "compositional" : "additive";
    j["accurate"] = accurate;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("ChainManifest: cannot write " + path);
    os << j.dump(2) << "\n";
}

ChainConfig chain_from_manifest(const ChainManifest& m, const std::string& base_dir) {
    ChainConfig cfg;
    cfg.mode = m.mode;
    for (const auto& e : m.blocks) {
        std::filesystem::path p(e.net_path);
        if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
        cfg.blocks.emplace_back(e.scale, std::make_shared<NetBlock>(load_net(p.string())));
    }
    return cfg;
}

}  // namespace warpchain

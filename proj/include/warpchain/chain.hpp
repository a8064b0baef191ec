// chain.hpp - the coarse-to-fine orchestrator: per scale, warp the moving
// image with the current field, downsample both images, let the scale
// block predict a refinement, upsample it back and fold it in by
// diffeomorphism composition (or addition in the additive linking mode).
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "warpchain/deform.hpp"
#include "warpchain/net.hpp"
#include "warpchain/raster.hpp"

namespace warpchain {

// One scale-specific aligner. `a` is the warped moving image and `b` the
// fixed image, both downsampled to the working resolution; the returned
// refinement is in working-resolution pixel units. `current` is the
// accumulated full-resolution field (oracle blocks use it).
class AlignerBlock {
public:
    virtual ~AlignerBlock() = default;
    virtual DeformationField refine(const Raster& a, const Raster& b,
                                    const DeformationField& current, int scale) = 0;
    virtual unsigned long long macs() const { return 0; }
    virtual void reset_macs() {}
};

class NetBlock : public AlignerBlock {
public:
    explicit NetBlock(ScaleNet net) : net_(std::move(net)) {}
    DeformationField refine(const Raster& a, const Raster& b,
                            const DeformationField& current, int scale) override;
    unsigned long long macs() const override { return macs_; }
    void reset_macs() override { macs_ = 0; }
    const ScaleNet& net() const { return net_; }

private:
    ScaleNet net_;
    unsigned long long macs_ = 0;
};

enum class LinkMode { Compositional, Additive };

struct ChainConfig {
    // (scale, block) pairs, scales strictly decreasing down to 0.
    std::vector<std::pair<int, std::shared_ptr<AlignerBlock>>> blocks;
    LinkMode mode = LinkMode::Compositional;
    void validate(int w, int h) const;
};

DeformationField align_chain(const Raster& i1, const Raster& i2, const ChainConfig& cfg);

// Every scale slot filled with the same block (the paper's "fast" mode).
ChainConfig fast_chain(std::shared_ptr<AlignerBlock> block, int coarsest_scale,
                       LinkMode mode = LinkMode::Compositional);

// Run the chain on all 8 dihedral transforms of the inputs, conjugate the
// results back and average them (the paper's "accurate" mode).
DeformationField align_accurate(const Raster& i1, const Raster& i2, const ChainConfig& cfg);

// Operation-count model: sum_{s=0}^{scales-1} 4^-s * n * K.
double cost_estimate(double n_pixels, int scales, double k_per_pixel);

// Multiply-accumulate count of the blocks during the last chain run(s),
// divided by the input pixel count.
double measured_cost_per_pixel(const ChainConfig& cfg, double n_pixels);
void reset_cost(const ChainConfig& cfg);

// Chain manifest: JSON {"blocks": [{"scale": s, "net": path}...],
// "mode": "compositional"|"additive", "accurate": bool}.
struct ChainManifest {
    struct Entry {
        int scale;
        std::string net_path;
    };
    std::vector<Entry> blocks;
    LinkMode mode = LinkMode::Compositional;
    bool accurate = false;

    static ChainManifest load(const std::string& path);
    void save(const std::string& path) const;
};

// Loads every referenced network (paths relative to the manifest file).
ChainConfig chain_from_manifest(const ChainManifest& m, const std::string& base_dir);

}  // namespace warpchain

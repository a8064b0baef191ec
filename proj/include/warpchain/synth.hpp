// synth.hpp - synthetic two-modality scenes: random rectangles and road
// polylines rendered once as a filled-intensity image and once as a
// binary mask, sharing the exact same rasterized edges.
#pragma once

#include <cstdint>

#include "warpchain/raster.hpp"
#include "warpchain/vecmap.hpp"

namespace warpchain {

struct SceneParams {
    int n_rect_min = 3, n_rect_max = 8;
    double rect_min_frac = 0.12, rect_max_frac = 0.35;  // side length / image width
    int n_line_min = 1, n_line_max = 2;
    double line_width = 4.0;
    double background = 0.15;
    double fill_min = 0.35, fill_max = 0.95;
    double line_fill = 0.85;
    double noise = 0.02;  // additive Gaussian noise on the intensity modality
};

struct SynthScene {
    VectorMap vm;
    Raster intensity;  // modality A, 1 channel
    Raster mask;       // modality B, 1 channel, binary
};

SynthScene make_scene(int w, int h, const SceneParams& params, std::uint64_t seed);

}  // namespace warpchain

#include "warpchain/synth.hpp"

#include <algorithm>
#include <cmath>

#include "warpchain/rng.hpp"

namespace warpchain {

namespace {

double gauss(Rng& rng) {
    // Box-Muller; both uniforms drawn explicitly to stay reproducible
    const double u1 = std::max(rng.uniform(), 1e-300);
    const double u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace

SynthScene make_scene(int w, int h, const SceneParams& params, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x7363656e65ull));
    SynthScene scene;
    scene.intensity = Raster(w, h, 1, params.background);
    scene.mask = Raster(w, h, 1, 0.0);

    const int nrect = rng.uniform_int(params.n_rect_min, params.n_rect_max);
    for (int i = 0; i < nrect; ++i) {
        const double side_lo = params.rect_min_frac * w;
        const double side_hi = params.rect_max_frac * w;
        const double rw = rng.uniform(side_lo, side_hi);
        const double rh = rng.uniform(side_lo, side_hi);
        const double x0 = rng.uniform(-0.25 * rw, w - 0.75 * rw);
        const double y0 = rng.uniform(-0.25 * rh, h - 0.75 * rh);
        const double fill = rng.uniform(params.fill_min, params.fill_max);
        scene.vm.polygons.push_back(
            {{x0, y0}, {x0 + rw, y0}, {x0 + rw, y0 + rh}, {x0, y0 + rh}});
        scene.vm.polygon_classes.push_back(0);
        // paint this rectangle alone so both modalities share its edge pixels
        VectorMap one;
        one.polygons.push_back(scene.vm.polygons.back());
        one.polygon_classes.push_back(0);
        const Raster bin = rasterize_polygons(one, w, h).raster;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (bin.at(x, y, 0) > 0.5) {
                    scene.intensity.at(x, y, 0) = fill;
                    scene.mask.at(x, y, 0) = 1.0;
                }
            }
        }
    }

    const int nline = rng.uniform_int(params.n_line_min, params.n_line_max);
    for (int i = 0; i < nline; ++i) {
        const int segs = rng.uniform_int(1, 3);
        std::vector<Point> chain;
        chain.push_back({rng.uniform(0.0, double(w - 1)), rng.uniform(0.0, double(h - 1))});
        for (int sgm = 0; sgm < segs; ++sgm) {
            chain.push_back(
                {rng.uniform(0.0, double(w - 1)), rng.uniform(0.0, double(h - 1))});
        }
        scene.vm.polylines.push_back(chain);
        scene.vm.polyline_classes.push_back(1);
        VectorMap one;
        one.polylines.push_back(chain);
        one.polyline_classes.push_back(1);
        const Raster band = rasterize_polylines_dilated(one, params.line_width, w, h);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (band.at(x, y, 0) > 0.5) {
                    scene.intensity.at(x, y, 0) = params.line_fill;
                    scene.mask.at(x, y, 0) = 1.0;
                }
            }
        }
    }

    if (params.noise > 0.0) {
        for (double& v : scene.intensity.data()) {
            v = std::clamp(v + params.noise * gauss(rng), 0.0, 1.0);
        }
    }
    return scene;
}

}  // namespace warpchain

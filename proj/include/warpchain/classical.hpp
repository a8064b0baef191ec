// classical.hpp - gradient-descent registration baseline: scale-dependent
// descriptors, the matching criterion and its analytic gradient, a
// backtracking descent loop and the multi-resolution wrapper.
#pragma once

#include <vector>

#include "warpchain/deform.hpp"
#include "warpchain/raster.hpp"

namespace warpchain {

enum class DescriptorKind { RawIntensity, GaussianSmoothed, LocalCrossCorrelation };

struct Descriptor {
    DescriptorKind kind = DescriptorKind::RawIntensity;
    double sigma = 0.0;  // neighborhood size; > 0 for smoothed / LCC
};

// Truncated Gaussian taps at integer offsets |k| < 3*sigma, renormalized.
std::vector<double> gaussian_kernel(double sigma);

// Raw: identity. Gaussian: separable truncated convolution (border clamp).
// LCC: per-pixel zero-mean unit-variance normalization within the
// Gaussian sigma-window, variance floored by eps.
Raster describe(const Raster& img, const Descriptor& d, double eps = 1e-6);

// sum over pixels and channels of the squared feature difference between
// describe(warp(i1, phi)) and describe(i2).
double criterion(const Raster& i1, const Raster& i2, const DeformationField& phi,
                 const Descriptor& d);

// Exact gradient of the criterion with respect to the displacement at each
// pixel (the bilinear sampler differentiated in closed form; the chain
// rule routes through the smoothing window for non-raw descriptors).
DeformationField criterion_gradient(const Raster& i1, const Raster& i2,
                                    const DeformationField& phi, const Descriptor& d);

struct DescentConfig {
    double step = 1.0;           // initial step size; backtracking halves it per trial
    int max_iters = 200;
    double lambda_reg = 0.0;     // weight of the Laplacian penalty
    double tol = 0.0;            // stop when objective decrease < tol
    std::vector<double> sigmas;  // descriptor scale schedule, strictly decreasing
    void validate() const;
};

struct DescentTrace {
    std::vector<double> objective;   // criterion + lambda_reg * penalty, per iteration
    std::vector<int> switch_iters;   // iterations where the descriptor scale changed
    bool converged = false;
};

struct DescentResult {
    DeformationField field;
    DescentTrace trace;
};

// Gradient descent on criterion + lambda_reg * laplacian_penalty starting
// from the identity field. If cfg.sigmas is non-empty it overrides the
// descriptor's sigma on a schedule of equal iteration fractions.
DescentResult descend(const Raster& i1, const Raster& i2, const DescentConfig& cfg,
                      const Descriptor& d);

// Coarse-to-fine loop: descend at the coarsest of `levels` resolutions,
// upsample the field, repeat until the original resolution.
DeformationField multires_align(const Raster& i1, const Raster& i2,
                                const DescentConfig& cfg, const Descriptor& d, int levels);

}  // namespace warpchain

// deform.hpp - deformation-field algebra: warping, composition, pyramid
// resampling, random smooth field generation and the Laplacian smoothness
// penalty. Fields store per-pixel displacements d(x); the map itself is
// phi(x) = x + d(x), so the identity is the zero field.
#pragma once

#include <cstdint>
#include <vector>

#include "warpchain/raster.hpp"

namespace warpchain {

class DeformationField {
public:
    DeformationField() = default;
    DeformationField(int width, int height);

    int width() const { return w_; }
    int height() const { return h_; }

    double& dx(int x, int y) { return d_[2 * (std::int64_t(y) * w_ + x)]; }
    double& dy(int x, int y) { return d_[2 * (std::int64_t(y) * w_ + x) + 1]; }
    double dx(int x, int y) const { return d_[2 * (std::int64_t(y) * w_ + x)]; }
    double dy(int x, int y) const { return d_[2 * (std::int64_t(y) * w_ + x) + 1]; }

    std::vector<double>& data() { return d_; }
    const std::vector<double>& data() const { return d_; }

    bool same_shape(const DeformationField& o) const { return w_ == o.w_ && h_ == o.h_; }

    // Displacement at a continuous position, bilinear with border clamp.
    void sample(double x, double y, double* out2) const;

    Raster to_raster() const;                  // 2-channel view (dx, dy)
    static DeformationField from_raster(const Raster& r);

private:
    int w_ = 0, h_ = 0;
    std::vector<double> d_;
};

DeformationField identity_field(int w, int h);

// Output pixel x reads img at x + d(x) (bilinear, border clamp).
Raster warp(const Raster& img, const DeformationField& phi);

// phi o (Id + f): displacement d(x) = d_phi(x + f(x)) + f(x), with d_phi
// looked up bilinearly.
DeformationField compose(const DeformationField& phi, const DeformationField& f);

DeformationField add_fields(const DeformationField& a, const DeformationField& b);
DeformationField negate_field(const DeformationField& a);
DeformationField scale_field(const DeformationField& a, double s);

// Spatial 2x upsample of both vector channels AND a factor 2 on every
// vector: displacements are expressed in pixels of the new resolution.
DeformationField upsample_field(const DeformationField& phi);

// Sample the field at the coarse lattice (2x spacing) and halve vectors;
// inverse bookkeeping of upsample_field.
DeformationField downsample_field(const DeformationField& phi);

// d(x) = v0 + sum_i vi * exp(-(x-xi)^T Si (x-xi))
struct GaussianBump {
    double vx, vy;        // shift vi
    double cx, cy;        // center xi
    double sxx, sxy, syy; // symmetric positive definite Si
};

struct GaussianMixtureParams {
    double r = 0.0;       // max global translation amplitude
    double v0x = 0.0, v0y = 0.0;
    std::vector<GaussianBump> bumps;
};

struct FieldGenRanges {
    double r = 20.0;            // v0 uniform in [-r, r]^2
    int n_min = 1, n_max = 8;   // bump count
    double shift_max = 10.0;    // |vi| components  <= shift_max
    double sigma_min = 4.0;     // bump standard deviations, pixels
    double sigma_max = 16.0;
    int width = 0, height = 0;  // center domain
};

GaussianMixtureParams sample_params(const FieldGenRanges& ranges, std::uint64_t seed);
DeformationField random_field(int w, int h, const GaussianMixtureParams& params);

// Sum over interior pixels of || d(x) - mean of the 4 neighbors ||^2.
// Zero exactly on affine fields. Requires width, height >= 3.
double laplacian_penalty(const DeformationField& phi);

// Gradient of laplacian_penalty w.r.t. every displacement component,
// same layout as the field data.
void laplacian_penalty_grad(const DeformationField& phi, std::vector<double>& grad);

// Maps a field estimated on g-transformed images back to the original
// frame: d(p) = L(g)^-1 * d'(T_g(p)).
DeformationField conjugate_field(const DeformationField& phi, DihedralElement g);

struct EndpointStats {
    double mean = 0.0, median = 0.0, max = 0.0;
};

// Per-pixel Euclidean norm of the displacement difference, plus stats.
Raster endpoint_error(const DeformationField& predicted, const DeformationField& truth,
                      EndpointStats* stats = nullptr);

}  // namespace warpchain

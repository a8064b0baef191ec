// raster.hpp - multi-channel rasters on a regular grid, bilinear sampling,
// factor-2 pyramid resampling and the dihedral symmetry group.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace warpchain {

// Row-major, channel-interleaved image. Pixel (x, y) has continuous
// coordinate (x, y); the sampling grid is the lattice of pixel centers.
// Immutable in spirit: operations return new rasters.
class Raster {
public:
    Raster() = default;
    Raster(int width, int height, int channels, double fill = 0.0);

    int width() const { return w_; }
    int height() const { return h_; }
    int channels() const { return c_; }
    std::int64_t pixel_count() const { return std::int64_t(w_) * h_; }

    double& at(int x, int y, int c) { return data_[(std::int64_t(y) * w_ + x) * c_ + c]; }
    double at(int x, int y, int c) const { return data_[(std::int64_t(y) * w_ + x) * c_ + c]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Raster& o) const {
        return w_ == o.w_ && h_ == o.h_ && c_ == o.c_;
    }

    // Throws if any stored value is non-finite.
    void check_finite(const char* what) const;

private:
    int w_ = 0, h_ = 0, c_ = 1;
    std::vector<double> data_;
};

// Bilinear interpolation of the 4 surrounding pixels; coordinates are
// clamped to [0, w-1] x [0, h-1] before interpolation. Throws on
// non-finite coordinates.
void sample_bilinear(const Raster& img, double x, double y, double* out);
std::vector<double> sample_bilinear(const Raster& img, double x, double y);

// Derivative of the bilinear sample with respect to (x, y). Writes the
// per-channel d/dx values to dx[0..c) and d/dy values to dy[0..c).
// Zero in a direction where the coordinate is clamped.
void sample_bilinear_grad(const Raster& img, double x, double y,
                          double* dx, double* dy);

// Each output pixel is the mean of its 2x2 block; partial blocks at odd
// borders average the available pixels. Output dims are ceil(dims / 2).
// Requires width, height >= 2.
Raster downsample2(const Raster& img);

// Bilinear 2x magnification with pixel-center alignment: output pixel i
// samples input coordinate i/2 - 0.25 (clamped at the border), so
// downsample2(upsample2(c)) == c for constant c.
Raster upsample2(const Raster& img);

// One of the 8 symmetries of the square: mirror across the vertical axis
// first (x -> w-1-x) if mirrored, then `rot` quarter turns.
struct DihedralElement {
    int rot = 0;        // quarter turns, 0..3
    bool mirrored = false;

    bool identity() const { return rot == 0 && !mirrored; }
    bool operator==(const DihedralElement&) const = default;
};

// All 8 group elements, identity first.
std::array<DihedralElement, 8> dihedral_elements();

// Group composition: apply `first`, then `second`.
DihedralElement dihedral_compose(DihedralElement second, DihedralElement first);
DihedralElement dihedral_inverse(DihedralElement g);

// Maps pixel (x, y) of a w x h raster to its location under g. The lattice
// maps exactly onto the transformed lattice (dims swap for odd rotations).
struct LatticeMap {
    int x, y;
};
LatticeMap dihedral_map_point(DihedralElement g, int x, int y, int w, int h);
void dihedral_out_dims(DihedralElement g, int w, int h, int& ow, int& oh);

// Linear part of g acting on displacement vectors, row-major 2x2.
std::array<double, 4> dihedral_linear(DihedralElement g);

Raster dihedral_apply(const Raster& img, DihedralElement g);

}  // namespace warpchain

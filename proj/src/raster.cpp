#include "warpchain/raster.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace warpchain {

Raster::Raster(int width, int height, int channels, double fill)
    : w_(width), h_(height), c_(channels) {
    if (width < 1 || height < 1 || channels < 1) {
        throw std::invalid_argument("Raster: dimensions must be >= 1, got " +
                                    std::to_string(width) + "x" + std::to_string(height) +
                                    "x" + std::to_string(channels));
    }
    data_.assign(std::int64_t(w_) * h_ * c_, fill);
}

void Raster::check_finite(const char* what) const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(what) + ": non-finite raster value");
        }
    }
}

namespace {

inline double clampd(double v, double lo, double hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace

void sample_bilinear(const Raster& img, double x, double y, double* out) {
    if (!std::isfinite(x) || !std::isfinite(y)) {
        throw std::invalid_argument("sample_bilinear: non-finite coordinate");
    }
    const int w = img.width(), h = img.height(), c = img.channels();
    x = clampd(x, 0.0, double(w - 1));
    y = clampd(y, 0.0, double(h - 1));
    int x0 = std::min(int(x), w - 2 >= 0 ? w - 2 : 0);
    int y0 = std::min(int(y), h - 2 >= 0 ? h - 2 : 0);
    if (w == 1) x0 = 0;
    if (h == 1) y0 = 0;
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    for (int k = 0; k < c; ++k) {
        const double top = img.at(x0, y0, k) * (1.0 - fx) + img.at(x1, y0, k) * fx;
        const double bot = img.at(x0, y1, k) * (1.0 - fx) + img.at(x1, y1, k) * fx;
        out[k] = top * (1.0 - fy) + bot * fy;
    }
}

std::vector<double> sample_bilinear(const Raster& img, double x, double y) {
    std::vector<double> out(img.channels());
    sample_bilinear(img, x, y, out.data());
    return out;
}

void sample_bilinear_grad(const Raster& img, double x, double y,
                          double* dx, double* dy) {
    if (!std::isfinite(x) || !std::isfinite(y)) {
        throw std::invalid_argument("sample_bilinear_grad: non-finite coordinate");
    }
    const int w = img.width(), h = img.height(), c = img.channels();
    const bool clamped_x = x <= 0.0 || x >= double(w - 1);
    const bool clamped_y = y <= 0.0 || y >= double(h - 1);
    x = clampd(x, 0.0, double(w - 1));
    y = clampd(y, 0.0, double(h - 1));
    int x0 = std::min(int(x), w - 2 >= 0 ? w - 2 : 0);
    int y0 = std::min(int(y), h - 2 >= 0 ? h - 2 : 0);
    if (w == 1) x0 = 0;
    if (h == 1) y0 = 0;
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    for (int k = 0; k < c; ++k) {
        const double v00 = img.at(x0, y0, k), v10 = img.at(x1, y0, k);
        const double v01 = img.at(x0, y1, k), v11 = img.at(x1, y1, k);
        dx[k] = clamped_x ? 0.0 : (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
        dy[k] = clamped_y ? 0.0 : (v01 - v00) * (1.0 - fx) + (v11 - v10) * fx;
    }
}

Raster downsample2(const Raster& img) {
    const int w = img.width(), h = img.height(), c = img.channels();
    if (w < 2 || h < 2) {
        throw std::invalid_argument("downsample2: needs width and height >= 2");
    }
    const int ow = (w + 1) / 2, oh = (h + 1) / 2;
    Raster out(ow, oh, c);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const int x0 = 2 * ox, y0 = 2 * oy;
            const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            const int nx = (x1 > x0) ? 2 : 1, ny = (y1 > y0) ? 2 : 1;
            for (int k = 0; k < c; ++k) {
                double s = img.at(x0, y0, k);
                if (x1 > x0) s += img.at(x1, y0, k);
                if (y1 > y0) s += img.at(x0, y1, k);
                if (x1 > x0 && y1 > y0) s += img.at(x1, y1, k);
                out.at(ox, oy, k) = s / (nx * ny);
            }
        }
    }
    return out;
}

Raster upsample2(const Raster& img) {
    const int w = img.width(), h = img.height(), c = img.channels();
    Raster out(2 * w, 2 * h, c);
    std::vector<double> buf(c);
    for (int oy = 0; oy < 2 * h; ++oy) {
        const double sy = 0.5 * oy - 0.25;
        for (int ox = 0; ox < 2 * w; ++ox) {
            const double sx = 0.5 * ox - 0.25;
            sample_bilinear(img, sx, sy, buf.data());
            for (int k = 0; k < c; ++k) out.at(ox, oy, k) = buf[k];
        }
    }
    return out;
}

std::array<DihedralElement, 8> dihedral_elements() {
    return {{{0, false}, {1, false}, {2, false}, {3, false},
             {0, true}, {1, true}, {2, true}, {3, true}}};
}

DihedralElement dihedral_compose(DihedralElement second, DihedralElement first) {
    DihedralElement out;
    out.rot = ((second.rot + (second.mirrored ? -first.rot : first.rot)) % 4 + 4) % 4;
    out.mirrored = second.mirrored != first.mirrored;
    return out;
}

DihedralElement dihedral_inverse(DihedralElement g) {
    if (g.mirrored) return g;
    return {(4 - g.rot) % 4, false};
}

LatticeMap dihedral_map_point(DihedralElement g, int x, int y, int w, int h) {
    if (g.mirrored) x = w - 1 - x;
    for (int r = 0; r < g.rot; ++r) {
        const int nx = h - 1 - y;
        const int ny = x;
        x = nx;
        y = ny;
        std::swap(w, h);
    }
    return {x, y};
}

void dihedral_out_dims(DihedralElement g, int w, int h, int& ow, int& oh) {
    if (g.rot % 2 == 1) {
        ow = h;
        oh = w;
    } else {
        ow = w;
        oh = h;
    }
}

std::array<double, 4> dihedral_linear(DihedralElement g) {
    // mirror M = diag(-1, 1), quarter turn Q = [[0,-1],[1,0]]; L = Q^rot * M^m.
    double a = g.mirrored ? -1.0 : 1.0, b = 0.0, c = 0.0, d = 1.0;
    for (int r = 0; r < g.rot; ++r) {
        const double na = -c, nb = -d;
        const double nc = a, nd = b;
        a = na; b = nb; c = nc; d = nd;
    }
    return {a, b, c, d};
}

Raster dihedral_apply(const Raster& img, DihedralElement g) {
    const int w = img.width(), h = img.height(), c = img.channels();
    int ow, oh;
    dihedral_out_dims(g, w, h, ow, oh);
    Raster out(ow, oh, c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const LatticeMap p = dihedral_map_point(g, x, y, w, h);
            for (int k = 0; k < c; ++k) out.at(p.x, p.y, k) = img.at(x, y, k);
        }
    }
    return out;
}

}  // namespace warpchain

#include "warpchain/deform.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "warpchain/rng.hpp"

namespace warpchain {

DeformationField::DeformationField(int width, int height) : w_(width), h_(height) {
    if (width < 1 || height < 1) {
        throw std::invalid_argument("DeformationField: dimensions must be >= 1");
    }
    d_.assign(std::int64_t(w_) * h_ * 2, 0.0);
}

void DeformationField::sample(double x, double y, double* out2) const {
    const double cx = std::clamp(x, 0.0, double(w_ - 1));
    const double cy = std::clamp(y, 0.0, double(h_ - 1));
    int x0 = std::min(int(cx), std::max(w_ - 2, 0));
    int y0 = std::min(int(cy), std::max(h_ - 2, 0));
    const int x1 = std::min(x0 + 1, w_ - 1);
    const int y1 = std::min(y0 + 1, h_ - 1);
    const double fx = cx - x0, fy = cy - y0;
    for (int k = 0; k < 2; ++k) {
        const double v00 = d_[2 * (std::int64_t(y0) * w_ + x0) + k];
        const double v10 = d_[2 * (std::int64_t(y0) * w_ + x1) + k];
        const double v01 = d_[2 * (std::int64_t(y1) * w_ + x0) + k];
        const double v11 = d_[2 * (std::int64_t(y1) * w_ + x1) + k];
        out2[k] = (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy;
    }
}

Raster DeformationField::to_raster() const {
    Raster r(w_, h_, 2);
    r.data() = d_;
    return r;
}

DeformationField DeformationField::from_raster(const Raster& r) {
    if (r.channels() != 2) {
        throw std::invalid_argument("DeformationField::from_raster: needs 2 channels");
    }
    DeformationField f(r.width(), r.height());
    f.data() = r.data();
    return f;
}

DeformationField identity_field(int w, int h) { return DeformationField(w, h); }

Raster warp(const Raster& img, const DeformationField& phi) {
    if (img.width() != phi.width() || img.height() != phi.height()) {
        throw std::invalid_argument("warp: image and field dimensions differ");
    }
    const int w = img.width(), h = img.height(), c = img.channels();
    Raster out(w, h, c);
    std::vector<double> buf(c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            sample_bilinear(img, x + phi.dx(x, y), y + phi.dy(x, y), buf.data());
            for (int k = 0; k < c; ++k) out.at(x, y, k) = buf[k];
        }
    }
    return out;
}

DeformationField compose(const DeformationField& phi, const DeformationField& f) {
    if (!phi.same_shape(f)) {
        throw std::invalid_argument("compose: field dimensions differ");
    }
    const int w = phi.width(), h = phi.height();
    DeformationField out(w, h);
    double d[2];
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double fx = f.dx(x, y), fy = f.dy(x, y);
            phi.sample(x + fx, y + fy, d);
            out.dx(x, y) = d[0] + fx;
            out.dy(x, y) = d[1] + fy;
        }
    }
    return out;
}

DeformationField add_fields(const DeformationField& a, const DeformationField& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add_fields: dimensions differ");
    DeformationField out = a;
    for (std::size_t i = 0; i < out.data().size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

DeformationField negate_field(const DeformationField& a) {
    DeformationField out = a;
    for (double& v : out.data()) v = -v;
    return out;
}

DeformationField scale_field(const DeformationField& a, double s) {
    DeformationField out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

DeformationField upsample_field(const DeformationField& phi) {
    Raster r = upsample2(phi.to_raster());
    for (double& v : r.data()) v *= 2.0;
    return DeformationField::from_raster(r);
}

DeformationField downsample_field(const DeformationField& phi) {
    const int ow = (phi.width() + 1) / 2, oh = (phi.height() + 1) / 2;
    DeformationField out(ow, oh);
    double d[2];
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            phi.sample(2.0 * x, 2.0 * y, d);
            out.dx(x, y) = 0.5 * d[0];
            out.dy(x, y) = 0.5 * d[1];
        }
    }
    return out;
}

namespace {

void check_spd(const GaussianBump& b) {
    const double det = b.sxx * b.syy - b.sxy * b.sxy;
    if (!(b.sxx > 0.0) || !(det > 0.0)) {
        throw std::invalid_argument("random_field: Si is not symmetric positive definite");
    }
}

}  // namespace

GaussianMixtureParams sample_params(const FieldGenRanges& ranges, std::uint64_t seed) {
    if (ranges.r < 0 || ranges.n_min < 0 || ranges.n_max < ranges.n_min ||
        ranges.sigma_min <= 0 || ranges.sigma_max < ranges.sigma_min ||
        ranges.width < 1 || ranges.height < 1) {
        throw std::invalid_argument("sample_params: invalid ranges");
    }
    Rng rng(derive_seed(seed, 0x6d61702d70726d73ull));
    GaussianMixtureParams p;
    p.r = ranges.r;
    p.v0x = rng.uniform(-ranges.r, ranges.r);
    p.v0y = rng.uniform(-ranges.r, ranges.r);
    const int n = rng.uniform_int(ranges.n_min, ranges.n_max);
    p.bumps.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        GaussianBump b;
        b.vx = rng.uniform(-ranges.shift_max, ranges.shift_max);
        b.vy = rng.uniform(-ranges.shift_max, ranges.shift_max);
        b.cx = rng.uniform(0.0, double(ranges.width - 1));
        b.cy = rng.uniform(0.0, double(ranges.height - 1));
        // Si = R^T diag(l1, l2) R with li = 1/(2 sigma_i^2): SPD by construction.
        const double s1 = rng.uniform(ranges.sigma_min, ranges.sigma_max);
        const double s2 = rng.uniform(ranges.sigma_min, ranges.sigma_max);
        const double l1 = 1.0 / (2.0 * s1 * s1), l2 = 1.0 / (2.0 * s2 * s2);
        const double th = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double ct = std::cos(th), st = std::sin(th);
        b.sxx = ct * ct * l1 + st * st * l2;
        b.syy = st * st * l1 + ct * ct * l2;
        b.sxy = ct * st * (l1 - l2);
        p.bumps.push_back(b);
    }
    return p;
}

DeformationField random_field(int w, int h, const GaussianMixtureParams& params) {
    for (const GaussianBump& b : params.bumps) check_spd(b);
    DeformationField out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double dx = params.v0x, dy = params.v0y;
            for (const GaussianBump& b : params.bumps) {
                const double ux = x - b.cx, uy = y - b.cy;
                const double q = b.sxx * ux * ux + 2.0 * b.sxy * ux * uy + b.syy * uy * uy;
                const double e = std::exp(-q);
                dx += b.vx * e;
                dy += b.vy * e;
            }
            out.dx(x, y) = dx;
            out.dy(x, y) = dy;
        }
    }
    return out;
}

double laplacian_penalty(const DeformationField& phi) {
    const int w = phi.width(), h = phi.height();
    if (w < 3 || h < 3) {
        throw std::invalid_argument("laplacian_penalty: field smaller than 3x3");
    }
    double total = 0.0;
    for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
            const double rx = phi.dx(x, y) - 0.25 * (phi.dx(x - 1, y) + phi.dx(x + 1, y) +
                                                     phi.dx(x, y - 1) + phi.dx(x, y + 1));
            const double ry = phi.dy(x, y) - 0.25 * (phi.dy(x - 1, y) + phi.dy(x + 1, y) +
                                                     phi.dy(x, y - 1) + phi.dy(x, y + 1));
            total += rx * rx + ry * ry;
        }
    }
    return total;
}

void laplacian_penalty_grad(const DeformationField& phi, std::vector<double>& grad) {
    const int w = phi.width(), h = phi.height();
    if (w < 3 || h < 3) {
        throw std::invalid_argument("laplacian_penalty_grad: field smaller than 3x3");
    }
    grad.assign(phi.data().size(), 0.0);
    auto gx = [&](int x, int y) -> double& { return grad[2 * (std::int64_t(y) * w + x)]; };
    auto gy = [&](int x, int y) -> double& { return grad[2 * (std::int64_t(y) * w + x) + 1]; };
    for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
            const double rx = phi.dx(x, y) - 0.25 * (phi.dx(x - 1, y) + phi.dx(x + 1, y) +
                                                     phi.dx(x, y - 1) + phi.dx(x, y + 1));
            const double ry = phi.dy(x, y) - 0.25 * (phi.dy(x - 1, y) + phi.dy(x + 1, y) +
                                                     phi.dy(x, y - 1) + phi.dy(x, y + 1));
            gx(x, y) += 2.0 * rx;
            gy(x, y) += 2.0 * ry;
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int k = 0; k < 4; ++k) {
                gx(nx[k], ny[k]) -= 0.5 * rx;
                gy(nx[k], ny[k]) -= 0.5 * ry;
            }
        }
    }
}

DeformationField conjugate_field(const DeformationField& phi, DihedralElement g) {
    // phi lives on the g-transformed lattice; pull it back.
    int tw, th;
    const int gw = phi.width(), gh = phi.height();
    // original dims: applying g to (ow, oh) gave (gw, gh)
    dihedral_out_dims(g, gw, gh, tw, th);  // rot odd swaps back, rot even keeps
    const int ow = tw, oh = th;
    const std::array<double, 4> L = dihedral_linear(g);
    // inverse of an orthogonal matrix is its transpose
    const double ia = L[0], ib = L[2], ic = L[1], id = L[3];
    DeformationField out(ow, oh);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const LatticeMap p = dihedral_map_point(g, x, y, ow, oh);
            const double vx = phi.dx(p.x, p.y), vy = phi.dy(p.x, p.y);
            out.dx(x, y) = ia * vx + ib * vy;
            out.dy(x, y) = ic * vx + id * vy;
        }
    }
    return out;
}

Raster endpoint_error(const DeformationField& predicted, const DeformationField& truth,
                      EndpointStats* stats) {
    if (!predicted.same_shape(truth)) {
        throw std::invalid_argument("endpoint_error: field dimensions differ");
    }
    const int w = predicted.width(), h = predicted.height();
    Raster out(w, h, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double ex = predicted.dx(x, y) - truth.dx(x, y);
            const double ey = predicted.dy(x, y) - truth.dy(x, y);
            out.at(x, y, 0) = std::hypot(ex, ey);
        }
    }
    if (stats) {
        std::vector<double> v = out.data();
        double sum = 0.0, mx = 0.0;
        for (double e : v) {
            sum += e;
            mx = std::max(mx, e);
        }
        std::sort(v.begin(), v.end());
        stats->mean = sum / double(v.size());
        stats->max = mx;
        const std::size_t n = v.size();
        stats->median = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    }
    return out;
}

}  // namespace warpchain

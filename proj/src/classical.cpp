#include "warpchain/classical.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace warpchain {

namespace {

// Catmull-Rom (Keys, a = -0.5) interpolation: C^1, reproduces pixel
// values at integer positions, and its derivative there equals the
// central-difference stencil. The criterion and its gradient both use
// it, so the analytic gradient is the exact derivative of the computed
// criterion.
inline void keys_weights(double t, double* w, double* dw) {
    const double t2 = t * t, t3 = t2 * t;
    w[0] = -0.5 * t3 + t2 - 0.5 * t;
    w[1] = 1.5 * t3 - 2.5 * t2 + 1.0;
    w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
    w[3] = 0.5 * t3 - 0.5 * t2;
    if (dw) {
        dw[0] = -1.5 * t2 + 2.0 * t - 0.5;
        dw[1] = 4.5 * t2 - 5.0 * t;
        dw[2] = -4.5 * t2 + 4.0 * t + 0.5;
        dw[3] = 1.5 * t2 - t;
    }
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// cubic sample with edge replication; dx/dy optional derivatives
void sample_keys(const Raster& img, double x, double y, double* out, double* dx, double* dy) {
    const int w = img.width(), h = img.height(), c = img.channels();
    const bool cx = x <= 0.0 || x >= double(w - 1);
    const bool cy = y <= 0.0 || y >= double(h - 1);
    x = std::clamp(x, 0.0, double(w - 1));
    y = std::clamp(y, 0.0, double(h - 1));
    const int x0 = std::min(int(x), w - 1), y0 = std::min(int(y), h - 1);
    const double fx = x - x0, fy = y - y0;
    double wx[4], dwx[4], wy[4], dwy[4];
    keys_weights(fx, wx, dwx);
    keys_weights(fy, wy, dwy);
    for (int ch = 0; ch < c; ++ch) {
        double v = 0.0, gx = 0.0, gy = 0.0;
        for (int j = 0; j < 4; ++j) {
            const int yy = clampi(y0 + j - 1, 0, h - 1);
            double row = 0.0, drow = 0.0;
            for (int i = 0; i < 4; ++i) {
                const int xx = clampi(x0 + i - 1, 0, w - 1);
                const double p = img.at(xx, yy, ch);
                row += wx[i] * p;
                drow += dwx[i] * p;
            }
            v += wy[j] * row;
            gx += wy[j] * drow;
            gy += dwy[j] * row;
        }
        out[ch] = v;
        if (dx) dx[ch] = cx ? 0.0 : gx;
        if (dy) dy[ch] = cy ? 0.0 : gy;
    }
}

Raster warp_keys(const Raster& img, const DeformationField& phi) {
    const int w = img.width(), h = img.height(), c = img.channels();
    Raster out(w, h, c);
    std::vector<double> buf(static_cast<std::size_t>(c));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            sample_keys(img, x + phi.dx(x, y), y + phi.dy(x, y), buf.data(), nullptr, nullptr);
            for (int k = 0; k < c; ++k) out.at(x, y, k) = buf[k];
        }
    }
    return out;
}

}  // namespace

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
    // taps at integer offsets |k| < 3 sigma
    const int radius = std::max(1, int(std::ceil(3.0 * sigma)) - 1);
    std::vector<double> k(std::size_t(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
        k[std::size_t(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

namespace {

// separable zero-padded convolution
Raster conv_zeropad(const Raster& in, const std::vector<double>& k) {
    const int w = in.width(), h = in.height(), c = in.channels();
    const int radius = int(k.size() / 2);
    Raster tmp(w, h, c), out(w, h, c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int xx = x + i;
                    if (xx >= 0 && xx < w) s += k[std::size_t(i + radius)] * in.at(xx, y, ch);
                }
                tmp.at(x, y, ch) = s;
            }
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int yy = y + i;
                    if (yy >= 0 && yy < h) s += k[std::size_t(i + radius)] * tmp.at(x, yy, ch);
                }
                out.at(x, y, ch) = s;
            }
        }
    }
    return out;
}

// local kernel mass (what the zero-padded kernel sums to at each pixel);
// dividing by it keeps constants constant near borders.
Raster kernel_mass(int w, int h, const std::vector<double>& k) {
    const int radius = int(k.size() / 2);
    std::vector<double> mx(static_cast<std::size_t>(w)), my(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) {
            if (x + i >= 0 && x + i < w) s += k[std::size_t(i + radius)];
        }
        mx[std::size_t(x)] = s;
    }
    for (int y = 0; y < h; ++y) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) {
            if (y + i >= 0 && y + i < h) s += k[std::size_t(i + radius)];
        }
        my[std::size_t(y)] = s;
    }
    Raster m(w, h, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) m.at(x, y, 0) = mx[std::size_t(x)] * my[std::size_t(y)];
    }
    return m;
}

// A(in) = conv(in) / mass : normalized local averaging
Raster smooth_normalized(const Raster& in, const std::vector<double>& k, const Raster& mass) {
    Raster out = conv_zeropad(in, k);
    const int w = in.width(), h = in.height(), c = in.channels();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) out.at(x, y, ch) /= mass.at(x, y, 0);
        }
    }
    return out;
}

// adjoint of smooth_normalized: conv(in / mass)
Raster smooth_adjoint(const Raster& in, const std::vector<double>& k, const Raster& mass) {
    Raster tmp = in;
    const int w = in.width(), h = in.height(), c = in.channels();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) tmp.at(x, y, ch) /= mass.at(x, y, 0);
        }
    }
    return conv_zeropad(tmp, k);
}

void check_descriptor(const Descriptor& d) {
    if (d.kind != DescriptorKind::RawIntensity && !(d.sigma > 0.0)) {
        throw std::invalid_argument("describe: sigma must be > 0 for smoothed descriptors");
    }
}

struct LccParts {
    Raster features;   // (W - mu) / s
    Raster mu, t;      // local mean and 1/s, kept for the gradient
};

LccParts lcc_describe(const Raster& img, const std::vector<double>& k, const Raster& mass,
                      double eps) {
    const int w = img.width(), h = img.height(), c = img.channels();
    LccParts parts{Raster(w, h, c), Raster(w, h, c), Raster(w, h, c)};
    parts.mu = smooth_normalized(img, k, mass);
    Raster sq(w, h, c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) sq.at(x, y, ch) = img.at(x, y, ch) * img.at(x, y, ch);
        }
    }
    const Raster q = smooth_normalized(sq, k, mass);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                const double mu = parts.mu.at(x, y, ch);
                const double var = std::max(0.0, q.at(x, y, ch) - mu * mu);
                const double t = 1.0 / std::sqrt(var + eps);
                parts.t.at(x, y, ch) = t;
                parts.features.at(x, y, ch) = (img.at(x, y, ch) - mu) * t;
            }
        }
    }
    return parts;
}

}  // namespace

Raster describe(const Raster& img, const Descriptor& d, double eps) {
    check_descriptor(d);
    switch (d.kind) {
        case DescriptorKind::RawIntensity:
            return img;
        case DescriptorKind::GaussianSmoothed: {
            const std::vector<double> k = gaussian_kernel(d.sigma);
            const Raster mass = kernel_mass(img.width(), img.height(), k);
            return smooth_normalized(img, k, mass);
        }
        case DescriptorKind::LocalCrossCorrelation: {
            const std::vector<double> k = gaussian_kernel(d.sigma);
            const Raster mass = kernel_mass(img.width(), img.height(), k);
            return lcc_describe(img, k, mass, eps).features;
        }
    }
    throw std::logic_error("describe: unknown descriptor kind");
}

double criterion(const Raster& i1, const Raster& i2, const DeformationField& phi,
                 const Descriptor& d) {
    if (!i1.same_shape(i2) || i1.width() != phi.width() || i1.height() != phi.height()) {
        throw std::invalid_argument("criterion: dimension mismatch");
    }
    const Raster fw = describe(warp_keys(i1, phi), d);
    const Raster f2 = describe(i2, d);
    double s = 0.0;
    for (std::size_t i = 0; i < fw.data().size(); ++i) {
        const double e = fw.data()[i] - f2.data()[i];
        s += e * e;
    }
    return s;
}

DeformationField criterion_gradient(const Raster& i1, const Raster& i2,
                                    const DeformationField& phi, const Descriptor& d) {
    if (!i1.same_shape(i2) || i1.width() != phi.width() || i1.height() != phi.height()) {
        throw std::invalid_argument("criterion_gradient: dimension mismatch");
    }
    check_descriptor(d);
    const int w = i1.width(), h = i1.height(), c = i1.channels();
    const Raster warped = warp_keys(i1, phi);

    // dC/dW, the sensitivity of the criterion to the warped image
    Raster dcdw(w, h, c);
    if (d.kind == DescriptorKind::RawIntensity) {
        for (std::size_t i = 0; i < dcdw.data().size(); ++i) {
            dcdw.data()[i] = 2.0 * (warped.data()[i] - i2.data()[i]);
        }
    } else if (d.kind == DescriptorKind::GaussianSmoothed) {
        const std::vector<double> k = gaussian_kernel(d.sigma);
        const Raster mass = kernel_mass(w, h, k);
        Raster r = smooth_normalized(warped, k, mass);
        const Raster f2 = smooth_normalized(i2, k, mass);
        for (std::size_t i = 0; i < r.data().size(); ++i) r.data()[i] -= f2.data()[i];
        dcdw = smooth_adjoint(r, k, mass);
        for (double& v : dcdw.data()) v *= 2.0;
    } else {
        const std::vector<double> k = gaussian_kernel(d.sigma);
        const Raster mass = kernel_mass(w, h, k);
        const LccParts pw = lcc_describe(warped, k, mass, 1e-6);
        const LccParts p2 = lcc_describe(i2, k, mass, 1e-6);
        Raster r(w, h, c), rt(w, h, c), rlt2(w, h, c), rlt2mu(w, h, c);
        for (std::size_t i = 0; i < r.data().size(); ++i) {
            const double ri = pw.features.data()[i] - p2.features.data()[i];
            const double t = pw.t.data()[i];
            const double L = pw.features.data()[i];
            r.data()[i] = ri;
            rt.data()[i] = ri * t;
            rlt2.data()[i] = ri * L * t * t;
            rlt2mu.data()[i] = ri * L * t * t * pw.mu.data()[i];
        }
        const Raster a1 = smooth_adjoint(rt, k, mass);
        const Raster a2 = smooth_adjoint(rlt2, k, mass);
        const Raster a3 = smooth_adjoint(rlt2mu, k, mass);
        for (std::size_t i = 0; i < dcdw.data().size(); ++i) {
            dcdw.data()[i] = 2.0 * (rt.data()[i] - a1.data()[i] -
                                    warped.data()[i] * a2.data()[i] + a3.data()[i]);
        }
    }

    DeformationField grad(w, h);
    std::vector<double> val(static_cast<std::size_t>(c));
    std::vector<double> gx(static_cast<std::size_t>(c)), gy(static_cast<std::size_t>(c));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            sample_keys(i1, x + phi.dx(x, y), y + phi.dy(x, y), val.data(), gx.data(),
                        gy.data());
            double sx = 0.0, sy = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double s = dcdw.at(x, y, ch);
                sx += s * gx[std::size_t(ch)];
                sy += s * gy[std::size_t(ch)];
            }
            grad.dx(x, y) = sx;
            grad.dy(x, y) = sy;
        }
    }
    return grad;
}

void DescentConfig::validate() const {
    if (!(step > 0.0)) throw std::invalid_argument("DescentConfig: step must be > 0");
    if (max_iters < 0) throw std::invalid_argument("DescentConfig: negative iteration count");
    if (tol < 0.0) throw std::invalid_argument("DescentConfig: negative tolerance");
    for (std::size_t i = 1; i < sigmas.size(); ++i) {
        if (!(sigmas[i] < sigmas[i - 1])) {
            throw std::invalid_argument("DescentConfig: sigma schedule must strictly decrease");
        }
    }
}

namespace {

double objective(const Raster& i1, const Raster& i2, const DeformationField& phi,
                 const Descriptor& d, double lambda) {
    double f = criterion(i1, i2, phi, d);
    if (lambda != 0.0) f += lambda * laplacian_penalty(phi);
    return f;
}

DescentResult descend_from(const Raster& i1, const Raster& i2, const DescentConfig& cfg,
                           Descriptor desc, DeformationField field) {
    cfg.validate();
    DescentResult res{std::move(field), {}};
    const int nsig = int(cfg.sigmas.size());
    int cur = -1;
    if (nsig > 0) {
        cur = 0;
        desc.sigma = cfg.sigmas[0];
    }
    double f = objective(i1, i2, res.field, desc, cfg.lambda_reg);
    res.trace.objective.push_back(f);
    std::vector<double> pgrad;
    for (int it = 0; it < cfg.max_iters; ++it) {
        if (nsig > 0) {
            const int idx = std::min(nsig - 1, it * nsig / std::max(1, cfg.max_iters));
            if (idx != cur) {
                cur = idx;
                desc.sigma = cfg.sigmas[std::size_t(idx)];
                f = objective(i1, i2, res.field, desc, cfg.lambda_reg);
                res.trace.switch_iters.push_back(int(res.trace.objective.size()));
                res.trace.objective.push_back(f);
            }
        }
        if (!std::isfinite(f)) {
            throw std::runtime_error("descend: non-finite criterion at iteration " +
                                     std::to_string(it));
        }
        DeformationField g = criterion_gradient(i1, i2, res.field, desc);
        if (cfg.lambda_reg != 0.0) {
            laplacian_penalty_grad(res.field, pgrad);
            for (std::size_t i = 0; i < g.data().size(); ++i) {
                g.data()[i] += cfg.lambda_reg * pgrad[i];
            }
        }
        double gnorm2 = 0.0;
        for (double v : g.data()) gnorm2 += v * v;
        if (gnorm2 == 0.0) {
            res.trace.converged = true;
            break;
        }
        // backtracking: halve the step until the objective decreases
        double alpha = cfg.step;
        bool accepted = false;
        DeformationField trial(res.field.width(), res.field.height());
        for (int t = 0; t < 20 && !accepted; ++t, alpha *= 0.5) {
            for (std::size_t i = 0; i < trial.data().size(); ++i) {
                trial.data()[i] = res.field.data()[i] - alpha * g.data()[i];
            }
            const double ftry = objective(i1, i2, trial, desc, cfg.lambda_reg);
            if (ftry < f) {
                const double decrease = f - ftry;
                res.field = trial;
                f = ftry;
                res.trace.objective.push_back(f);
                accepted = true;
                if (decrease < cfg.tol) {
                    res.trace.converged = true;
                    it = cfg.max_iters;  // stop outer loop
                }
            }
        }
        if (!accepted) {
            res.trace.converged = true;
            break;
        }
    }
    return res;
}

DeformationField crop_field(const DeformationField& f, int w, int h) {
    DeformationField out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            out.dx(x, y) = f.dx(x, y);
            out.dy(x, y) = f.dy(x, y);
        }
    }
    return out;
}

}  // namespace

DescentResult descend(const Raster& i1, const Raster& i2, const DescentConfig& cfg,
                      const Descriptor& d) {
    return descend_from(i1, i2, cfg, d, identity_field(i1.width(), i1.height()));
}

DeformationField multires_align(const Raster& i1, const Raster& i2,
                                const DescentConfig& cfg, const Descriptor& d, int levels) {
    if (levels < 1) throw std::invalid_argument("multires_align: levels must be >= 1");
    if (i1.width() < (1 << (levels - 1)) || i1.height() < (1 << (levels - 1))) {
        throw std::invalid_argument("multires_align: image too small for level count");
    }
    std::vector<Raster> p1{i1}, p2{i2};
    for (int l = 1; l < levels; ++l) {
        p1.push_back(downsample2(p1.back()));
        p2.push_back(downsample2(p2.back()));
    }
    DeformationField field = identity_field(p1.back().width(), p1.back().height());
    for (int l = levels - 1; l >= 0; --l) {
        field = descend_from(p1[std::size_t(l)], p2[std::size_t(l)], cfg, d, std::move(field))
                    .field;
        if (l > 0) {
            field = upsample_field(field);
            field = crop_field(field, p1[std::size_t(l - 1)].width(),
                               p1[std::size_t(l - 1)].height());
        }
    }
    return field;
}

}  // namespace warpchain

#include "warpchain/net.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "warpchain/rng.hpp"
#include "warpchain/vecmap.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace warpchain {

namespace {

int scaled_filters(int base, double mult) {
    return std::max(1, int(std::lround(base * mult)));
}

template <typename T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

template <typename T>
std::int64_t NetT<T>::parameter_count() const {
    std::int64_t n = 0;
    for (const ConvParams<T>& p : params) {
        n += std::int64_t(p.k) * p.k * p.cin * p.cout + p.cout;
    }
    return n;
}

template <typename T>
NetT<T> build_scale_net_t(int channels_a, int channels_b, double width_mult) {
    if (channels_a < 1 || channels_b < 1) {
        throw std::invalid_argument("build_scale_net: channel counts must be >= 1");
    }
    if (!(width_mult > 0.0) || width_mult > 1.0) {
        throw std::invalid_argument("build_scale_net: width_mult must be in (0, 1]");
    }
    NetT<T> net;
    net.channels_a = channels_a;
    net.channels_b = channels_b;
    net.width_mult = width_mult;

    const int f16 = scaled_filters(16, width_mult);
    const int f32 = scaled_filters(32, width_mult);
    const int f64 = scaled_filters(64, width_mult);

    std::vector<int> out_ch;  // channel bookkeeping while building
    auto add = [&](LayerSpec spec, int channels) {
        for (int in : spec.inputs) {
            if (in < 0 || in >= int(net.layers.size())) {
                throw std::invalid_argument("build_scale_net: layer '" + spec.name +
                                            "' references a later or missing layer");
            }
        }
        net.layers.push_back(std::move(spec));
        out_ch.push_back(channels);
        return int(net.layers.size()) - 1;
    };
    auto conv = [&](const std::string& name, int in, int k, int f, bool relu) {
        return add({LayerOp::Conv, name, k, f, (k - 1) / 2, 1, relu, {in}}, f);
    };
    auto pool = [&](const std::string& name, int in) {
        return add({LayerOp::Pool, name, 2, 0, 0, 2, false, {in}}, out_ch[std::size_t(in)]);
    };
    auto upconv = [&](const std::string& name, int in, int f) {
        return add({LayerOp::Upconv, name, 3, f, 1, 1, true, {in}}, f);
    };
    auto concat = [&](const std::string& name, int a, int b) {
        return add({LayerOp::Concat, name, 0, 0, 0, 1, false, {a, b}},
                   out_ch[std::size_t(a)] + out_ch[std::size_t(b)]);
    };

    const int in_a = add({LayerOp::Input, "input_a", 0, 0, 0, 1, false, {}}, channels_a);
    const int in_b = add({LayerOp::Input, "input_b", 0, 0, 0, 1, false, {}}, channels_b);

    // encoder pyramid per modality: 5x5 x2, pool, 3x3 x2, pool, 3x3 x2
    auto encoder = [&](const char* tag, int input) {
        const int c1 = conv(std::string("conv1") + tag, input, 5, f16, true);
        const int c2 = conv(std::string("conv2") + tag, c1, 5, f32, true);
        const int p1 = pool(std::string("pool1") + tag, c2);
        const int c3 = conv(std::string("conv3") + tag, p1, 3, f32, true);
        const int c4 = conv(std::string("conv4") + tag, c3, 3, f32, true);
        const int p2 = pool(std::string("pool2") + tag, c4);
        const int c5 = conv(std::string("conv5") + tag, p2, 3, f64, true);
        const int c6 = conv(std::string("conv6") + tag, c5, 3, f64, true);
        return std::array<int, 3>{c2, c4, c6};  // full / half / quarter taps
    };
    const auto ta = encoder("a", in_a);
    const auto tb = encoder("b", in_b);

    // the two pyramids are concatenated once per scale
    const int cat_full = concat("concat_full", ta[0], tb[0]);
    const int cat_half = concat("concat_half", ta[1], tb[1]);
    const int cat_quarter = concat("concat_quarter", ta[2], tb[2]);

    const int c7 = conv("conv7", cat_full, 3, f32, true);
    const int c8 = conv("conv8", c7, 3, f32, true);
    const int c9 = conv("conv9", cat_half, 3, f64, true);
    const int c10 = conv("conv10", c9, 3, f64, true);

    const int c11 = conv("conv11", cat_quarter, 3, f64, true);
    const int c12 = conv("conv12", c11, 3, f64, true);
    const int up1 = upconv("upconv1", c12, f64);
    const int cat4 = concat("concat4", c10, up1);
    const int c11b = conv("conv17", cat4, 3, f64, true);
    const int c18 = conv("conv18", c11b, 3, f64, true);
    const int up2 = upconv("upconv2", c18, f32);
    const int cat5 = concat("concat5", c8, up2);
    const int c13 = conv("conv13", cat5, 3, f64, true);
    const int c14 = conv("conv14", c13, 3, f64, true);
    const int c15 = conv("conv15", c14, 3, f32, true);
    conv("conv16", c15, 3, 2, false);  // linear 2-channel output

    // allocate parameter tensors
    net.params.resize(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& s = net.layers[i];
        if (s.op != LayerOp::Conv && s.op != LayerOp::Upconv) continue;
        ConvParams<T>& p = net.params[i];
        p.k = s.kernel;
        p.cin = out_ch[std::size_t(s.inputs[0])];
        p.cout = s.filters;
        if (s.kernel % 2 != 1 || s.pad != (s.kernel - 1) / 2) {
            throw std::invalid_argument("build_scale_net: conv must be odd-kernel, same-pad");
        }
        p.w.assign(std::size_t(p.k) * p.k * p.cin * p.cout, T(0));
        p.b.assign(std::size_t(p.cout), T(0));
    }
    return net;
}

ScaleNet build_scale_net(int channels_a, int channels_b, double width_mult) {
    return build_scale_net_t<float>(channels_a, channels_b, width_mult);
}

template <typename T>
void xavier_init(NetT<T>& net, std::uint64_t seed) {
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        ConvParams<T>& p = net.params[i];
        if (p.w.empty()) continue;
        const double fan_in = double(p.k) * p.k * p.cin;
        const double fan_out = double(p.k) * p.k * p.cout;
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        Rng rng(derive_seed(seed, 0x78617669ull, i));
        for (T& w : p.w) w = T(rng.uniform(-a, a));
        std::fill(p.b.begin(), p.b.end(), T(0));
    }
}

namespace {

template <typename T>
using StridedMap = Eigen::Map<const MatT<T>, 0, Eigen::OuterStride<>>;

// Convolution as k row-band matrix products over a padded copy of the
// input: band dy of the weights multiplies an overlapping strided view of
// the padded image (consecutive output pixels advance by one pixel's
// channels). The wide result carries 2*pad junk columns per row that are
// dropped when copying out; no gather matrix is ever materialized.
template <typename T>
struct ConvScratch {
    std::vector<T> pad_buf, wide, wflip;
};

template <typename T>
ConvScratch<T>& conv_scratch() {
    static thread_local ConvScratch<T> s;
    return s;
}

// copy `t` into a zeroed buffer with `pad` extra rows/columns on each
// side plus k*c slack for the overlapping map's tail reads
template <typename T>
void pad_tensor(const TensorT<T>& t, int pad, int k, std::vector<T>& buf) {
    const int wp = t.w + 2 * pad;
    const std::size_t need = std::size_t(t.h + 2 * pad) * wp * t.c + std::size_t(k) * t.c;
    buf.assign(need, T(0));
    for (int y = 0; y < t.h; ++y) {
        std::copy(t.v.data() + std::size_t(y) * t.w * t.c,
                  t.v.data() + std::size_t(y + 1) * t.w * t.c,
                  buf.data() + (std::size_t(y + pad) * wp + pad) * t.c);
    }
}

template <typename T>
void conv_forward(const TensorT<T>& in, const ConvParams<T>& p, int pad, bool relu,
                  TensorT<T>& out, unsigned long long* macs) {
    const int k = p.k, c = p.cin, co = p.cout;
    const int wp = in.w + 2 * pad;
    ConvScratch<T>& ws = conv_scratch<T>();
    pad_tensor(in, pad, k, ws.pad_buf);
    const std::size_t M = std::size_t(in.h) * wp;
    ws.wide.resize(M * std::size_t(co));
    Eigen::Map<MatT<T>> wide(ws.wide.data(), Eigen::Index(M), Eigen::Index(co));
    for (int dy = 0; dy < k; ++dy) {
        StridedMap<T> band(ws.pad_buf.data() + std::size_t(dy) * wp * c, Eigen::Index(M),
                           Eigen::Index(k * c), Eigen::OuterStride<>(c));
        Eigen::Map<const MatT<T>> wband(p.w.data() + std::size_t(dy) * k * c * co,
                                        Eigen::Index(k * c), Eigen::Index(co));
        if (dy == 0) {
            wide.noalias() = band * wband;
        } else {
            wide.noalias() += band * wband;
        }
    }
    out = TensorT<T>(in.h, in.w, co);
    const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(p.b.data(),
                                                                     Eigen::Index(co));
    for (int y = 0; y < in.h; ++y) {
        Eigen::Map<MatT<T>> orow(out.v.data() + std::size_t(y) * in.w * co,
                                 Eigen::Index(in.w), Eigen::Index(co));
        Eigen::Map<const MatT<T>> wrow(ws.wide.data() + std::size_t(y) * wp * co,
                                       Eigen::Index(in.w), Eigen::Index(co));
        orow = wrow;
        orow.rowwise() += bias;
    }
    if (relu) {
        for (T& v : out.v) v = v > T(0) ? v : T(0);
    }
    if (macs) {
        *macs += static_cast<unsigned long long>(in.h) * in.w * k * k * c * co;
    }
}

// gradients of one conv layer: dW/db from the cached input, plus the
// input gradient (a convolution of dY with the flipped, transposed
// weights, realized with the same row-band scheme)
template <typename T>
void conv_backward(const TensorT<T>& in, const ConvParams<T>& p, int pad,
                   const TensorT<T>& dy, ConvParams<T>& gp, TensorT<T>& din) {
    const int k = p.k, c = p.cin, co = p.cout;
    const int h = in.h, w = in.w;
    const int wp = w + 2 * pad;
    ConvScratch<T>& ws = conv_scratch<T>();

    // dW: band^T * dy_wide, with dy embedded in padded-width layout so the
    // junk columns contribute zero
    pad_tensor(in, pad, k, ws.pad_buf);
    const std::size_t M = std::size_t(h) * wp;
    ws.wide.assign(M * std::size_t(co), T(0));
    for (int y = 0; y < h; ++y) {
        std::copy(dy.v.data() + std::size_t(y) * w * co,
                  dy.v.data() + std::size_t(y + 1) * w * co,
                  ws.wide.data() + std::size_t(y) * wp * co);
    }
    Eigen::Map<const MatT<T>> dyw(ws.wide.data(), Eigen::Index(M), Eigen::Index(co));
    for (int dyk = 0; dyk < k; ++dyk) {
        StridedMap<T> band(ws.pad_buf.data() + std::size_t(dyk) * wp * c, Eigen::Index(M),
                           Eigen::Index(k * c), Eigen::OuterStride<>(c));
        Eigen::Map<MatT<T>> gw(gp.w.data() + std::size_t(dyk) * k * c * co,
                               Eigen::Index(k * c), Eigen::Index(co));
        gw.noalias() += band.transpose() * dyw;
    }
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(gp.b.data(), Eigen::Index(co));
    for (int y = 0; y < h; ++y) {
        Eigen::Map<const MatT<T>> dyrow(dy.v.data() + std::size_t(y) * w * co,
                                        Eigen::Index(w), Eigen::Index(co));
        gb += dyrow.colwise().sum();
    }

    // dX = conv(dY, W flipped and transposed); same-pad odd kernels keep
    // the same padding
    ws.wflip.resize(std::size_t(k) * k * co * c);
    for (int a = 0; a < k; ++a) {
        for (int b = 0; b < k; ++b) {
            const T* src = p.w.data() + (std::size_t(k - 1 - a) * k + (k - 1 - b)) * c * co;
            T* dst = ws.wflip.data() + (std::size_t(a) * k + b) * co * c;
            for (int ci = 0; ci < c; ++ci) {
                for (int cj = 0; cj < co; ++cj) dst[std::size_t(cj) * c + ci] = src[std::size_t(ci) * co + cj];
            }
        }
    }
    pad_tensor(dy, pad, k, ws.pad_buf);
    ws.wide.resize(M * std::size_t(c));
    Eigen::Map<MatT<T>> dxw(ws.wide.data(), Eigen::Index(M), Eigen::Index(c));
    for (int a = 0; a < k; ++a) {
        StridedMap<T> band(ws.pad_buf.data() + std::size_t(a) * wp * co, Eigen::Index(M),
                           Eigen::Index(k * co), Eigen::OuterStride<>(co));
        Eigen::Map<const MatT<T>> wband(ws.wflip.data() + std::size_t(a) * k * co * c,
                                        Eigen::Index(k * co), Eigen::Index(c));
        if (a == 0) {
            dxw.noalias() = band * wband;
        } else {
            dxw.noalias() += band * wband;
        }
    }
    for (int y = 0; y < h; ++y) {
        Eigen::Map<MatT<T>> drow(din.v.data() + std::size_t(y) * w * c, Eigen::Index(w),
                                 Eigen::Index(c));
        Eigen::Map<const MatT<T>> srow(ws.wide.data() + std::size_t(y) * wp * c,
                                       Eigen::Index(w), Eigen::Index(c));
        drow += srow;
    }
}

template <typename T>
void nearest_up2(const TensorT<T>& in, TensorT<T>& out) {
    out = TensorT<T>(in.h * 2, in.w * 2, in.c);
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
            const T* src = in.v.data() + (std::size_t(y / 2) * in.w + x / 2) * in.c;
            T* dst = out.v.data() + (std::size_t(y) * out.w + x) * out.c;
            for (int ch = 0; ch < in.c; ++ch) dst[ch] = src[ch];
        }
    }
}

template <typename T>
TensorT<T> raster_to_tensor(const Raster& r) {
    TensorT<T> t(r.height(), r.width(), r.channels());
    for (std::size_t i = 0; i < t.v.size(); ++i) t.v[i] = T(r.data()[i]);
    return t;
}

}  // namespace

template <typename T>
DeformationField forward(const NetT<T>& net, const Raster& i1, const Raster& i2,
                         ForwardCache<T>* cache, unsigned long long* macs) {
    if (i1.width() != i2.width() || i1.height() != i2.height()) {
        throw std::invalid_argument("forward: input dimensions differ");
    }
    if (i1.channels() != net.channels_a || i2.channels() != net.channels_b) {
        throw std::invalid_argument("forward: channel counts do not match the network");
    }
    if (i1.width() % 4 != 0 || i1.height() % 4 != 0) {
        throw std::invalid_argument("forward: spatial dims must be divisible by 4");
    }
    ForwardCache<T> local;
    ForwardCache<T>& cc = cache ? *cache : local;
    cc.acts.assign(net.layers.size(), {});
    cc.pool_argmax.assign(net.layers.size(), {});
    cc.in_h = i1.height();
    cc.in_w = i1.width();
    cc.valid = true;

    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& s = net.layers[li];
        TensorT<T>& out = cc.acts[li];
        switch (s.op) {
            case LayerOp::Input:
                out = raster_to_tensor<T>(li == 0 ? i1 : i2);
                break;
            case LayerOp::Conv:
                conv_forward(cc.acts[std::size_t(s.inputs[0])], net.params[li], s.pad, s.relu,
                             out, macs);
                break;
            case LayerOp::Pool: {
                const TensorT<T>& in = cc.acts[std::size_t(s.inputs[0])];
                if (in.h % 2 != 0 || in.w % 2 != 0) {
                    throw std::invalid_argument("forward: odd dims at pooling layer " + s.name);
                }
                out = TensorT<T>(in.h / 2, in.w / 2, in.c);
                std::vector<std::int32_t>& arg = cc.pool_argmax[li];
                arg.assign(out.v.size(), 0);
                for (int y = 0; y < out.h; ++y) {
                    for (int x = 0; x < out.w; ++x) {
                        for (int ch = 0; ch < in.c; ++ch) {
                            T best{};
                            std::int32_t bi = -1;
                            for (int dy = 0; dy < 2; ++dy) {
                                for (int dx = 0; dx < 2; ++dx) {
                                    const std::int32_t idx = std::int32_t(
                                        (std::size_t(2 * y + dy) * in.w + 2 * x + dx) * in.c + ch);
                                    const T v = in.v[std::size_t(idx)];
                                    if (bi < 0 || v > best) {
                                        best = v;
                                        bi = idx;
                                    }
                                }
                            }
                            out.at(y, x, ch) = best;
                            arg[(std::size_t(y) * out.w + x) * out.c + ch] = bi;
                        }
                    }
                }
                break;
            }
            case LayerOp::Upconv: {
                TensorT<T> up;
                nearest_up2(cc.acts[std::size_t(s.inputs[0])], up);
                conv_forward(up, net.params[li], s.pad, s.relu, out, macs);
                break;
            }
            case LayerOp::Concat: {
                const TensorT<T>& a = cc.acts[std::size_t(s.inputs[0])];
                const TensorT<T>& b = cc.acts[std::size_t(s.inputs[1])];
                if (a.h != b.h || a.w != b.w) {
                    throw std::invalid_argument("forward: concat size mismatch at " + s.name);
                }
                out = TensorT<T>(a.h, a.w, a.c + b.c);
                for (std::size_t px = 0; px < std::size_t(a.h) * a.w; ++px) {
                    T* dst = out.v.data() + px * out.c;
                    const T* pa = a.v.data() + px * a.c;
                    const T* pb = b.v.data() + px * b.c;
                    std::copy(pa, pa + a.c, dst);
                    std::copy(pb, pb + b.c, dst + a.c);
                }
                break;
            }
        }
    }
    const TensorT<T>& last = cc.acts.back();
    if (last.c != 2 || last.h != i1.height() || last.w != i1.width()) {
        throw std::logic_error("forward: output is not a 2-channel field of input size");
    }
    DeformationField pred(last.w, last.h);
    for (std::size_t i = 0; i < last.v.size(); ++i) pred.data()[i] = double(last.v[i]);
    return pred;
}

template <typename T>
NetGrads<T> make_grads(const NetT<T>& net) {
    NetGrads<T> g;
    g.g.resize(net.params.size());
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        const ConvParams<T>& p = net.params[i];
        g.g[i].k = p.k;
        g.g[i].cin = p.cin;
        g.g[i].cout = p.cout;
        g.g[i].w.assign(p.w.size(), T(0));
        g.g[i].b.assign(p.b.size(), T(0));
    }
    return g;
}

template <typename T>
void NetGrads<T>::accumulate(const NetGrads<T>& other) {
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::size_t j = 0; j < g[i].w.size(); ++j) g[i].w[j] += other.g[i].w[j];
        for (std::size_t j = 0; j < g[i].b.size(); ++j) g[i].b[j] += other.g[i].b[j];
    }
}

template <typename T>
void NetGrads<T>::clear() {
    for (auto& p : g) {
        std::fill(p.w.begin(), p.w.end(), T(0));
        std::fill(p.b.begin(), p.b.end(), T(0));
    }
}

template <typename T>
void backward(const NetT<T>& net, const ForwardCache<T>& cache,
              const std::vector<T>& dout_hwc, NetGrads<T>& grads) {
    if (!cache.valid || cache.acts.size() != net.layers.size()) {
        throw std::invalid_argument("backward: stale or mismatched forward cache");
    }
    const TensorT<T>& last = cache.acts.back();
    if (dout_hwc.size() != last.v.size()) {
        throw std::invalid_argument("backward: output gradient size mismatch");
    }
    std::vector<TensorT<T>> dacts(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const TensorT<T>& a = cache.acts[i];
        dacts[i] = TensorT<T>(a.h, a.w, a.c);
    }
    dacts.back().v = dout_hwc;

    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const LayerSpec& s = net.layers[li];
        TensorT<T>& dy = dacts[li];
        if (s.relu) {
            const TensorT<T>& y = cache.acts[li];
            for (std::size_t i = 0; i < dy.v.size(); ++i) {
                if (!(y.v[i] > T(0))) dy.v[i] = T(0);
            }
        }
        switch (s.op) {
            case LayerOp::Input:
                break;
            case LayerOp::Conv: {
                const TensorT<T>& in = cache.acts[std::size_t(s.inputs[0])];
                conv_backward(in, net.params[li], s.pad, dy, grads.g[li],
                              dacts[std::size_t(s.inputs[0])]);
                break;
            }
            case LayerOp::Pool: {
                TensorT<T>& din = dacts[std::size_t(s.inputs[0])];
                const std::vector<std::int32_t>& arg = cache.pool_argmax[li];
                for (std::size_t i = 0; i < dy.v.size(); ++i) {
                    din.v[std::size_t(arg[i])] += dy.v[i];
                }
                break;
            }
            case LayerOp::Upconv: {
                const TensorT<T>& in = cache.acts[std::size_t(s.inputs[0])];
                TensorT<T> up;
                nearest_up2(in, up);
                TensorT<T> dup(up.h, up.w, up.c);
                conv_backward(up, net.params[li], s.pad, dy, grads.g[li], dup);
                TensorT<T>& din = dacts[std::size_t(s.inputs[0])];
                for (int y = 0; y < dup.h; ++y) {
                    for (int x = 0; x < dup.w; ++x) {
                        for (int ch = 0; ch < dup.c; ++ch) {
                            din.at(y / 2, x / 2, ch) += dup.at(y, x, ch);
                        }
                    }
                }
                break;
            }
            case LayerOp::Concat: {
                TensorT<T>& da = dacts[std::size_t(s.inputs[0])];
                TensorT<T>& db = dacts[std::size_t(s.inputs[1])];
                for (std::size_t px = 0; px < std::size_t(dy.h) * dy.w; ++px) {
                    const T* src = dy.v.data() + px * dy.c;
                    T* pa = da.v.data() + px * da.c;
                    T* pb = db.v.data() + px * db.c;
                    for (int ch = 0; ch < da.c; ++ch) pa[ch] += src[ch];
                    for (int ch = 0; ch < db.c; ++ch) pb[ch] += src[ch + da.c];
                }
                break;
            }
        }
    }
}

double field_loss(const DeformationField& pred, const DeformationField& gt,
                  const Raster& mask, double lambda_lap, std::vector<double>* grad_out) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("field_loss: field dims differ");
    if (mask.width() != pred.width() || mask.height() != pred.height() ||
        mask.channels() != 1) {
        throw std::invalid_argument("field_loss: mask dims differ");
    }
    const int w = pred.width(), h = pred.height();
    double loss = 0.0;
    if (grad_out) grad_out->assign(pred.data().size(), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double m = mask.at(x, y, 0);
            const double ex = pred.dx(x, y) - gt.dx(x, y);
            const double ey = pred.dy(x, y) - gt.dy(x, y);
            loss += m * (ex * ex + ey * ey);
            if (grad_out) {
                (*grad_out)[2 * (std::size_t(y) * w + x)] = 2.0 * m * ex;
                (*grad_out)[2 * (std::size_t(y) * w + x) + 1] = 2.0 * m * ey;
            }
        }
    }
    if (lambda_lap != 0.0) {
        loss += lambda_lap * laplacian_penalty(pred);
        if (grad_out) {
            std::vector<double> pg;
            laplacian_penalty_grad(pred, pg);
            for (std::size_t i = 0; i < grad_out->size(); ++i) {
                (*grad_out)[i] += lambda_lap * pg[i];
            }
        }
    }
    return loss;
}

template <typename T>
AdamState<T> make_adam(const NetT<T>& net) {
    AdamState<T> st;
    const NetGrads<T> z = make_grads(net);
    st.m = z.g;
    st.v = z.g;
    return st;
}

template <typename T>
void adam_step(NetT<T>& net, AdamState<T>& state, const NetGrads<T>& grads, double lr) {
    if (state.m.size() != net.params.size() || grads.g.size() != net.params.size()) {
        throw std::invalid_argument("adam_step: state/gradient shape mismatch");
    }
    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, double(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        ConvParams<T>& p = net.params[i];
        if (p.w.size() != grads.g[i].w.size() || p.b.size() != grads.g[i].b.size()) {
            throw std::invalid_argument("adam_step: parameter tensor shape mismatch");
        }
        auto update = [&](std::vector<T>& par, std::vector<T>& m, std::vector<T>& v,
                          const std::vector<T>& g) {
            for (std::size_t j = 0; j < par.size(); ++j) {
                const double gj = double(g[j]);
                const double mj = state.beta1 * double(m[j]) + (1.0 - state.beta1) * gj;
                const double vj = state.beta2 * double(v[j]) + (1.0 - state.beta2) * gj * gj;
                m[j] = T(mj);
                v[j] = T(vj);
                par[j] = T(double(par[j]) - lr * (mj / c1) / (std::sqrt(vj / c2) + state.eps));
            }
        };
        update(p.w, state.m[i].w, state.v[i].w, grads.g[i].w);
        update(p.b, state.m[i].b, state.v[i].b, grads.g[i].b);
    }
}

void TrainConfig::validate() const {
    if (batch < 1 || patch < 4 || iters < 0 || decay_every < 1 || warm_images < 0 ||
        warm_iters < 0) {
        throw std::invalid_argument("TrainConfig: counts must be positive");
    }
    if (!(lr > 0.0) || !(decay > 0.0) || decay > 1.0) {
        throw std::invalid_argument("TrainConfig: lr must be > 0 and decay in (0, 1]");
    }
    if (patch % 4 != 0) throw std::invalid_argument("TrainConfig: patch must be divisible by 4");
    if (lambda_lap < 0.0) throw std::invalid_argument("TrainConfig: negative lambda_lap");
}

namespace {

Raster crop_raster(const Raster& r, int x0, int y0, int w, int h) {
    Raster out(w, h, r.channels());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < r.channels(); ++c) out.at(x, y, c) = r.at(x0 + x, y0 + y, c);
        }
    }
    return out;
}

DeformationField crop_field_at(const DeformationField& f, int x0, int y0, int w, int h) {
    DeformationField out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            out.dx(x, y) = f.dx(x0 + x, y0 + y);
            out.dy(x, y) = f.dy(x0 + x, y0 + y);
        }
    }
    return out;
}

struct PatchSample {
    Raster i1, i2, mask;
    DeformationField gt;
    bool ok = false;
};

PatchSample sample_patch(const ExampleSource& source, std::size_t pool, int patch,
                         double accept_ratio, Rng& rng) {
    PatchSample s;
    for (int attempt = 0; attempt < 64; ++attempt) {
        const std::size_t ei = std::size_t(rng.uniform_int(0, int(pool) - 1));
        const TrainingExample& ex = source.get(ei);
        if (ex.i1.width() < patch || ex.i1.height() < patch) {
            throw std::invalid_argument("train: example smaller than the patch size");
        }
        const int x0 = rng.uniform_int(0, ex.i1.width() - patch);
        const int y0 = rng.uniform_int(0, ex.i1.height() - patch);
        Raster p2 = crop_raster(ex.i2, x0, y0, patch, patch);
        if (!accept_patch(p2, accept_ratio)) continue;
        s.i1 = crop_raster(ex.i1, x0, y0, patch, patch);
        s.i2 = std::move(p2);
        s.gt = crop_field_at(ex.gt, x0, y0, patch, patch);
        s.mask = ex.mask.pixel_count() > 0 ? crop_raster(ex.mask, x0, y0, patch, patch)
                                           : Raster(patch, patch, 1, 1.0);
        s.ok = true;
        return s;
    }
    return s;
}

}  // namespace

TrainResult train_scale_block(const ExampleSource& source, int scale, const TrainConfig& cfg) {
    cfg.validate();
    if (source.size() == 0) throw std::invalid_argument("train: empty example source");
    const TrainingExample& first = source.get(0);
    ScaleNet net = build_scale_net(first.i1.channels(), first.i2.channels(), cfg.width_mult);
    net.scale_tag = scale;
    xavier_init(net, cfg.seed);
    return train_scale_block_on(std::move(net), source, cfg);
}

TrainResult train_scale_block_on(ScaleNet net, const ExampleSource& source,
                                 const TrainConfig& cfg, const TrainObserver& observer,
                                 int observe_every) {
    cfg.validate();
    if (source.size() == 0) throw std::invalid_argument("train: empty example source");
    TrainResult res;
    res.net = std::move(net);
    AdamState<float> adam = make_adam(res.net);
    const int batch = cfg.batch;
    std::vector<NetGrads<float>> slot_grads(static_cast<std::size_t>(batch));
    for (auto& g : slot_grads) g = make_grads(res.net);
    NetGrads<float> total = make_grads(res.net);
    std::vector<double> slot_loss(std::size_t(batch), 0.0);
    std::vector<int> slot_fail(std::size_t(batch), 0);

    for (int it = 0; it < cfg.iters; ++it) {
        const double lr = cfg.lr * std::pow(cfg.decay, double(it / cfg.decay_every));
        const std::size_t pool = (it < cfg.warm_iters && cfg.warm_images > 0)
                                     ? std::min(source.size(), std::size_t(cfg.warm_images))
                                     : source.size();
        std::fill(slot_fail.begin(), slot_fail.end(), 0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
        for (int b = 0; b < batch; ++b) {
            Rng rng(derive_seed(cfg.seed, 0x70617463680000ull + std::uint64_t(it),
                                std::uint64_t(b)));
            PatchSample ps = sample_patch(source, pool, cfg.patch, cfg.accept_ratio, rng);
            if (!ps.ok) {
                slot_fail[std::size_t(b)] = 1;
                slot_loss[std::size_t(b)] = 0.0;
                slot_grads[std::size_t(b)].clear();
                continue;
            }
            ForwardCache<float> cache;
            const DeformationField pred = forward(res.net, ps.i1, ps.i2, &cache);
            std::vector<double> dgrad;
            const double loss = field_loss(pred, ps.gt, ps.mask, cfg.lambda_lap, &dgrad);
            std::vector<float> dout(dgrad.size());
            for (std::size_t i = 0; i < dgrad.size(); ++i) {
                dout[i] = float(dgrad[i] / double(batch));
            }
            slot_grads[std::size_t(b)].clear();
            backward(res.net, cache, dout, slot_grads[std::size_t(b)]);
            slot_loss[std::size_t(b)] = loss;
        }
        for (int b = 0; b < batch; ++b) {
            if (slot_fail[std::size_t(b)]) {
                throw std::runtime_error("train: no accepted patch after bounded attempts "
                                         "(iteration " + std::to_string(it) + ")");
            }
        }
        total.clear();
        double loss_sum = 0.0;
        for (int b = 0; b < batch; ++b) {
            total.accumulate(slot_grads[std::size_t(b)]);
            loss_sum += slot_loss[std::size_t(b)];
        }
        adam_step(res.net, adam, total, lr);
        res.trace.push_back({it, loss_sum / double(batch), lr});
        if (observer && observe_every > 0 && (it + 1) % observe_every == 0) {
            observer(it + 1, res.net);
        }
    }
    return res;
}

double bin_accuracy(const DeformationField& pred, const DeformationField& gt, double r) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("bin_accuracy: field dims differ");
    const auto bin = [r](double v) {
        if (v == r) return int(std::floor(r)) - 1;
        return int(std::floor(v));
    };
    std::int64_t hits = 0, total = 0;
    for (int y = 0; y < gt.height(); ++y) {
        for (int x = 0; x < gt.width(); ++x) {
            const double gx = gt.dx(x, y), gy = gt.dy(x, y);
            if (gx < -r || gx > r || gy < -r || gy > r) {
                throw std::invalid_argument("bin_accuracy: ground truth outside [-r, r]");
            }
            hits += (bin(pred.dx(x, y)) == bin(gx) && bin(pred.dy(x, y)) == bin(gy)) ? 1 : 0;
            ++total;
        }
    }
    return double(hits) / double(total);
}

namespace {

using nlohmann::json;

const char* op_name(LayerOp op) {
    switch (op) {
        case LayerOp::Input: return "input";
        case LayerOp::Conv: return "conv";
        case LayerOp::Pool: return "pool";
        case LayerOp::Upconv: return "upconv";
        case LayerOp::Concat: return "concat";
    }
    return "?";
}

LayerOp op_from_name(const std::string& s) {
    if (s == "input") return LayerOp::Input;
    if (s == "conv") return LayerOp::Conv;
    if (s == "pool") return LayerOp::Pool;
    if (s == "upconv") return LayerOp::Upconv;
    if (s == "concat") return LayerOp::Concat;
    throw std::runtime_error("load_net: unknown layer op " + s);
}

}  // namespace

void save_net(const ScaleNet& net, const std::string& path) {
    json j;
    j["channels_a"] = net.channels_a;
    j["channels_b"] = net.channels_b;
    j["width_mult"] = net.width_mult;
    j["scale"] = net.scale_tag;
    j["layers"] = json::array();
    j["tensors"] = json::array();
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& s = net.layers[i];
        j["layers"].push_back({{"op", op_name(s.op)},
                               {"name", s.name},
                               {"kernel", s.kernel},
                               {"filters", s.filters},
                               {"pad", s.pad},
                               {"stride", s.stride},
                               {"relu", s.relu},
                               {"inputs", s.inputs}});
        const ConvParams<float>& p = net.params[i];
        if (!p.w.empty()) {
            j["tensors"].push_back(
                {{"name", s.name + ".w"}, {"shape", {p.k, p.k, p.cin, p.cout}}});
            j["tensors"].push_back({{"name", s.name + ".b"}, {"shape", {p.cout}}});
        }
    }
    const std::string header = j.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_net: cannot open " + path);
    os.write("WCN1", 4);
    const std::uint32_t len = std::uint32_t(header.size());
    unsigned char lb[4] = {static_cast<unsigned char>(len & 0xff),
                           static_cast<unsigned char>((len >> 8) & 0xff),
                           static_cast<unsigned char>((len >> 16) & 0xff),
                           static_cast<unsigned char>((len >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(lb), 4);
    os.write(header.data(), std::streamsize(header.size()));
    auto write_floats = [&](const std::vector<float>& v) {
        for (float f : v) {
            std::uint32_t u;
            std::memcpy(&u, &f, 4);
            unsigned char b[4] = {static_cast<unsigned char>(u & 0xff),
                                  static_cast<unsigned char>((u >> 8) & 0xff),
                                  static_cast<unsigned char>((u >> 16) & 0xff),
                                  static_cast<unsigned char>((u >> 24) & 0xff)};
            os.write(reinterpret_cast<const char*>(b), 4);
        }
    };
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (!net.params[i].w.empty()) {
            write_floats(net.params[i].w);
            write_floats(net.params[i].b);
        }
    }
    if (!os) throw std::runtime_error("save_net: write failed " + path);
}

ScaleNet load_net(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_net: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "WCN1", 4) != 0) {
        throw std::runtime_error("load_net: bad magic in " + path);
    }
    unsigned char lb[4];
    is.read(reinterpret_cast<char*>(lb), 4);
    const std::uint32_t len = std::uint32_t(lb[0]) | std::uint32_t(lb[1]) << 8 |
                              std::uint32_t(lb[2]) << 16 | std::uint32_t(lb[3]) << 24;
    std::string header(len, '\0');
    is.read(header.data(), std::streamsize(len));
    if (!is) throw std::runtime_error("load_net: truncated header in " + path);
    const json j = json::parse(header);

    ScaleNet net;
    net.channels_a = j.at("channels_a").get<int>();
    net.channels_b = j.at("channels_b").get<int>();
    net.width_mult = j.at("width_mult").get<double>();
    net.scale_tag = j.at("scale").get<int>();
    for (const auto& l : j.at("layers")) {
        LayerSpec s;
        s.op = op_from_name(l.at("op").get<std::string>());
        s.name = l.at("name").get<std::string>();
        s.kernel = l.at("kernel").get<int>();
        s.filters = l.at("filters").get<int>();
        s.pad = l.at("pad").get<int>();
        s.stride = l.at("stride").get<int>();
        s.relu = l.at("relu").get<bool>();
        s.inputs = l.at("inputs").get<std::vector<int>>();
        net.layers.push_back(std::move(s));
    }
    net.params.resize(net.layers.size());
    auto read_floats = [&](std::vector<float>& v) {
        for (float& f : v) {
            unsigned char b[4];
            is.read(reinterpret_cast<char*>(b), 4);
            const std::uint32_t u = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                                    std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
            std::memcpy(&f, &u, 4);
        }
    };
    std::size_t ti = 0;
    const auto& tensors = j.at("tensors");
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& s = net.layers[i];
        if (s.op != LayerOp::Conv && s.op != LayerOp::Upconv) continue;
        const auto& tw = tensors.at(ti);  // .at throws if the index is short
        ConvParams<float>& p = net.params[i];
        const auto shape = tw.at("shape").get<std::vector<int>>();
        if (shape.size() != 4) throw std::runtime_error("load_net: bad tensor shape");
        p.k = shape[0];
        p.cin = shape[2];
        p.cout = shape[3];
        p.w.assign(std::size_t(p.k) * p.k * p.cin * p.cout, 0.0f);
        p.b.assign(std::size_t(p.cout), 0.0f);
        read_floats(p.w);
        read_floats(p.b);
        ti += 2;
    }
    if (!is) throw std::runtime_error("load_net: truncated blob in " + path);
    return net;
}

// explicit instantiations: float for production, double for gradient checks
template struct NetT<float>;
template struct NetT<double>;
template struct NetGrads<float>;
template struct NetGrads<double>;
template NetT<float> build_scale_net_t<float>(int, int, double);
template NetT<double> build_scale_net_t<double>(int, int, double);
template void xavier_init<float>(NetT<float>&, std::uint64_t);
template void xavier_init<double>(NetT<double>&, std::uint64_t);
template DeformationField forward<float>(const NetT<float>&, const Raster&, const Raster&,
                                         ForwardCache<float>*, unsigned long long*);
template DeformationField forward<double>(const NetT<double>&, const Raster&, const Raster&,
                                          ForwardCache<double>*, unsigned long long*);
template NetGrads<float> make_grads<float>(const NetT<float>&);
template NetGrads<double> make_grads<double>(const NetT<double>&);
template void backward<float>(const NetT<float>&, const ForwardCache<float>&,
                              const std::vector<float>&, NetGrads<float>&);
template void backward<double>(const NetT<double>&, const ForwardCache<double>&,
                               const std::vector<double>&, NetGrads<double>&);
template AdamState<float> make_adam<float>(const NetT<float>&);
template AdamState<double> make_adam<double>(const NetT<double>&);
template void adam_step<float>(NetT<float>&, AdamState<float>&, const NetGrads<float>&, double);
template void adam_step<double>(NetT<double>&, AdamState<double>&, const NetGrads<double>&,
                                double);

}  // namespace warpchain

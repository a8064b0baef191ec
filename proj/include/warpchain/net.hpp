// net.hpp - the scale-specific fully-convolutional predictor: two
// modality-specific encoder pyramids concatenated once per scale into a
// U-shaped decoder ending in a 2-channel field. Forward/backward passes
// are hand-derived (conv/pool/upconv/concat/rectifier); the inner matrix
// products go through Eigen. Float for production, double for the
// finite-difference test instantiation.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "warpchain/deform.hpp"
#include "warpchain/raster.hpp"

namespace warpchain {

enum class LayerOp { Input, Conv, Pool, Upconv, Concat };

struct LayerSpec {
    LayerOp op = LayerOp::Input;
    std::string name;
    int kernel = 0;        // conv/upconv kernel size
    int filters = 0;       // conv/upconv output channels
    int pad = 0;
    int stride = 1;        // pool stride
    bool relu = false;
    std::vector<int> inputs;  // indices of earlier layers
};

template <typename T>
struct TensorT {
    int h = 0, w = 0, c = 0;
    std::vector<T> v;  // HWC

    TensorT() = default;
    TensorT(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(std::size_t(h_) * w_ * c_, T(0)) {}
    T& at(int y, int x, int ch) { return v[(std::size_t(y) * w + x) * c + ch]; }
    T at(int y, int x, int ch) const { return v[(std::size_t(y) * w + x) * c + ch]; }
};

template <typename T>
struct ConvParams {
    std::vector<T> w;  // (k*k*cin) x cout, row-major
    std::vector<T> b;  // cout
    int k = 0, cin = 0, cout = 0;
};

template <typename T>
struct NetT {
    std::vector<LayerSpec> layers;
    std::vector<ConvParams<T>> params;  // parallel to layers; empty for non-conv
    int channels_a = 1, channels_b = 1;
    double width_mult = 1.0;
    int scale_tag = 0;

    std::int64_t parameter_count() const;
};

using ScaleNet = NetT<float>;

// Builds the topology of the appendix layer table scaled by width_mult
// (every filter count except the final 2 is max(1, round(count * mult))).
template <typename T>
NetT<T> build_scale_net_t(int channels_a, int channels_b, double width_mult);
ScaleNet build_scale_net(int channels_a, int channels_b, double width_mult);

template <typename T>
void xavier_init(NetT<T>& net, std::uint64_t seed);

// Per-layer activations (post-rectifier) plus pool argmax bookkeeping.
template <typename T>
struct ForwardCache {
    std::vector<TensorT<T>> acts;
    std::vector<std::vector<std::int32_t>> pool_argmax;
    int in_h = 0, in_w = 0;
    bool valid = false;
};

// Prediction has the input's spatial dims, 2 channels read as (dx, dy).
// Spatial dims must be divisible by 4 (two pooling stages). `macs`, when
// non-null, accumulates multiply-accumulate counts of all matrix products.
template <typename T>
DeformationField forward(const NetT<T>& net, const Raster& i1, const Raster& i2,
                         ForwardCache<T>* cache = nullptr,
                         unsigned long long* macs = nullptr);

template <typename T>
struct NetGrads {
    std::vector<ConvParams<T>> g;  // same shapes as net.params

    void accumulate(const NetGrads<T>& other);
    void clear();
};

template <typename T>
NetGrads<T> make_grads(const NetT<T>& net);

// Reverse pass: dLoss/d(output field) -> gradients of every parameter.
// The cache must come from a matching forward (throws on a stale cache).
template <typename T>
void backward(const NetT<T>& net, const ForwardCache<T>& cache,
              const std::vector<T>& dout_hwc, NetGrads<T>& grads);

struct TrainingExample {
    Raster i1, i2;
    DeformationField gt;
    Raster mask;  // per-pixel loss multipliers >= 1; all-ones when absent
};

// Sum_x mask(x) ||pred(x) - gt(x)||^2 + lambda_lap * laplacian_penalty(pred).
// grad_out, when non-null, receives dLoss/dpred in field data layout.
double field_loss(const DeformationField& pred, const DeformationField& gt,
                  const Raster& mask, double lambda_lap,
                  std::vector<double>* grad_out = nullptr);

template <typename T>
struct AdamState {
    std::vector<ConvParams<T>> m, v;
    std::int64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <typename T>
AdamState<T> make_adam(const NetT<T>& net);

template <typename T>
void adam_step(NetT<T>& net, AdamState<T>& state, const NetGrads<T>& grads, double lr);

struct TrainConfig {
    int batch = 16;
    int patch = 128;
    double lr = 0.001;
    double decay = 0.96;
    int decay_every = 1000;
    int iters = 5000;
    double lambda_lap = 0.0;
    double width_mult = 1.0;
    int warm_images = 4;
    int warm_iters = 400;
    std::uint64_t seed = 1;
    double accept_ratio = 0.05;  // minority-class floor for patch rejection
    void validate() const;
};

class ExampleSource {
public:
    virtual ~ExampleSource() = default;
    virtual std::size_t size() const = 0;
    virtual const TrainingExample& get(std::size_t i) const = 0;
};

// In-memory source.
class VectorExampleSource : public ExampleSource {
public:
    explicit VectorExampleSource(std::vector<TrainingExample> ex) : ex_(std::move(ex)) {}
    std::size_t size() const override { return ex_.size(); }
    const TrainingExample& get(std::size_t i) const override { return ex_.at(i); }

private:
    std::vector<TrainingExample> ex_;
};

struct LossTracePoint {
    int iter;
    double loss;
    double lr;
};

struct TrainResult {
    ScaleNet net;
    std::vector<LossTracePoint> trace;
};

// called every `observe_every` iterations when set (progress reporting)
using TrainObserver = std::function<void(int iter, const ScaleNet& net)>;

// Warm start (overfit a tiny fixed subset), then the main loop: sample
// patches, reject by minority-class ratio, weighted loss, Adam updates,
// learning rate decayed every decay_every iterations. Deterministic given
// cfg.seed; throws if no patch is accepted after a bounded number of draws.
TrainResult train_scale_block(const ExampleSource& source, int scale, const TrainConfig& cfg);

// Same loop, continuing from an existing network.
TrainResult train_scale_block_on(ScaleNet net, const ExampleSource& source,
                                 const TrainConfig& cfg, const TrainObserver& observer = {},
                                 int observe_every = 0);

// Fraction of pixels whose predicted and true displacements fall in the
// same unit-sized bin of the [-r, r]^2 grid (floor binning).
double bin_accuracy(const DeformationField& pred, const DeformationField& gt, double r);

void save_net(const ScaleNet& net, const std::string& path);
ScaleNet load_net(const std::string& path);

}  // namespace warpchain

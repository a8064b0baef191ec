#include "warpchain/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "warpchain/io.hpp"
#include "warpchain/rng.hpp"

namespace warpchain {

namespace fs = std::filesystem;
using nlohmann::json;

void KeypointSet::validate() const {
    if (a.size() != b.size()) {
        throw std::invalid_argument("KeypointSet: paired lists differ in length");
    }
    for (const Point& p : a) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw std::invalid_argument("KeypointSet: non-finite coordinate");
        }
    }
    for (const Point& p : b) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw std::invalid_argument("KeypointSet: non-finite coordinate");
        }
    }
}

KeypointSet KeypointSet::load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("KeypointSet: cannot open " + path);
    json j;
    is >> j;
    KeypointSet kp;
    for (const auto& p : j.at("a")) kp.a.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    for (const auto& p : j.at("b")) kp.b.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    kp.validate();
    return kp;
}

void KeypointSet::save_json(const std::string& path) const {
    validate();
    json j;
    j["a"] = json::array();
    j["b"] = json::array();
    for (const Point& p : a) j["a"].push_back({p.x, p.y});
    for (const Point& p : b) j["b"].push_back({p.x, p.y});
    std::ofstream os(path);
    if (!os) throw std::runtime_error("KeypointSet: cannot write " + path);
    os << j.dump() << "\n";
}

PckCurve pck(const DeformationField& field, const KeypointSet& kp,
             const std::vector<double>& thresholds) {
    kp.validate();
    if (kp.a.empty()) throw std::invalid_argument("pck: empty keypoint set");
    PckCurve curve;
    curve.thresholds = thresholds;
    std::vector<double> dist;
    double d[2];
    for (std::size_t i = 0; i < kp.a.size(); ++i) {
        field.sample(kp.a[i].x, kp.a[i].y, d);
        const double px = kp.a[i].x + d[0], py = kp.a[i].y + d[1];
        dist.push_back(std::hypot(px - kp.b[i].x, py - kp.b[i].y));
    }
    for (double t : thresholds) {
        std::int64_t matched = 0;
        for (double dd : dist) matched += dd <= t ? 1 : 0;
        curve.fractions.push_back(double(matched) / double(dist.size()));
    }
    for (std::size_t i = 1; i < curve.fractions.size(); ++i) {
        if (curve.fractions[i] < curve.fractions[i - 1]) {
            throw std::logic_error("pck: fractions not nondecreasing");
        }
    }
    return curve;
}

std::vector<double> default_pck_thresholds() {
    std::vector<double> t;
    for (int i = 1; i <= 15; ++i) t.push_back(double(i));
    return t;
}

ErrorHistogram error_histogram(const DeformationField& predicted,
                               const DeformationField& truth, double bin_width) {
    if (!(bin_width > 0.0)) throw std::invalid_argument("error_histogram: bin width <= 0");
    EndpointStats stats;
    const Raster ee = endpoint_error(predicted, truth, &stats);
    ErrorHistogram h;
    h.bin_width = bin_width;
    const int nbins = std::max(1, int(std::floor(stats.max / bin_width)) + 1);
    h.bin_lo.resize(std::size_t(nbins));
    h.counts.assign(std::size_t(nbins), 0);
    for (int i = 0; i < nbins; ++i) h.bin_lo[std::size_t(i)] = i * bin_width;
    for (double v : ee.data()) {
        const int bin = std::min(nbins - 1, int(std::floor(v / bin_width)));
        ++h.counts[std::size_t(bin)];
    }
    return h;
}

double histogram_mass_below(const ErrorHistogram& h, double limit) {
    std::int64_t total = 0, below = 0;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        total += h.counts[i];
        if (h.bin_lo[i] + h.bin_width <= limit) below += h.counts[i];
    }
    return total == 0 ? 0.0 : double(below) / double(total);
}

FieldGenRanges scale_task_ranges(double r, int w, int h) {
    FieldGenRanges fr;
    fr.r = 0.7 * r;
    fr.n_min = 1;
    fr.n_max = 3;
    fr.shift_max = 0.1 * r;
    fr.sigma_min = w / 8.0;
    fr.sigma_max = w / 3.0;
    fr.width = w;
    fr.height = h;
    return fr;
}

namespace {

// position y in the warped frame of a base-frame point p: y + d(y) = p
bool invert_at(const DeformationField& f, const Point& p, Point& out) {
    double y[2] = {p.x, p.y};
    double d[2];
    for (int it = 0; it < 80; ++it) {
        f.sample(y[0], y[1], d);
        const double nx = p.x - d[0], ny = p.y - d[1];
        const double delta = std::hypot(nx - y[0], ny - y[1]);
        y[0] = nx;
        y[1] = ny;
        if (delta < 1e-10) {
            out = {y[0], y[1]};
            return true;
        }
    }
    return false;
}

Raster binarize(const Raster& r) {
    Raster out(r.width(), r.height(), 1);
    for (int y = 0; y < r.height(); ++y) {
        for (int x = 0; x < r.width(); ++x) out.at(x, y, 0) = r.at(x, y, 0) > 0.5 ? 1.0 : 0.0;
    }
    return out;
}

}  // namespace

GeneratedExample gen_example(const DatasetParams& p, std::uint64_t seed, std::uint64_t index) {
    const int w = p.size, h = p.size;
    GeneratedExample out;
    const SynthScene scene = make_scene(w, h, p.scene, derive_seed(seed, 11, index));
    out.vm = scene.vm;

    FieldGenRanges fr = p.field;
    if (fr.width == 0) fr.width = w;
    if (fr.height == 0) fr.height = h;
    out.params = sample_params(fr, derive_seed(seed, 13, index));
    out.ex.gt = random_field(w, h, out.params);

    out.ex.i1 = scene.intensity;
    Raster b = scene.mask;
    if (p.corner_channel) {
        const Raster corners = corner_channel(scene.vm, w, h);
        Raster b2(w, h, 2);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                b2.at(x, y, 0) = b.at(x, y, 0);
                b2.at(x, y, 1) = corners.at(x, y, 0);
            }
        }
        b = b2;
    }
    out.ex.i2 = warp(b, out.ex.gt);
    out.ex.mask = boundary_weight_mask(binarize(out.ex.i2), p.edge_factor, p.edge_thickness);

    // keypoints: polygon corners; their warped-frame positions come from
    // inverting the ground-truth map, so the pairs are exact
    for (const auto& ring : scene.vm.polygons) {
        for (const Point& corner : ring) {
            if (corner.x < 1 || corner.x > w - 2 || corner.y < 1 || corner.y > h - 2) continue;
            Point inv;
            if (!invert_at(out.ex.gt, corner, inv)) continue;
            if (inv.x < 0 || inv.x > w - 1 || inv.y < 0 || inv.y > h - 1) continue;
            out.keypoints.a.push_back(inv);
            out.keypoints.b.push_back(corner);
        }
    }
    return out;
}

void gen_dataset(const DatasetParams& p, int count, std::uint64_t seed,
                 const std::string& out_dir) {
    if (count < 0) throw std::invalid_argument("gen_dataset: negative count");
    fs::create_directories(out_dir);
    json manifest;
    manifest["count"] = count;
    manifest["seed"] = seed;
    manifest["size"] = p.size;
    manifest["examples"] = json::array();
    char name[64];
    for (int i = 0; i < count; ++i) {
        const GeneratedExample g = gen_example(p, seed, std::uint64_t(i));
        json entry;
        auto put = [&](const char* kind, const char* ext) {
            std::snprintf(name, sizeof(name), "ex%04d_%s.%s", i, kind, ext);
            entry[kind] = name;
            return (fs::path(out_dir) / name).string();
        };
        write_f32r(g.ex.i1, put("i1", "f32r"));
        write_f32r(g.ex.i2, put("i2", "f32r"));
        write_f32r(g.ex.gt.to_raster(), put("gt", "f32r"));
        write_f32r(g.ex.mask, put("mask", "f32r"));
        g.vm.save_json(put("vm", "json"));
        g.keypoints.save_json(put("kp", "json"));
        manifest["examples"].push_back(entry);
    }
    std::ofstream os(fs::path(out_dir) / "manifest.json");
    if (!os) throw std::runtime_error("gen_dataset: cannot write manifest");
    os << manifest.dump(2) << "\n";
}

namespace {

json read_manifest(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw std::runtime_error("load_dataset: no manifest.json in " + dir);
    json j;
    is >> j;
    return j;
}

}  // namespace

std::vector<TrainingExample> load_dataset(const std::string& dir) {
    const json m = read_manifest(dir);
    std::vector<TrainingExample> out;
    for (const auto& e : m.at("examples")) {
        TrainingExample ex;
        ex.i1 = read_f32r((fs::path(dir) / e.at("i1").get<std::string>()).string());
        ex.i2 = read_f32r((fs::path(dir) / e.at("i2").get<std::string>()).string());
        ex.gt = DeformationField::from_raster(
            read_f32r((fs::path(dir) / e.at("gt").get<std::string>()).string()));
        ex.mask = read_f32r((fs::path(dir) / e.at("mask").get<std::string>()).string());
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<KeypointSet> load_dataset_keypoints(const std::string& dir) {
    const json m = read_manifest(dir);
    std::vector<KeypointSet> out;
    for (const auto& e : m.at("examples")) {
        out.push_back(KeypointSet::load_json((fs::path(dir) / e.at("kp").get<std::string>()).string()));
    }
    return out;
}

std::vector<DeformationField> load_dataset_fields(const std::string& dir) {
    const json m = read_manifest(dir);
    std::vector<DeformationField> out;
    for (const auto& e : m.at("examples")) {
        out.push_back(DeformationField::from_raster(
            read_f32r((fs::path(dir) / e.at("gt").get<std::string>()).string())));
    }
    return out;
}

std::string NegativeControlReport::to_json() const {
    json j;
    j["pred_variance"] = pred_variance;
    j["gt_variance"] = gt_variance;
    j["mean_endpoint_error"] = mean_endpoint_error;
    j["bin_accuracy"] = bin_acc;
    j["dataset_mean"] = {dataset_mean_dx, dataset_mean_dy};
    j["net_mean"] = {net_mean_dx, net_mean_dy};
    j["zero_predictor_mean_ee"] = zero_predictor_mean_ee;
    j["range"] = range;
    return j.dump(2);
}

NegativeControlReport negative_control(const ScaleNet& net,
                                       const std::vector<TrainingExample>& held_out,
                                       double r) {
    if (held_out.empty()) throw std::invalid_argument("negative_control: no examples");
    NegativeControlReport rep;
    rep.range = r;
    std::vector<double> pmx, pmy, gmx, gmy;
    double ee_sum = 0.0, zee_sum = 0.0, bin_sum = 0.0;
    std::int64_t n_px = 0;
    for (const TrainingExample& ex : held_out) {
        const DeformationField pred = forward(net, ex.i1, ex.i2);
        EndpointStats st;
        endpoint_error(pred, ex.gt, &st);
        ee_sum += st.mean;
        bin_sum += bin_accuracy(pred, ex.gt, r);
        const DeformationField zero(ex.gt.width(), ex.gt.height());
        EndpointStats zst;
        endpoint_error(zero, ex.gt, &zst);
        zee_sum += zst.mean;
        double sx = 0, sy = 0, tx = 0, ty = 0;
        for (int y = 0; y < pred.height(); ++y) {
            for (int x = 0; x < pred.width(); ++x) {
                sx += pred.dx(x, y);
                sy += pred.dy(x, y);
                tx += ex.gt.dx(x, y);
                ty += ex.gt.dy(x, y);
            }
        }
        const double npx = double(pred.width()) * pred.height();
        pmx.push_back(sx / npx);
        pmy.push_back(sy / npx);
        gmx.push_back(tx / npx);
        gmy.push_back(ty / npx);
        n_px += std::int64_t(npx);
    }
    const auto variance = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= double(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        return var / double(v.size());
    };
    const auto mean_of = [](const std::vector<double>& v) {
        double m = 0.0;
        for (double x : v) m += x;
        return m / double(v.size());
    };
    rep.pred_variance = variance(pmx) + variance(pmy);
    rep.gt_variance = variance(gmx) + variance(gmy);
    rep.mean_endpoint_error = ee_sum / double(held_out.size());
    rep.zero_predictor_mean_ee = zee_sum / double(held_out.size());
    rep.bin_acc = bin_sum / double(held_out.size());
    rep.dataset_mean_dx = mean_of(gmx);
    rep.dataset_mean_dy = mean_of(gmy);
    rep.net_mean_dx = mean_of(pmx);
    rep.net_mean_dy = mean_of(pmy);
    return rep;
}

void write_pck_csv(const PckCurve& curve, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_pck_csv: cannot open " + path);
    os << "threshold,fraction\n";
    char line[64];
    for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
        std::snprintf(line, sizeof(line), "%.6g,%.6f\n", curve.thresholds[i],
                      curve.fractions[i]);
        os << line;
    }
}

void write_hist_csv(const ErrorHistogram& hist, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_hist_csv: cannot open " + path);
    os << "bin_lo,bin_hi,count\n";
    char line[96];
    for (std::size_t i = 0; i < hist.counts.size(); ++i) {
        std::snprintf(line, sizeof(line), "%.6g,%.6g,%lld\n", hist.bin_lo[i],
                      hist.bin_lo[i] + hist.bin_width,
                      static_cast<long long>(hist.counts[i]));
        os << line;
    }
}

void write_loss_csv(const std::vector<LossTracePoint>& trace, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_loss_csv: cannot open " + path);
    os << "iter,loss,lr\n";
    char line[96];
    for (const LossTracePoint& p : trace) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g\n", p.iter, p.loss, p.lr);
        os << line;
    }
}

}  // namespace warpchain

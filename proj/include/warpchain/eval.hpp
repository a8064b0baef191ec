// eval.hpp - dataset synthesis, keypoint/PCK and histogram metrics, the
// negative-control experiment and CSV report writers.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "warpchain/deform.hpp"
#include "warpchain/net.hpp"
#include "warpchain/synth.hpp"
#include "warpchain/vecmap.hpp"

namespace warpchain {

// Paired points: `a` in the frame of I2 (the field's domain), `b` the
// corresponding location in I1. A field d matches when a + d(a) lands
// near b.
struct KeypointSet {
    std::vector<Point> a, b;

    void validate() const;
    static KeypointSet load_json(const std::string& path);
    void save_json(const std::string& path) const;
};

struct PckCurve {
    std::vector<double> thresholds;
    std::vector<double> fractions;
};

PckCurve pck(const DeformationField& field, const KeypointSet& kp,
             const std::vector<double>& thresholds);

std::vector<double> default_pck_thresholds();  // 1..15 px step 1

struct ErrorHistogram {
    std::vector<double> bin_lo;  // bin k covers [bin_lo[k], bin_lo[k] + width)
    std::vector<std::int64_t> counts;
    double bin_width = 1.0;
};

ErrorHistogram error_histogram(const DeformationField& predicted,
                               const DeformationField& truth, double bin_width);

// mass of the histogram strictly below `limit` (fraction of pixels)
double histogram_mass_below(const ErrorHistogram& h, double limit);

struct DatasetParams {
    int size = 128;
    SceneParams scene;
    FieldGenRanges field;   // width/height filled from size when zero
    bool corner_channel = false;
    double edge_factor = 4.0;
    int edge_thickness = 2;
};

// Generator ranges for the scale-s task: total amplitude bounded by r
// (|v0| <= 0.7 r, up to 3 bumps of |vi| <= 0.1 r).
FieldGenRanges scale_task_ranges(double r, int w, int h);

struct GeneratedExample {
    TrainingExample ex;
    VectorMap vm;            // undeformed scene geometry
    KeypointSet keypoints;   // polygon corners, exact by construction
    GaussianMixtureParams params;
};

// Deterministic per (seed, index): scene + random field; I2 is the mask
// modality warped by the ground-truth field, which makes labels exact.
GeneratedExample gen_example(const DatasetParams& p, std::uint64_t seed, std::uint64_t index);

// Writes ex%04llu_{i1,i2,gt,mask}.f32r, _vm.json, _kp.json and manifest.json.
void gen_dataset(const DatasetParams& p, int count, std::uint64_t seed,
                 const std::string& out_dir);

std::vector<TrainingExample> load_dataset(const std::string& dir);
std::vector<KeypointSet> load_dataset_keypoints(const std::string& dir);
std::vector<DeformationField> load_dataset_fields(const std::string& dir);

struct NegativeControlReport {
    double pred_variance = 0.0;   // variance of per-example mean predictions
    double gt_variance = 0.0;     // same, over the ground truth
    double mean_endpoint_error = 0.0;
    double bin_acc = 0.0;
    double dataset_mean_dx = 0.0, dataset_mean_dy = 0.0;
    double net_mean_dx = 0.0, net_mean_dy = 0.0;
    double zero_predictor_mean_ee = 0.0;
    double range = 0.0;

    std::string to_json() const;
};

// Evaluates a direct full-range predictor on held-out examples and
// documents whether the collapse-to-constant happens.
NegativeControlReport negative_control(const ScaleNet& net,
                                       const std::vector<TrainingExample>& held_out,
                                       double r);

void write_pck_csv(const PckCurve& curve, const std::string& path);
void write_hist_csv(const ErrorHistogram& hist, const std::string& path);
void write_loss_csv(const std::vector<LossTracePoint>& trace, const std::string& path);

}  // namespace warpchain

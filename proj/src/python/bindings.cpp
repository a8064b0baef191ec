// python bindings for the core operations: rasters and fields travel as
// numpy arrays (HxWxC float64 for rasters, HxWx2 for fields).
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <filesystem>

#include "warpchain/chain.hpp"
#include "warpchain/classical.hpp"
#include "warpchain/config.hpp"
#include "warpchain/eval.hpp"
#include "warpchain/io.hpp"
#include "warpchain/net.hpp"
#include "warpchain/synth.hpp"

namespace py = pybind11;
using namespace warpchain;

namespace {

Raster raster_from_array(py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
    if (arr.ndim() == 2) {
        Raster r(int(arr.shape(1)), int(arr.shape(0)), 1);
        std::memcpy(r.data().data(), arr.data(), sizeof(double) * r.data().size());
        return r;
    }
    if (arr.ndim() == 3) {
        Raster r(int(arr.shape(1)), int(arr.shape(0)), int(arr.shape(2)));
        std::memcpy(r.data().data(), arr.data(), sizeof(double) * r.data().size());
        return r;
    }
    throw std::invalid_argument("raster arrays must be HxW or HxWxC");
}

py::array_t<double> raster_to_array(const Raster& r) {
    py::array_t<double> arr({r.height(), r.width(), r.channels()});
    std::memcpy(arr.mutable_data(), r.data().data(), sizeof(double) * r.data().size());
    return arr;
}

DeformationField field_from_array(
    py::array_t<double, py::array::c_style | py::array::forcecast> arr) {
    if (arr.ndim() != 3 || arr.shape(2) != 2) {
        throw std::invalid_argument("fields must be HxWx2 arrays");
    }
    DeformationField f(int(arr.shape(1)), int(arr.shape(0)));
    std::memcpy(f.data().data(), arr.data(), sizeof(double) * f.data().size());
    return f;
}

py::array_t<double> field_to_array(const DeformationField& f) {
    py::array_t<double> arr({f.height(), f.width(), 2});
    std::memcpy(arr.mutable_data(), f.data().data(), sizeof(double) * f.data().size());
    return arr;
}

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

Descriptor make_descriptor(const std::string& kind, double sigma) {
    Descriptor d;
    if (kind == "raw") {
        d.kind = DescriptorKind::RawIntensity;
    } else if (kind == "gaussian") {
        d.kind = DescriptorKind::GaussianSmoothed;
    } else if (kind == "lcc") {
        d.kind = DescriptorKind::LocalCrossCorrelation;
    } else {
        throw std::invalid_argument("descriptor kind must be raw|gaussian|lcc");
    }
    d.sigma = sigma;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "coarse-to-fine multimodal registration chain";

    m.def("read_f32r", [](const std::string& p) { return raster_to_array(read_f32r(p)); });
    m.def("write_f32r",
          [](Arr a, const std::string& p) { write_f32r(raster_from_array(a), p); });

    m.def("sample_bilinear", [](Arr img, double x, double y) {
        return sample_bilinear(raster_from_array(img), x, y);
    });
    m.def("downsample2", [](Arr img) { return raster_to_array(downsample2(raster_from_array(img))); });
    m.def("upsample2", [](Arr img) { return raster_to_array(upsample2(raster_from_array(img))); });

    m.def("identity_field",
          [](int w, int h) { return field_to_array(identity_field(w, h)); });
    m.def("warp", [](Arr img, Arr field) {
        return raster_to_array(warp(raster_from_array(img), field_from_array(field)));
    });
    m.def("compose", [](Arr phi, Arr f) {
        return field_to_array(compose(field_from_array(phi), field_from_array(f)));
    });
    m.def("upsample_field",
          [](Arr phi) { return field_to_array(upsample_field(field_from_array(phi))); });
    m.def("laplacian_penalty",
          [](Arr phi) { return laplacian_penalty(field_from_array(phi)); });
    m.def("endpoint_error", [](Arr pred, Arr gt) {
        EndpointStats st;
        const Raster ee = endpoint_error(field_from_array(pred), field_from_array(gt), &st);
        return py::make_tuple(raster_to_array(ee), st.mean, st.median, st.max);
    });
    m.def(
        "random_field",
        [](int w, int h, double r, int n_min, int n_max, double shift_max, double sigma_min,
           double sigma_max, std::uint64_t seed) {
            FieldGenRanges fr{r, n_min, n_max, shift_max, sigma_min, sigma_max, w, h};
            return field_to_array(random_field(w, h, sample_params(fr, seed)));
        },
        py::arg("w"), py::arg("h"), py::arg("r"), py::arg("n_min") = 1, py::arg("n_max") = 8,
        py::arg("shift_max") = 10.0, py::arg("sigma_min") = 4.0, py::arg("sigma_max") = 16.0,
        py::arg("seed") = 1);

    m.def(
        "describe",
        [](Arr img, const std::string& kind, double sigma) {
            return raster_to_array(describe(raster_from_array(img), make_descriptor(kind, sigma)));
        },
        py::arg("img"), py::arg("kind"), py::arg("sigma") = 0.0);
    m.def(
        "criterion",
        [](Arr i1, Arr i2, Arr phi, const std::string& kind, double sigma) {
            return criterion(raster_from_array(i1), raster_from_array(i2),
                             field_from_array(phi), make_descriptor(kind, sigma));
        },
        py::arg("i1"), py::arg("i2"), py::arg("phi"), py::arg("kind"), py::arg("sigma") = 0.0);
    m.def(
        "descend",
        [](Arr i1, Arr i2, const std::string& kind, double sigma, double step, int iters,
           double lambda_reg, std::vector<double> sigmas) {
            DescentConfig cfg;
            cfg.step = step;
            cfg.max_iters = iters;
            cfg.lambda_reg = lambda_reg;
            cfg.sigmas = std::move(sigmas);
            const DescentResult res = descend(raster_from_array(i1), raster_from_array(i2),
                                              cfg, make_descriptor(kind, sigma));
            return py::make_tuple(field_to_array(res.field), res.trace.objective,
                                  res.trace.switch_iters);
        },
        py::arg("i1"), py::arg("i2"), py::arg("kind"), py::arg("sigma") = 0.0,
        py::arg("step") = 1.0, py::arg("iters") = 200, py::arg("lambda_reg") = 0.0,
        py::arg("sigmas") = std::vector<double>{});
    m.def(
        "multires_align",
        [](Arr i1, Arr i2, const std::string& kind, double sigma, double step, int iters,
           int levels) {
            DescentConfig cfg;
            cfg.step = step;
            cfg.max_iters = iters;
            return field_to_array(multires_align(raster_from_array(i1), raster_from_array(i2),
                                                 cfg, make_descriptor(kind, sigma), levels));
        },
        py::arg("i1"), py::arg("i2"), py::arg("kind"), py::arg("sigma") = 0.0,
        py::arg("step") = 1.0, py::arg("iters") = 200, py::arg("levels") = 3);

    py::class_<ScaleNet>(m, "ScaleNet")
        .def_property_readonly("parameter_count", &ScaleNet::parameter_count)
        .def_property_readonly("scale", [](const ScaleNet& n) { return n.scale_tag; });
    m.def("build_scale_net", &build_scale_net, py::arg("channels_a"), py::arg("channels_b"),
          py::arg("width_mult") = 1.0);
    m.def("xavier_init", [](ScaleNet& net, std::uint64_t seed) { xavier_init(net, seed); });
    m.def("load_net", &load_net);
    m.def("save_net", &save_net);
    m.def("net_forward", [](const ScaleNet& net, Arr i1, Arr i2) {
        return field_to_array(forward(net, raster_from_array(i1), raster_from_array(i2)));
    });

    m.def(
        "align_chain_files",
        [](const std::string& manifest_path, Arr i1, Arr i2, bool accurate) {
            const ChainManifest man = ChainManifest::load(manifest_path);
            const auto base =
                std::filesystem::path(manifest_path).parent_path().string();
            const ChainConfig cfg = chain_from_manifest(man, base);
            const Raster a = raster_from_array(i1), b = raster_from_array(i2);
            return field_to_array((accurate || man.accurate) ? align_accurate(a, b, cfg)
                                                             : align_chain(a, b, cfg));
        },
        py::arg("manifest"), py::arg("i1"), py::arg("i2"), py::arg("accurate") = false);

    m.def(
        "gen_dataset",
        [](const std::string& out_dir, int count, std::uint64_t seed, int size, double task_r) {
            DatasetParams p;
            p.size = size;
            if (task_r > 0) {
                p.field = scale_task_ranges(task_r, size, size);
            } else {
                p.field.width = size;
                p.field.height = size;
            }
            gen_dataset(p, count, seed, out_dir);
        },
        py::arg("out_dir"), py::arg("count"), py::arg("seed") = 1, py::arg("size") = 128,
        py::arg("task_r") = 0.0);

    m.def("pck", [](Arr field, std::vector<double> ax, std::vector<double> ay,
                    std::vector<double> bx, std::vector<double> by,
                    std::vector<double> thresholds) {
        KeypointSet kp;
        for (std::size_t i = 0; i < ax.size(); ++i) {
            kp.a.push_back({ax[i], ay[i]});
            kp.b.push_back({bx[i], by[i]});
        }
        const PckCurve c = pck(field_from_array(field), kp, thresholds);
        return py::make_tuple(c.thresholds, c.fractions);
    });
    m.def("bin_accuracy", [](Arr pred, Arr gt, double r) {
        return bin_accuracy(field_from_array(pred), field_from_array(gt), r);
    });
}

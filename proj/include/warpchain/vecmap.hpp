// vecmap.hpp - polygon/polyline maps, rasterization, corner channels,
// boundary loss masks and vertex-level deformation.
#pragma once

#include <string>
#include <vector>

#include "warpchain/deform.hpp"
#include "warpchain/raster.hpp"

namespace warpchain {

struct Point {
    double x = 0.0, y = 0.0;
};

// Closed rings (polygons) and open chains (polylines), each with a small
// nonnegative integer class label. Coordinates are in pixels.
struct VectorMap {
    std::vector<std::vector<Point>> polygons;
    std::vector<int> polygon_classes;
    std::vector<std::vector<Point>> polylines;
    std::vector<int> polyline_classes;

    void validate() const;  // throws on degenerate features / non-finite coords

    // JSON document with keys `polygons`, `polylines` (arrays of arrays of
    // [x, y]) and `classes` ({"polygons": [...], "polylines": [...]}).
    static VectorMap load_json(const std::string& path);
    void save_json(const std::string& path) const;
    std::string to_json() const;
    static VectorMap parse_json(const std::string& text);
};

struct RasterizeResult {
    Raster raster;
    int skipped = 0;  // degenerate rings dropped
};

// Binary rasterization, one channel per class (channel index = class
// label), even-odd rule sampled at pixel centers. Rings that collapse to
// zero area after deduplication are skipped and counted.
RasterizeResult rasterize_polygons(const VectorMap& vm, int w, int h);

// Pixel = 1 iff its center lies within width/2 (Euclidean) of a polyline
// segment of the map.
Raster rasterize_polylines_dilated(const VectorMap& vm, double width, int w, int h);

// Binary channel with a 1 at the pixel nearest each polygon vertex;
// vertices rounding outside the domain are ignored.
Raster corner_channel(const VectorMap& vm, int w, int h);

// Loss-weight mask: `factor` on pixels whose 4-connected (city-block)
// distance to a differently-valued pixel is <= thickness, 1 elsewhere.
// Input raster must be single-channel with values in {0, 1}.
Raster boundary_weight_mask(const Raster& binary, double factor, int thickness);

// Every vertex x is replaced by x + d(x); d sampled bilinearly.
VectorMap deform_vector_map(const VectorMap& vm, const DeformationField& phi);

// True iff min(count0, count1) / total >= min_minor_ratio over the first
// channel (values rounded to {0,1}).
bool accept_patch(const Raster& patch, double min_minor_ratio);

}  // namespace warpchain

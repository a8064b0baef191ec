#include "warpchain/vecmap.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace warpchain {

void VectorMap::validate() const {
    if (polygon_classes.size() != polygons.size() ||
        polyline_classes.size() != polylines.size()) {
        throw std::invalid_argument("VectorMap: class arrays not parallel to features");
    }
    for (const auto& ring : polygons) {
        if (ring.size() < 3) throw std::invalid_argument("VectorMap: ring with < 3 vertices");
        for (const Point& p : ring) {
            if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
                throw std::invalid_argument("VectorMap: non-finite coordinate");
            }
        }
    }
    for (const auto& line : polylines) {
        if (line.size() < 2) throw std::invalid_argument("VectorMap: polyline with < 2 vertices");
        for (const Point& p : line) {
            if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
                throw std::invalid_argument("VectorMap: non-finite coordinate");
            }
        }
    }
    for (int c : polygon_classes) {
        if (c < 0) throw std::invalid_argument("VectorMap: negative class label");
    }
    for (int c : polyline_classes) {
        if (c < 0) throw std::invalid_argument("VectorMap: negative class label");
    }
}

namespace {

using nlohmann::json;

json points_to_json(const std::vector<std::vector<Point>>& features) {
    json out = json::array();
    for (const auto& f : features) {
        json ring = json::array();
        for (const Point& p : f) ring.push_back(json::array({p.x, p.y}));
        out.push_back(std::move(ring));
    }
    return out;
}

std::vector<std::vector<Point>> points_from_json(const json& j) {
    std::vector<std::vector<Point>> out;
    for (const auto& ring : j) {
        std::vector<Point> pts;
        for (const auto& p : ring) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        out.push_back(std::move(pts));
    }
    return out;
}

}  // namespace

std::string VectorMap::to_json() const {
    json j;
    j["polygons"] = points_to_json(polygons);
    j["polylines"] = points_to_json(polylines);
    j["classes"]["polygons"] = polygon_classes;
    j["classes"]["polylines"] = polyline_classes;
    return j.dump();
}

VectorMap VectorMap::parse_json(const std::string& text) {
    const json j = json::parse(text);
    VectorMap vm;
    vm.polygons = points_from_json(j.at("polygons"));
    vm.polylines = points_from_json(j.at("polylines"));
    if (j.contains("classes")) {
        vm.polygon_classes = j["classes"].value("polygons", std::vector<int>{});
        vm.polyline_classes = j["classes"].value("polylines", std::vector<int>{});
    }
    if (vm.polygon_classes.empty()) vm.polygon_classes.assign(vm.polygons.size(), 0);
    if (vm.polyline_classes.empty()) vm.polyline_classes.assign(vm.polylines.size(), 0);
    vm.validate();
    return vm;
}

VectorMap VectorMap::load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("VectorMap::load_json: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_json(text);
}

void VectorMap::save_json(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("VectorMap::save_json: cannot open " + path);
    os << to_json() << "\n";
}

namespace {

// Even-odd rule; edges half-open so that a center exactly on a shared
// edge belongs to exactly one side.
bool point_in_ring(const std::vector<Point>& ring, double px, double py) {
    bool inside = false;
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = ring[j];
        const Point& b = ring[i];
        if ((b.y > py) != (a.y > py)) {
            const double xint = b.x + (py - b.y) * (a.x - b.x) / (a.y - b.y);
            if (px < xint) inside = !inside;
        }
    }
    return inside;
}

double ring_area2(const std::vector<Point>& ring) {
    double s = 0.0;
    const std::size_t n = ring.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        s += ring[j].x * ring[i].y - ring[i].x * ring[j].y;
    }
    return s;
}

std::vector<Point> dedup_ring(const std::vector<Point>& ring) {
    std::vector<Point> out;
    for (const Point& p : ring) {
        if (out.empty() || std::abs(out.back().x - p.x) > 1e-12 ||
            std::abs(out.back().y - p.y) > 1e-12) {
            out.push_back(p);
        }
    }
    while (out.size() > 1 && std::abs(out.front().x - out.back().x) < 1e-12 &&
           std::abs(out.front().y - out.back().y) < 1e-12) {
        out.pop_back();
    }
    return out;
}

double dist_to_segment(double px, double py, const Point& a, const Point& b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double wx = px - a.x, wy = py - a.y;
    const double vv = vx * vx + vy * vy;
    double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(px - (a.x + t * vx), py - (a.y + t * vy));
}

}  // namespace

RasterizeResult rasterize_polygons(const VectorMap& vm, int w, int h) {
    vm.validate();
    if (w < 1 || h < 1) throw std::invalid_argument("rasterize_polygons: bad dimensions");
    int channels = 1;
    for (int c : vm.polygon_classes) channels = std::max(channels, c + 1);
    RasterizeResult res{Raster(w, h, channels), 0};
    for (std::size_t i = 0; i < vm.polygons.size(); ++i) {
        const std::vector<Point> ring = dedup_ring(vm.polygons[i]);
        if (ring.size() < 3 || std::abs(ring_area2(ring)) < 1e-12) {
            ++res.skipped;
            continue;
        }
        double xmin = std::numeric_limits<double>::max(), xmax = -xmin;
        double ymin = xmin, ymax = -xmin;
        for (const Point& p : ring) {
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
        const int x0 = std::max(0, int(std::ceil(xmin)));
        const int x1 = std::min(w - 1, int(std::floor(xmax)));
        const int y0 = std::max(0, int(std::ceil(ymin)));
        const int y1 = std::min(h - 1, int(std::floor(ymax)));
        const int cls = vm.polygon_classes[i];
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                if (point_in_ring(ring, x, y)) res.raster.at(x, y, cls) = 1.0;
            }
        }
    }
    return res;
}

Raster rasterize_polylines_dilated(const VectorMap& vm, double width, int w, int h) {
    vm.validate();
    if (width < 1.0) throw std::invalid_argument("rasterize_polylines_dilated: width must be >= 1");
    Raster out(w, h, 1);
    const double r = width / 2.0;
    for (const auto& line : vm.polylines) {
        for (std::size_t k = 0; k + 1 < line.size(); ++k) {
            const Point& a = line[k];
            const Point& b = line[k + 1];
            const int x0 = std::max(0, int(std::floor(std::min(a.x, b.x) - r)));
            const int x1 = std::min(w - 1, int(std::ceil(std::max(a.x, b.x) + r)));
            const int y0 = std::max(0, int(std::floor(std::min(a.y, b.y) - r)));
            const int y1 = std::min(h - 1, int(std::ceil(std::max(a.y, b.y) + r)));
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    if (dist_to_segment(x, y, a, b) <= r) out.at(x, y, 0) = 1.0;
                }
            }
        }
    }
    return out;
}

Raster corner_channel(const VectorMap& vm, int w, int h) {
    vm.validate();
    Raster out(w, h, 1);
    for (const auto& ring : vm.polygons) {
        for (const Point& p : ring) {
            const int x = int(std::lround(p.x));
            const int y = int(std::lround(p.y));
            if (x >= 0 && x < w && y >= 0 && y < h) out.at(x, y, 0) = 1.0;
        }
    }
    return out;
}

Raster boundary_weight_mask(const Raster& binary, double factor, int thickness) {
    if (binary.channels() != 1) {
        throw std::invalid_argument("boundary_weight_mask: needs a single channel");
    }
    if (factor < 1.0) throw std::invalid_argument("boundary_weight_mask: factor must be >= 1");
    if (thickness < 0) throw std::invalid_argument("boundary_weight_mask: negative thickness");
    const int w = binary.width(), h = binary.height();
    std::vector<int> bits(std::size_t(w) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = binary.at(x, y, 0);
            if (v != 0.0 && v != 1.0) {
                throw std::invalid_argument("boundary_weight_mask: input is not binary");
            }
            bits[std::size_t(y) * w + x] = v > 0.5 ? 1 : 0;
        }
    }
    // multi-source BFS: city-block distance to the nearest opposite-valued pixel
    constexpr int kFar = std::numeric_limits<int>::max();
    std::vector<int> dist(bits.size(), kFar);
    std::deque<std::pair<int, int>> q;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int b = bits[std::size_t(y) * w + x];
            const bool edge = (x > 0 && bits[std::size_t(y) * w + x - 1] != b) ||
                              (x + 1 < w && bits[std::size_t(y) * w + x + 1] != b) ||
                              (y > 0 && bits[std::size_t(y - 1) * w + x] != b) ||
                              (y + 1 < h && bits[std::size_t(y + 1) * w + x] != b);
            if (edge) {
                dist[std::size_t(y) * w + x] = 1;
                q.emplace_back(x, y);
            }
        }
    }
    while (!q.empty()) {
        const auto [x, y] = q.front();
        q.pop_front();
        const int d = dist[std::size_t(y) * w + x];
        if (d >= thickness) continue;
        const int nx[4] = {x - 1, x + 1, x, x};
        const int ny[4] = {y, y, y - 1, y + 1};
        for (int k = 0; k < 4; ++k) {
            if (nx[k] < 0 || nx[k] >= w || ny[k] < 0 || ny[k] >= h) continue;
            int& nd = dist[std::size_t(ny[k]) * w + nx[k]];
            if (nd > d + 1) {
                nd = d + 1;
                q.emplace_back(nx[k], ny[k]);
            }
        }
    }
    Raster mask(w, h, 1, 1.0);
    if (factor > 1.0 && thickness > 0) {
        for (std::size_t i = 0; i < dist.size(); ++i) {
            if (dist[i] <= thickness) mask.data()[i] = factor;
        }
    }
    return mask;
}

VectorMap deform_vector_map(const VectorMap& vm, const DeformationField& phi) {
    vm.validate();
    VectorMap out = vm;
    double d[2];
    for (auto& ring : out.polygons) {
        for (Point& p : ring) {
            phi.sample(p.x, p.y, d);
            p.x += d[0];
            p.y += d[1];
        }
    }
    for (auto& line : out.polylines) {
        for (Point& p : line) {
            phi.sample(p.x, p.y, d);
            p.x += d[0];
            p.y += d[1];
        }
    }
    return out;
}

bool accept_patch(const Raster& patch, double min_minor_ratio) {
    std::int64_t ones = 0;
    const std::int64_t total = patch.pixel_count();
    for (int y = 0; y < patch.height(); ++y) {
        for (int x = 0; x < patch.width(); ++x) {
            if (patch.at(x, y, 0) > 0.5) ++ones;
        }
    }
    const std::int64_t minor = std::min(ones, total - ones);
    return double(minor) / double(total) >= min_minor_ratio;
}

}  // namespace warpchain

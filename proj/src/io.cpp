#include "warpchain/io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace warpchain {

namespace {

void put_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
           std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

void put_f32le(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32le(os, u);
}

float get_f32le(std::istream& is) {
    const std::uint32_t u = get_u32le(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

[[noreturn]] void fail(const std::string& what, const std::string& path) {
    throw std::runtime_error(what + ": " + path);
}

}  // namespace

void write_f32r(const Raster& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("write_f32r: cannot open", path);
    os.write("F32R", 4);
    put_u32le(os, std::uint32_t(img.width()));
    put_u32le(os, std::uint32_t(img.height()));
    put_u32le(os, std::uint32_t(img.channels()));
    for (double v : img.data()) put_f32le(os, float(v));
    if (!os) fail("write_f32r: write failed", path);
}

Raster read_f32r(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("read_f32r: cannot open", path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "F32R", 4) != 0) fail("read_f32r: bad magic", path);
    const std::uint32_t w = get_u32le(is), h = get_u32le(is), c = get_u32le(is);
    if (!is || w == 0 || h == 0 || c == 0 || std::uint64_t(w) * h * c > (1u << 30)) {
        fail("read_f32r: bad header", path);
    }
    Raster img(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
    for (double& v : img.data()) v = get_f32le(is);
    if (!is) fail("read_f32r: truncated", path);
    return img;
}

namespace {

unsigned char to_byte(double v) {
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<unsigned char>(std::lround(v * 255.0));
}

void write_pnm(const Raster& img, const std::string& path, int channels, const char* tag) {
    if (img.channels() != channels) {
        throw std::invalid_argument(std::string("write_") + tag + ": wrong channel count");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("write_pnm: cannot open", path);
    os << (channels == 1 ? "P5" : "P6") << "\n"
       << img.width() << " " << img.height() << "\n255\n";
    std::vector<unsigned char> row(std::size_t(img.width()) * channels);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            for (int k = 0; k < channels; ++k) row[std::size_t(x) * channels + k] = to_byte(img.at(x, y, k));
        }
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!os) fail("write_pnm: write failed", path);
}

}  // namespace

void write_pgm(const Raster& img, const std::string& path) { write_pnm(img, path, 1, "pgm"); }
void write_ppm(const Raster& img, const std::string& path) { write_pnm(img, path, 3, "ppm"); }

Raster read_pnm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("read_pnm: cannot open", path);
    std::string magic;
    is >> magic;
    if (magic != "P5" && magic != "P6") fail("read_pnm: unsupported format", path);
    int w = 0, h = 0, maxv = 0;
    is >> w >> h >> maxv;
    if (!is || w < 1 || h < 1 || maxv != 255) fail("read_pnm: bad header", path);
    is.get();  // single whitespace after maxval
    const int c = (magic == "P5") ? 1 : 3;
    Raster img(w, h, c);
    std::vector<unsigned char> row(std::size_t(w) * c);
    for (int y = 0; y < h; ++y) {
        is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size()));
        for (int x = 0; x < w; ++x) {
            for (int k = 0; k < c; ++k) img.at(x, y, k) = row[std::size_t(x) * c + k] / 255.0;
        }
    }
    if (!is) fail("read_pnm: truncated", path);
    return img;
}

}  // namespace warpchain

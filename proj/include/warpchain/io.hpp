// io.hpp - F32R binary rasters and 8-bit PGM/PPM import/export.
#pragma once

#include <string>

#include "warpchain/raster.hpp"

namespace warpchain {

// "F32R" magic, three u32 little-endian (width, height, channels), then
// w*h*c little-endian f32, row-major, channel-interleaved.
void write_f32r(const Raster& img, const std::string& path);
Raster read_f32r(const std::string& path);

// 8-bit binary PGM (1 channel) / PPM (3 channels). Values are clamped to
// [0, 1] and scaled to 0..255 on write; divided by 255 on read.
void write_pgm(const Raster& img, const std::string& path);
void write_ppm(const Raster& img, const std::string& path);
Raster read_pnm(const std::string& path);

}  // namespace warpchain

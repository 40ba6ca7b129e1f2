#pragma once

// File formats for images and rasters: 8-bit PNG (via libpng), the ".f32raw"
// float raster (u32 height, u32 width, float32 little-endian row-major),
// plain-text depth rasters and binary PGM ("P5") heatmaps.

#include <string>
#include <vector>

#include "tfgrasp/geometry.hpp"

namespace tfgrasp {

// Channels scaled to [0, 1]. Gray images are expanded to three equal
// channels; alpha is dropped.
std::vector<MapArray> read_png(const std::string& path);
// Writes three [0, 1] channels as 8-bit RGB (rounded, clamped).
void write_png(const std::string& path, const std::vector<MapArray>& rgb);

MapArray read_f32raw(const std::string& path);
void write_f32raw(const std::string& path, const MapArray& raster);

// Whitespace-separated floats, one image row per line. "nan" and "inf"
// tokens are kept as non-finite values.
MapArray parse_depth_text(const std::string& text);

// Min-max scaled to 0..255 (a constant map writes zeros).
void write_pgm(const std::string& path, const MapArray& map);
std::string encode_pgm(const MapArray& map);
// Reads 8-bit binary PGM values as integers 0..255.
MapArray read_pgm(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace tfgrasp

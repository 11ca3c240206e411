// Raster container plus binary PPM/PGM import/export and small file helpers.
// Working rasters hold 64-bit reals in [0,1]; 8-bit quantization happens only
// when a file is written, and imports re-normalize by /255.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace eia {

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct Raster {
    int h = 0;
    int w = 0;
    int channels = 0;
    std::vector<double> px; // row-major, channel-interleaved

    Raster() = default;
    Raster(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), channels(c_), px(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

    double& at(int y, int x, int c) {
        return px[(static_cast<std::size_t>(y) * w + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return px[(static_cast<std::size_t>(y) * w + x) * channels + c];
    }
    std::size_t size() const { return px.size(); }
};

// P6, 8-bit. Requires 3 channels.
void write_ppm(const std::string& path, const Raster& img);
Raster read_ppm(const std::string& path);

// P5, 8-bit, single channel.
void write_pgm(const std::string& path, const Raster& img);
Raster read_pgm(const std::string& path);

void write_file(const std::string& path, const std::string& body);
std::string read_file(const std::string& path);
void write_doubles(const std::string& path, const std::vector<double>& v);
std::vector<double> read_doubles(const std::string& path);

std::uint8_t quantize8(double v);

} // namespace eia

#include "eia/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace eia {

std::uint8_t quantize8(double v) {
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

static void write_pnm(const std::string& path, const Raster& img, bool color) {
    const int want = color ? 3 : 1;
    if (img.channels != want)
        throw IoError(path + ": expected " + std::to_string(want) + " channels, got " +
                      std::to_string(img.channels));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << (color ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    std::vector<std::uint8_t> bytes(img.px.size());
    for (std::size_t i = 0; i < img.px.size(); ++i) bytes[i] = quantize8(img.px[i]);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

static Raster read_pnm(const std::string& path, bool color) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::string magic;
    f >> magic;
    const std::string want = color ? "P6" : "P5";
    if (magic != want) throw IoError(path + ": bad magic " + magic);
    int w = 0, h = 0, maxval = 0;
    f >> w >> h >> maxval;
    if (w <= 0 || h <= 0 || maxval != 255) throw IoError(path + ": bad header");
    f.get(); // single whitespace after maxval
    Raster img(h, w, color ? 3 : 1);
    std::vector<std::uint8_t> bytes(img.px.size());
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short read: " + path);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.px[i] = bytes[i] / 255.0;
    return img;
}

void write_ppm(const std::string& path, const Raster& img) { write_pnm(path, img, true); }
Raster read_ppm(const std::string& path) { return read_pnm(path, true); }
void write_pgm(const std::string& path, const Raster& img) { write_pnm(path, img, false); }
Raster read_pgm(const std::string& path) { return read_pnm(path, false); }

void write_file(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw IoError("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_doubles(const std::string& path, const std::vector<double>& v) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!f) throw IoError("write failed: " + path);
}

std::vector<double> read_doubles(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open for read: " + path);
    const auto bytes = static_cast<std::size_t>(f.tellg());
    if (bytes % sizeof(double) != 0) throw IoError(path + ": size not a multiple of 8");
    f.seekg(0);
    std::vector<double> v(bytes / sizeof(double));
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
    if (!f) throw IoError("short read: " + path);
    return v;
}

} // namespace eia

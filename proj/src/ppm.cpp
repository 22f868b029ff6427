#include "ci2p/ppm.hpp"

#include <cctype>
#include <fstream>

#include "ci2p/errors.hpp"

namespace ci2p {

namespace {

// Next whitespace-delimited token, skipping '#' comments.
int read_header_int(std::istream& is, const std::string& path, const char* what) {
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (std::isspace(c)) {
            c = is.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c)) {
        throw DataError(path + ": malformed PPM header (expected " + std::string(what) + ")");
    }
    long v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        if (v > 1 << 20) throw DataError(path + ": PPM " + what + " out of range");
        c = is.get();
    }
    if (c != EOF && !std::isspace(c)) {
        throw DataError(path + ": malformed PPM header (junk after " + std::string(what) + ")");
    }
    return static_cast<int>(v);
}

}  // namespace

PpmImage read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError(path + ": cannot open");
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '6') throw DataError(path + ": not a binary PPM (P6)");
    PpmImage img;
    img.width = read_header_int(is, path, "width");
    img.height = read_header_int(is, path, "height");
    const int maxval = read_header_int(is, path, "maxval");
    if (maxval != 255) {
        throw DataError(path + ": unsupported PPM maxval " + std::to_string(maxval) +
                        " (only 255 is supported)");
    }
    if (img.width <= 0 || img.height <= 0) throw DataError(path + ": non-positive PPM dimensions");
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
    img.pixels.resize(n);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw DataError(path + ": truncated PPM pixel data");
    }
    return img;
}

void write_ppm(const std::string& path, const PpmImage& img) {
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
        throw ContractError("write_ppm: inconsistent image buffer");
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError(path + ": cannot open for writing");
    os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw DataError(path + ": write failed");
}

}  // namespace ci2p

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ci2p {

// Binary PPM (P6), maxval 255 only.
struct PpmImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // RGB interleaved, row-major
};

PpmImage read_ppm(const std::string& path);        // throws DataError naming the file
void write_ppm(const std::string& path, const PpmImage& img);

}  // namespace ci2p

// Minimal grayscale PNG encoder (8-bit, color type 0) on top of zlib.

#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "diffusesg/common.hpp"

namespace dsg {

namespace {

void push_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void push_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    push_be32(out, static_cast<uint32_t>(data.size()));
    const size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
    push_be32(out, crc);
}

}  // namespace

void write_grayscale_png(const std::string& path, const std::vector<uint8_t>& pixels, int width,
                         int height) {
    check_contract(width >= 1 && height >= 1, "png: bad dimensions");
    check_contract(pixels.size() == static_cast<size_t>(width) * height, "png: pixel count");

    // Scanlines with filter byte 0.
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (static_cast<size_t>(width) + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const uint8_t* row = pixels.data() + static_cast<size_t>(y) * width;
        raw.insert(raw.end(), row, row + width);
    }
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (::compress(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size())) != Z_OK)
        throw NumericError("png: zlib compression failed");
    compressed.resize(bound);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<uint8_t> ihdr;
    push_be32(ihdr, static_cast<uint32_t>(width));
    push_be32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(0);  // grayscale
    ihdr.push_back(0);  // deflate
    ihdr.push_back(0);  // adaptive filtering
    ihdr.push_back(0);  // no interlace
    push_chunk(out, "IHDR", ihdr);
    push_chunk(out, "IDAT", compressed);
    push_chunk(out, "IEND", {});

    FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw DataError("cannot write " + path);
    const size_t written = std::fwrite(out.data(), 1, out.size(), f);
    std::fclose(f);
    if (written != out.size()) throw DataError("short write: " + path);
}

}  // namespace dsg

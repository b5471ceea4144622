#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace c2vl {

// Minimal RGB image. Crops are stored on disk as binary PPM (P6), which keeps
// the pipeline free of image-codec dependencies.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // height*width*3, row-major

    bool empty() const { return width <= 0 || height <= 0 || rgb.empty(); }

    std::uint8_t& at(int x, int y, int c) { return rgb[static_cast<std::size_t>(y * width + x) * 3 + c]; }
    std::uint8_t at(int x, int y, int c) const { return rgb[static_cast<std::size_t>(y * width + x) * 3 + c]; }
};

// Normalized box, corners in [0,1] with x0 < x1 and y0 < y1.
struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    Box clipped() const;
    double area() const { return (x1 - x0) * (y1 - y0); }
    bool valid() const { return x0 < x1 && y0 < y1; }
    // Smallest box containing both.
    Box united(const Box& other) const;
};

std::vector<std::uint8_t> encode_ppm(const ImageBuffer& img);
ImageBuffer decode_ppm(const std::vector<std::uint8_t>& bytes);

// Pixel sub-rectangle of a normalized box; always returns at least 1x1.
ImageBuffer crop_image(const ImageBuffer& img, const Box& box);

}  // namespace c2vl

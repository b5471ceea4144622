#include "c2vl/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "c2vl/common.hpp"

namespace c2vl {

Box Box::clipped() const {
    Box b;
    b.x0 = std::clamp(x0, 0.0, 1.0);
    b.y0 = std::clamp(y0, 0.0, 1.0);
    b.x1 = std::clamp(x1, 0.0, 1.0);
    b.y1 = std::clamp(y1, 0.0, 1.0);
    return b;
}

Box Box::united(const Box& other) const {
    Box b;
    b.x0 = std::min(x0, other.x0);
    b.y0 = std::min(y0, other.y0);
    b.x1 = std::max(x1, other.x1);
    b.y1 = std::max(y1, other.y1);
    return b;
}

std::vector<std::uint8_t> encode_ppm(const ImageBuffer& img) {
    if (img.empty()) throw DataError("cannot encode empty image");
    char header[64];
    int n = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", img.width, img.height);
    std::vector<std::uint8_t> out(header, header + n);
    out.insert(out.end(), img.rgb.begin(), img.rgb.end());
    return out;
}

namespace {
// Reads one whitespace-delimited PPM token, skipping '#' comments.
int read_ppm_int(const std::vector<std::uint8_t>& b, std::size_t& pos) {
    while (pos < b.size()) {
        char c = static_cast<char>(b[pos]);
        if (c == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= b.size() || !std::isdigit(b[pos]))
        throw ParseError("<ppm>", pos, "expected integer token");
    int v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
        v = v * 10 + (b[pos] - '0');
        ++pos;
    }
    return v;
}
}  // namespace

ImageBuffer decode_ppm(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw ParseError("<ppm>", 0, "not a P6 ppm");
    std::size_t pos = 2;
    ImageBuffer img;
    img.width = read_ppm_int(bytes, pos);
    img.height = read_ppm_int(bytes, pos);
    int maxval = read_ppm_int(bytes, pos);
    if (maxval != 255) throw ParseError("<ppm>", pos, "only maxval 255 supported");
    ++pos;  // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(img.width) * img.height * 3;
    if (bytes.size() - pos < need) throw ParseError("<ppm>", pos, "truncated pixel data");
    img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return img;
}

ImageBuffer crop_image(const ImageBuffer& img, const Box& box) {
    if (img.empty()) throw DataError("cannot crop empty image");
    Box b = box.clipped();
    int px0 = static_cast<int>(std::floor(b.x0 * img.width));
    int py0 = static_cast<int>(std::floor(b.y0 * img.height));
    int px1 = static_cast<int>(std::ceil(b.x1 * img.width));
    int py1 = static_cast<int>(std::ceil(b.y1 * img.height));
    px0 = std::clamp(px0, 0, img.width - 1);
    py0 = std::clamp(py0, 0, img.height - 1);
    px1 = std::clamp(px1, px0 + 1, img.width);
    py1 = std::clamp(py1, py0 + 1, img.height);

    ImageBuffer out;
    out.width = px1 - px0;
    out.height = py1 - py0;
    out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    for (int y = py0; y < py1; ++y) {
        const auto* src = &img.rgb[static_cast<std::size_t>(y * img.width + px0) * 3];
        auto* dst = &out.rgb[static_cast<std::size_t>((y - py0) * out.width) * 3];
        std::copy(src, src + static_cast<std::size_t>(out.width) * 3, dst);
    }
    return out;
}

}  // namespace c2vl

#include "dbmnet/image.hpp"

#include <algorithm>
#include <cmath>

namespace dbmnet {

Image resize_bilinear(const Image& in, int out_h, int out_w) {
    if (in.height == out_h && in.width == out_w) return in;
    Image out(out_h, out_w);
    const double sy = static_cast<double>(in.height) / out_h;
    const double sx = static_cast<double>(in.width) / out_w;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < out_h; ++y) {
            // half-pixel centers
            const double fy = (y + 0.5) * sy - 0.5;
            const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, in.height - 1);
            const int y1 = std::min(y0 + 1, in.height - 1);
            const double wy = std::clamp(fy - y0, 0.0, 1.0);
            for (int x = 0; x < out_w; ++x) {
                const double fx = (x + 0.5) * sx - 0.5;
                const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, in.width - 1);
                const int x1 = std::min(x0 + 1, in.width - 1);
                const double wx = std::clamp(fx - x0, 0.0, 1.0);
                const double top = in.at(c, y0, x0) * (1.0 - wx) + in.at(c, y0, x1) * wx;
                const double bot = in.at(c, y1, x0) * (1.0 - wx) + in.at(c, y1, x1) * wx;
                out.at(c, y, x) = static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    return out;
}

void clamp_unit(Image& img) {
    for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

void check_image(const Image& img, int expected_size) {
    if (img.height != expected_size || img.width != expected_size ||
        img.data.size() != static_cast<size_t>(3) * expected_size * expected_size) {
        throw ShapeError("image shape mismatch: expected 3x" + std::to_string(expected_size) +
                         "x" + std::to_string(expected_size) + ", got 3x" +
                         std::to_string(img.height) + "x" + std::to_string(img.width));
    }
    for (float v : img.data) {
        if (!std::isfinite(v)) throw ShapeError("image contains non-finite values");
    }
}

}  // namespace dbmnet

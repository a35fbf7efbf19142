#pragma once

#include <cstddef>
#include <vector>

#include "dbmnet/errors.hpp"

namespace dbmnet {

// RGB image, channel-major (c, y, x), values expected in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;  // size = 3 * height * width

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(3) * h * w, 0.0f) {}

    float& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }

    bool same_shape(const Image& other) const {
        return height == other.height && width == other.width;
    }
};

// Bilinear resize with edge clamping. Identity when sizes already match.
Image resize_bilinear(const Image& in, int out_h, int out_w);

// Clamps every value into [0, 1] in place.
void clamp_unit(Image& img);

// Throws ShapeError unless the image is 3 x size x size with finite values.
void check_image(const Image& img, int expected_size);

}  // namespace dbmnet

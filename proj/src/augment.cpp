#include "dbmnet/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace dbmnet {

namespace {

float sample_bilinear_zero(const Image& img, int c, double y, double x) {
    // zero fill outside the source
    if (y <= -1.0 || x <= -1.0 || y >= img.height || x >= img.width) return 0.0f;
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double wy = y - y0;
    const double wx = x - x0;
    auto px = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) return 0.0;
        return img.at(c, yy, xx);
    };
    const double top = px(y0, x0) * (1.0 - wx) + px(y0, x0 + 1) * wx;
    const double bot = px(y0 + 1, x0) * (1.0 - wx) + px(y0 + 1, x0 + 1) * wx;
    return static_cast<float>(top * (1.0 - wy) + bot * wy);
}

Image rotate(const Image& in, double degrees) {
    const double phi = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(phi);
    const double s = std::sin(phi);
    const double cx = (in.width - 1) * 0.5;
    const double cy = (in.height - 1) * 0.5;
    Image out(in.height, in.width);
    for (int ch = 0; ch < 3; ++ch) {
        for (int y = 0; y < in.height; ++y) {
            for (int x = 0; x < in.width; ++x) {
                // inverse rotation about the center
                const double dx = x - cx;
                const double dy = y - cy;
                const double sx = c * dx + s * dy + cx;
                const double sy = -s * dx + c * dy + cy;
                out.at(ch, y, x) = sample_bilinear_zero(in, ch, sy, sx);
            }
        }
    }
    return out;
}

// 3x3 homography mapping 4 source corners onto 4 destination corners,
// solved with plain Gaussian elimination on the standard 8x8 DLT system.
std::array<double, 9> homography(const std::array<std::array<double, 2>, 4>& src,
                                 const std::array<std::array<double, 2>, 4>& dst) {
    double m[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const double x = src[i][0], y = src[i][1];
        const double u = dst[i][0], v = dst[i][1];
        double* r0 = m[2 * i];
        double* r1 = m[2 * i + 1];
        r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
        r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
    }
    for (int col = 0; col < 8; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 8; ++r) {
            if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
        }
        std::swap(m[pivot], m[col]);
        const double p = m[col][col];
        for (int r = 0; r < 8; ++r) {
            if (r == col || m[r][col] == 0.0) continue;
            const double factor = m[r][col] / p;
            for (int k = col; k < 9; ++k) m[r][k] -= factor * m[col][k];
        }
    }
    std::array<double, 9> h{};
    for (int i = 0; i < 8; ++i) h[i] = m[i][8] / m[i][i];
    h[8] = 1.0;
    return h;
}

std::array<double, 9> invert3x3(const std::array<double, 9>& a) {
    const double det = a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
                       a[2] * (a[3] * a[7] - a[4] * a[6]);
    const double id = 1.0 / det;
    return {(a[4] * a[8] - a[5] * a[7]) * id, (a[2] * a[7] - a[1] * a[8]) * id,
            (a[1] * a[5] - a[2] * a[4]) * id, (a[5] * a[6] - a[3] * a[8]) * id,
            (a[0] * a[8] - a[2] * a[6]) * id, (a[2] * a[3] - a[0] * a[5]) * id,
            (a[3] * a[7] - a[4] * a[6]) * id, (a[1] * a[6] - a[0] * a[7]) * id,
            (a[0] * a[4] - a[1] * a[3]) * id};
}

Image perspective(const Image& in, Rng& rng) {
    const double max_disp = 0.1 * std::min(in.width, in.height);
    const double w = in.width - 1.0;
    const double h = in.height - 1.0;
    const std::array<std::array<double, 2>, 4> src = {{{0, 0}, {w, 0}, {w, h}, {0, h}}};
    std::array<std::array<double, 2>, 4> dst{};
    for (int i = 0; i < 4; ++i) {
        dst[i][0] = src[i][0] + rng.uniform(-max_disp, max_disp);
        dst[i][1] = src[i][1] + rng.uniform(-max_disp, max_disp);
    }
    const auto inv = invert3x3(homography(src, dst));
    Image out(in.height, in.width);
    for (int ch = 0; ch < 3; ++ch) {
        for (int y = 0; y < in.height; ++y) {
            for (int x = 0; x < in.width; ++x) {
                const double denom = inv[6] * x + inv[7] * y + inv[8];
                const double sx = (inv[0] * x + inv[1] * y + inv[2]) / denom;
                const double sy = (inv[3] * x + inv[4] * y + inv[5]) / denom;
                out.at(ch, y, x) = sample_bilinear_zero(in, ch, sy, sx);
            }
        }
    }
    return out;
}

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx > 0 ? d / mx : 0.0;
    if (d <= 0) {
        h = 0;
        return;
    }
    if (mx == r) h = std::fmod((g - b) / d, 6.0);
    else if (mx == g) h = (b - r) / d + 2.0;
    else h = (r - g) / d + 4.0;
    h /= 6.0;
    if (h < 0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double hh = std::fmod(h, 1.0) * 6.0;
    const int i = static_cast<int>(std::floor(hh)) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1 - s);
    const double q = v * (1 - s * f);
    const double t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

void color_jitter(Image& img, Rng& rng) {
    const double contrast = rng.uniform(0.8, 1.2);
    const double saturation = rng.uniform(0.8, 1.2);
    const double hue_shift = rng.uniform(-0.05, 0.05);

    double gray_mean = 0;
    const int n = img.height * img.width;
    for (int i = 0; i < n; ++i) {
        gray_mean += luma(img.data[i], img.data[n + i], img.data[2 * n + i]);
    }
    gray_mean /= n;

    for (int i = 0; i < n; ++i) {
        double r = img.data[i], g = img.data[n + i], b = img.data[2 * n + i];
        r = contrast * r + (1 - contrast) * gray_mean;
        g = contrast * g + (1 - contrast) * gray_mean;
        b = contrast * b + (1 - contrast) * gray_mean;
        const double gr = luma(r, g, b);
        r = saturation * r + (1 - saturation) * gr;
        g = saturation * g + (1 - saturation) * gr;
        b = saturation * b + (1 - saturation) * gr;
        r = std::clamp(r, 0.0, 1.0);
        g = std::clamp(g, 0.0, 1.0);
        b = std::clamp(b, 0.0, 1.0);
        double h, s, v;
        rgb_to_hsv(r, g, b, h, s, v);
        hsv_to_rgb(h + hue_shift + 1.0, s, v, r, g, b);
        img.data[i] = static_cast<float>(r);
        img.data[n + i] = static_cast<float>(g);
        img.data[2 * n + i] = static_cast<float>(b);
    }
}

void gaussian_blur3(Image& img, double sigma) {
    const double k1 = 1.0;
    const double k0 = std::exp(-1.0 / (2.0 * sigma * sigma));
    const double norm = 1.0 / (k1 + 2.0 * k0);
    const double w0 = k0 * norm, w1 = k1 * norm;
    Image tmp = img;
    auto clampi = [](int v, int lo, int hi) { return std::clamp(v, lo, hi); };
    // horizontal
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                tmp.at(c, y, x) = static_cast<float>(
                    w0 * img.at(c, y, clampi(x - 1, 0, img.width - 1)) + w1 * img.at(c, y, x) +
                    w0 * img.at(c, y, clampi(x + 1, 0, img.width - 1)));
    // vertical
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                img.at(c, y, x) = static_cast<float>(
                    w0 * tmp.at(c, clampi(y - 1, 0, img.height - 1), x) + w1 * tmp.at(c, y, x) +
                    w0 * tmp.at(c, clampi(y + 1, 0, img.height - 1), x));
}

void random_erase(Image& img, Rng& rng) {
    const double area_frac = rng.uniform(0.02, 0.10);
    const double aspect = rng.uniform(0.5, 2.0);
    const double area = area_frac * img.height * img.width;
    int ew = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    int eh = static_cast<int>(std::lround(std::sqrt(area / aspect)));
    ew = std::clamp(ew, 1, img.width);
    eh = std::clamp(eh, 1, img.height);
    const int x0 = static_cast<int>(rng.uniform_int(img.width - ew + 1));
    const int y0 = static_cast<int>(rng.uniform_int(img.height - eh + 1));
    for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y0 + eh; ++y)
            for (int x = x0; x < x0 + ew; ++x)
                img.at(c, y, x) = static_cast<float>(rng.uniform());
}

}  // namespace

Image augment(const Image& in, Rng& rng) {
    Image img = in;
    bool touched = false;

    if (rng.uniform() < 0.5) {
        img = rotate(img, rng.uniform(-30.0, 30.0));
        touched = true;
    }
    if (rng.uniform() < 0.5) {
        img = perspective(img, rng);
        touched = true;
    }
    if (rng.uniform() < 0.5) {
        color_jitter(img, rng);
        touched = true;
    }
    if (rng.uniform() < 0.5) {
        gaussian_blur3(img, rng.uniform(0.1, 1.0));
        touched = true;
    }
    if (rng.uniform() < 0.5) {
        random_erase(img, rng);
        touched = true;
    }

    if (touched) clamp_unit(img);
    return img;
}

}  // namespace dbmnet

#include "brite/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "brite/errors.hpp"

namespace brite {

namespace {

void draw_line(RasterImage& im, double x0, double y0, double x1, double y1, uint8_t r, uint8_t g,
               uint8_t b) {
    const double dx = x1 - x0, dy = y1 - y0;
    const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(dx), std::abs(dy)))));
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const int px = static_cast<int>(std::lround(x0 + t * dx));
        const int py = static_cast<int>(std::lround(y0 + t * dy));
        im.set(px, py, r, g, b);
        im.set(px, py + 1, r, g, b); // 2px stroke for visibility
    }
}

} // namespace

void save_ppm(const std::string& path, const RasterImage& image) {
    if (image.h < 1 || image.w < 1) throw InvalidInput("save_ppm: empty image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("save_ppm: cannot open " + path);
    char header[64];
    const int n = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", image.w, image.h);
    out.write(header, n);
    out.write(reinterpret_cast<const char*>(image.rgb.data()),
              static_cast<std::streamsize>(image.rgb.size()));
    if (!out) throw FormatError("save_ppm: write failed for " + path);
}

RasterImage render_heatmap(const ScalarField2D& field, int magnify) {
    if (field.h < 1 || field.w < 1) throw InvalidInput("render_heatmap: empty field");
    if (magnify < 1) throw InvalidInput("render_heatmap: magnify must be >= 1");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : field.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    RasterImage im(field.h * magnify, field.w * magnify);
    for (int y = 0; y < im.h; ++y) {
        for (int x = 0; x < im.w; ++x) {
            const double v = (field.at(x / magnify, y / magnify) - lo) / span;
            const auto g = static_cast<uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
            im.set(x, y, g, g, g);
        }
    }
    return im;
}

void palette_color(size_t index, uint8_t& r, uint8_t& g, uint8_t& b) {
    static const uint8_t pal[8][3] = {{31, 119, 180}, {214, 39, 40},  {44, 160, 44},
                                      {148, 103, 189}, {255, 127, 14}, {140, 86, 75},
                                      {23, 190, 207},  {127, 127, 127}};
    const auto* c = pal[index % 8];
    r = c[0];
    g = c[1];
    b = c[2];
}

RasterImage plot_series(const std::vector<PlotSeries>& series, int height, int width) {
    if (height < 40 || width < 40) throw InvalidInput("plot_series: canvas too small");
    RasterImage im(height, width);

    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
    double ylo = xlo, yhi = -xlo;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw ShapeError("plot_series: x/y length mismatch");
        for (size_t i = 0; i < s.x.size(); ++i) {
            xlo = std::min(xlo, s.x[i]);
            xhi = std::max(xhi, s.x[i]);
            ylo = std::min(ylo, s.y[i]);
            yhi = std::max(yhi, s.y[i]);
        }
    }
    if (!(xlo <= xhi)) { // no points at all
        xlo = 0.0;
        xhi = 1.0;
        ylo = 0.0;
        yhi = 1.0;
    }
    if (ylo > 0.0) ylo = 0.0; // anchor positive metrics at zero
    if (xhi == xlo) xhi = xlo + 1.0;
    if (yhi == ylo) yhi = ylo + 1.0;

    const int ml = 12, mr = 12, mt = 12, mb = 12; // margins
    const int pw = width - ml - mr, ph = height - mt - mb;
    auto px = [&](double x) { return ml + (x - xlo) / (xhi - xlo) * (pw - 1); };
    auto py = [&](double y) { return mt + (1.0 - (y - ylo) / (yhi - ylo)) * (ph - 1); };

    // light gridlines at quarters, then the frame
    for (int k = 1; k < 4; ++k) {
        const int gx = ml + k * (pw - 1) / 4;
        const int gy = mt + k * (ph - 1) / 4;
        for (int y = mt; y < mt + ph; ++y) im.set(gx, y, 225, 225, 225);
        for (int x = ml; x < ml + pw; ++x) im.set(x, gy, 225, 225, 225);
    }
    for (int x = ml; x < ml + pw; ++x) {
        im.set(x, mt, 0, 0, 0);
        im.set(x, mt + ph - 1, 0, 0, 0);
    }
    for (int y = mt; y < mt + ph; ++y) {
        im.set(ml, y, 0, 0, 0);
        im.set(ml + pw - 1, y, 0, 0, 0);
    }

    for (const auto& s : series) {
        for (size_t i = 0; i + 1 < s.x.size(); ++i) {
            draw_line(im, px(s.x[i]), py(s.y[i]), px(s.x[i + 1]), py(s.y[i + 1]), s.r, s.g, s.b);
        }
        if (s.x.size() == 1) {
            const int cx = static_cast<int>(std::lround(px(s.x[0])));
            const int cy = static_cast<int>(std::lround(py(s.y[0])));
            for (int dy = -2; dy <= 2; ++dy)
                for (int dx = -2; dx <= 2; ++dx) im.set(cx + dx, cy + dy, s.r, s.g, s.b);
        }
    }
    return im;
}

} // namespace brite

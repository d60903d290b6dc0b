#pragma once

// Minimal raster plotting: grayscale heatmaps of scalar fields and polyline
// charts of time series, written as binary PPM (P6) images. No text
// rendering — series identity is carried by color order, documented in the
// CSV written next to each plot.

#include <cstdint>
#include <string>
#include <vector>

#include "brite/fields.hpp"

namespace brite {

struct RasterImage {
    int h{0};
    int w{0};
    std::vector<uint8_t> rgb; // 3 bytes per pixel, row-major

    RasterImage() = default;
    RasterImage(int height, int width, uint8_t fill = 255)
        : h(height), w(width), rgb(static_cast<size_t>(height) * width * 3, fill) {}

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        const size_t i = (static_cast<size_t>(y) * w + x) * 3;
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }
};

/// Binary PPM (P6) writer.
void save_ppm(const std::string& path, const RasterImage& image);

/// Min/max-normalized grayscale rendering, optionally magnified by an
/// integer factor.
RasterImage render_heatmap(const ScalarField2D& field, int magnify = 1);

struct PlotSeries {
    std::vector<double> x;
    std::vector<double> y;
    uint8_t r{0}, g{0}, b{0};
};

/// Polyline chart with a framed plot area and light gridlines. Axis limits
/// are the data's bounding box (y expanded to include 0 when positive).
RasterImage plot_series(const std::vector<PlotSeries>& series, int height = 360, int width = 520);

/// Fixed palette used for method curves, cycling after eight entries.
void palette_color(size_t index, uint8_t& r, uint8_t& g, uint8_t& b);

} // namespace brite

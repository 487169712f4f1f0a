#pragma once

#include "flsim/engine.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace flsim {

/// round,node,val_loss for every validated row; one series per node.
inline std::string loss_curves_csv(const std::vector<RoundMetrics>& rows)
{
    std::string out = "round,node,val_loss\n";
    for (const auto& r : rows)
        if (!std::isnan(r.val_loss)) out += fmt::format("{},{},{:.10g}\n", r.round, r.node, r.val_loss);
    return out;
}

/// RGB raster, row-major, origin top-left.
class Canvas {
public:
    Canvas(std::size_t w, std::size_t h) : w_(w), h_(h), px_(w * h * 3, 255) {}

    std::size_t width() const { return w_; }
    std::size_t height() const { return h_; }

    void set(long x, long y, std::array<std::uint8_t, 3> c)
    {
        if (x < 0 || y < 0 || x >= static_cast<long>(w_) || y >= static_cast<long>(h_)) return;
        const std::size_t i = (static_cast<std::size_t>(y) * w_ + static_cast<std::size_t>(x)) * 3;
        px_[i] = c[0];
        px_[i + 1] = c[1];
        px_[i + 2] = c[2];
    }

    std::array<std::uint8_t, 3> get(std::size_t x, std::size_t y) const
    {
        const std::size_t i = (y * w_ + x) * 3;
        return {px_[i], px_[i + 1], px_[i + 2]};
    }

    // Bresenham
    void line(long x0, long y0, long x1, long y1, std::array<std::uint8_t, 3> c)
    {
        const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        long err = dx + dy;
        for (;;) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const long e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    /// PNG, 8-bit truecolor, filter 0 on every scanline.
    std::vector<char> encode_png() const
    {
        std::vector<unsigned char> raw;
        raw.reserve(h_ * (w_ * 3 + 1));
        for (std::size_t y = 0; y < h_; ++y) {
            raw.push_back(0);
            raw.insert(raw.end(), px_.begin() + static_cast<std::ptrdiff_t>(y * w_ * 3),
                       px_.begin() + static_cast<std::ptrdiff_t>((y + 1) * w_ * 3));
        }
        uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
        std::vector<unsigned char> z(zlen);
        if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
            throw std::runtime_error("png: deflate failed");
        z.resize(zlen);

        std::vector<char> out{'\x89', 'P', 'N', 'G', '\r', '\n', '\x1a', '\n'};
        auto put32 = [](std::vector<unsigned char>& v, std::uint32_t x) {
            for (int s = 24; s >= 0; s -= 8) v.push_back(static_cast<unsigned char>(x >> s));
        };
        auto chunk = [&](const char* type, const std::vector<unsigned char>& data) {
            std::vector<unsigned char> body(type, type + 4);
            body.insert(body.end(), data.begin(), data.end());
            std::vector<unsigned char> len;
            put32(len, static_cast<std::uint32_t>(data.size()));
            std::vector<unsigned char> crc;
            put32(crc, static_cast<std::uint32_t>(crc32(0L, body.data(), static_cast<uInt>(body.size()))));
            out.insert(out.end(), len.begin(), len.end());
            out.insert(out.end(), body.begin(), body.end());
            out.insert(out.end(), crc.begin(), crc.end());
        };
        std::vector<unsigned char> ihdr;
        put32(ihdr, static_cast<std::uint32_t>(w_));
        put32(ihdr, static_cast<std::uint32_t>(h_));
        ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
        chunk("IHDR", ihdr);
        chunk("IDAT", z);
        chunk("IEND", {});
        return out;
    }

private:
    std::size_t w_, h_;
    std::vector<std::uint8_t> px_;
};

/// Validation loss vs round, one colored polyline per node, on a plain frame
/// (no text). The y range is [0, max loss].
inline Canvas plot_loss_curves(const std::vector<RoundMetrics>& rows, std::size_t w = 640, std::size_t h = 400)
{
    static constexpr std::array<std::array<std::uint8_t, 3>, 8> palette{{
        {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
        {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
    }};
    std::map<std::size_t, std::vector<std::pair<double, double>>> series;
    double max_round = 1.0, max_loss = 0.0;
    for (const auto& r : rows) {
        if (std::isnan(r.val_loss)) continue;
        series[r.node].emplace_back(static_cast<double>(r.round), r.val_loss);
        max_round = std::max(max_round, static_cast<double>(r.round));
        max_loss = std::max(max_loss, r.val_loss);
    }
    if (max_loss <= 0.0) max_loss = 1.0;

    Canvas c(w, h);
    const long left = 40, right = static_cast<long>(w) - 10, top = 10, bottom = static_cast<long>(h) - 30;
    const std::array<std::uint8_t, 3> axis{0, 0, 0};
    c.line(left, top, left, bottom, axis);
    c.line(left, bottom, right, bottom, axis);
    auto sx = [&](double x) { return left + std::lround(x / max_round * static_cast<double>(right - left)); };
    auto sy = [&](double y) { return bottom - std::lround(y / max_loss * static_cast<double>(bottom - top)); };
    for (const auto& [node, pts] : series) {
        const auto color = palette[node % palette.size()];
        for (std::size_t i = 1; i < pts.size(); ++i)
            c.line(sx(pts[i - 1].first), sy(pts[i - 1].second), sx(pts[i].first), sy(pts[i].second), color);
    }
    return c;
}

} // namespace flsim

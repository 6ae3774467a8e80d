#include "cobra/render.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cobra {

namespace {

void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_be32(out, static_cast<std::uint32_t>(crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

std::string points_attr(const Polyline& line, double width, double height) {
  std::string s;
  char buf[64];
  for (const auto& p : line.vertices()) {
    std::snprintf(buf, sizeof(buf), "%.3f,%.3f ", p.x * (width - 1), p.y * (height - 1));
    s += buf;
  }
  if (!s.empty()) s.pop_back();
  return s;
}

}  // namespace

std::string encode_png_gray(const NdArray& image) {
  if (image.rank() != 2) throw ShapeError("encode_png_gray: image must be [H,W]");
  const std::size_t h = image.dim(0), w = image.dim(1);
  std::string raw;
  raw.reserve(h * (w + 1));
  for (std::size_t r = 0; r < h; ++r) {
    raw.push_back('\0');  // filter: none
    for (std::size_t c = 0; c < w; ++c) {
      raw.push_back(static_cast<char>(std::lround(std::clamp(image.at(r, c), 0.0, 1.0) * 255.0)));
    }
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK) {
    throw std::runtime_error("encode_png_gray: zlib compression failed");
  }
  packed.resize(packed_size);

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(w));
  put_be32(ihdr, static_cast<std::uint32_t>(h));
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // 8-bit grayscale, deflate, no filter, no interlace
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", packed);
  put_chunk(png, "IEND", "");
  return png;
}

std::string base64_encode(const std::string& bytes) {
  static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint32_t{static_cast<unsigned char>(bytes[i])} << 16) |
                            (std::uint32_t{static_cast<unsigned char>(bytes[i + 1])} << 8) |
                            static_cast<unsigned char>(bytes[i + 2]);
    out += {table[(v >> 18) & 63], table[(v >> 12) & 63], table[(v >> 6) & 63], table[v & 63]};
  }
  if (i < bytes.size()) {
    std::uint32_t v = std::uint32_t{static_cast<unsigned char>(bytes[i])} << 16;
    if (i + 1 < bytes.size()) v |= std::uint32_t{static_cast<unsigned char>(bytes[i + 1])} << 8;
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? table[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string svg_overlay(const NdArray& image, const std::optional<Polyline>& truth, const Polyline& prediction,
                        const std::vector<Polyline>& intermediates) {
  const double h = static_cast<double>(image.dim(0)), w = static_cast<double>(image.dim(1));
  char head[256];
  std::snprintf(head, sizeof(head),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                w * 4, h * 4, w - 1, h - 1);
  std::string svg = head;
  std::snprintf(head, sizeof(head), "<image x=\"-0.5\" y=\"-0.5\" width=\"%.0f\" height=\"%.0f\" ", w, h);
  svg += head;
  svg += "style=\"image-rendering:pixelated\" href=\"data:image/png;base64," + base64_encode(encode_png_gray(image)) +
         "\"/>\n";
  const double stroke = std::max(w, h) / 200.0;
  char style[128];
  for (const auto& line : intermediates) {
    std::snprintf(style, sizeof(style), "fill=\"none\" stroke=\"#3070ff\" stroke-width=\"%.3f\" stroke-dasharray=\"%.3f\"",
                  stroke, 3 * stroke);
    svg += "<polyline class=\"intermediate\" " + std::string(style) + " points=\"" + points_attr(line, w, h) + "\"/>\n";
  }
  if (truth) {
    std::snprintf(style, sizeof(style), "fill=\"none\" stroke=\"#ff2020\" stroke-width=\"%.3f\"", stroke);
    svg += "<polyline class=\"truth\" " + std::string(style) + " points=\"" + points_attr(*truth, w, h) + "\"/>\n";
  }
  std::snprintf(style, sizeof(style), "fill=\"none\" stroke=\"#0040ff\" stroke-width=\"%.3f\"", stroke);
  svg += "<polyline class=\"prediction\" " + std::string(style) + " points=\"" + points_attr(prediction, w, h) + "\"/>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace cobra

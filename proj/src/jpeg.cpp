#include <cmath>
#include <numbers>
#include <stdexcept>

#include "genattack/defenses.hpp"

namespace genattack {

namespace {

// ITU-T T.81 Annex K example tables.
constexpr std::array<int, 64> kLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChromaTable = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99,
    99, 99, 47, 66, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

using Block = Eigen::Matrix<double, 8, 8>;
using Plane = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

const Block &dct_matrix() {
  static const Block m = [] {
    Block d;
    for (int u = 0; u < 8; ++u) {
      const double scale = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) {
        d(u, x) = scale * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    }
    return d;
  }();
  return m;
}

/// Level-shifted plane in, reconstructed (still level-shifted) plane out.
Plane code_plane(const Plane &plane, const std::array<int, 64> &table) {
  const Index h = plane.rows();
  const Index w = plane.cols();
  const Index ph = (h + 7) / 8 * 8;
  const Index pw = (w + 7) / 8 * 8;
  Plane padded(ph, pw);
  for (Index r = 0; r < ph; ++r) {
    for (Index c = 0; c < pw; ++c) {
      padded(r, c) = plane(std::min(r, h - 1), std::min(c, w - 1));
    }
  }
  const Block &d = dct_matrix();
  Plane out(ph, pw);
  for (Index br = 0; br < ph; br += 8) {
    for (Index bc = 0; bc < pw; bc += 8) {
      Block coef = d * padded.block<8, 8>(br, bc) * d.transpose();
      for (int u = 0; u < 8; ++u) {
        for (int v = 0; v < 8; ++v) {
          const double q = table[u * 8 + v];
          coef(u, v) = std::round(coef(u, v) / q) * q;
        }
      }
      out.block<8, 8>(br, bc) = d.transpose() * coef * d;
    }
  }
  return out.topLeftCorner(h, w);
}

} // namespace

std::array<int, 64> jpeg_quant_table(int quality, bool chroma) {
  if (quality < 1 || quality > 100) {
    throw std::invalid_argument("JPEG quality must be in [1, 100], got " +
                                std::to_string(quality));
  }
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  const auto &base = chroma ? kChromaTable : kLumaTable;
  std::array<int, 64> out{};
  for (int i = 0; i < 64; ++i) {
    out[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  }
  return out;
}

ImageTensor jpeg_roundtrip(const ImageTensor &image, int quality) {
  const auto luma = jpeg_quant_table(quality, false);
  const auto chroma = jpeg_quant_table(quality, true);
  const Index h = image.height();
  const Index w = image.width();
  const Index channels = image.channels();
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("jpeg_roundtrip: expected 1 or 3 channels, got " +
                                std::to_string(channels));
  }

  auto sample = [&](Index r, Index c, Index k) {
    return std::round(std::clamp(image(r, c, k), 0.0, 1.0) * 255.0);
  };
  auto to_unit = [](double v) { return std::clamp(std::round(v), 0.0, 255.0) / 255.0; };

  ImageTensor out(h, w, channels);
  if (channels == 1) {
    Plane y(h, w);
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        y(r, c) = sample(r, c, 0) - 128.0;
      }
    }
    const Plane rec = code_plane(y, luma);
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        out(r, c, 0) = to_unit(rec(r, c) + 128.0);
      }
    }
    return out;
  }

  // JFIF full-range YCbCr; chroma planes are coded at full resolution.
  Plane y(h, w), cb(h, w), cr(h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      const double R = sample(r, c, 0), G = sample(r, c, 1), B = sample(r, c, 2);
      y(r, c) = 0.299 * R + 0.587 * G + 0.114 * B - 128.0;
      cb(r, c) = -0.168736 * R - 0.331264 * G + 0.5 * B;
      cr(r, c) = 0.5 * R - 0.418688 * G - 0.081312 * B;
    }
  }
  const Plane ry = code_plane(y, luma);
  const Plane rcb = code_plane(cb, chroma);
  const Plane rcr = code_plane(cr, chroma);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      const double Y = ry(r, c) + 128.0;
      out(r, c, 0) = to_unit(Y + 1.402 * rcr(r, c));
      out(r, c, 1) = to_unit(Y - 0.344136 * rcb(r, c) - 0.714136 * rcr(r, c));
      out(r, c, 2) = to_unit(Y + 1.772 * rcb(r, c));
    }
  }
  return out;
}

} // namespace genattack

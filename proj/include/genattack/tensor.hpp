#ifndef GENATTACK_TENSOR_HPP
#define GENATTACK_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace genattack {

using Index = Eigen::Index;

struct Shape {
  Index height = 0;
  Index width = 0;
  Index channels = 0;

  Index size() const { return height * width * channels; }
  bool operator==(const Shape &) const = default;
};

inline std::string to_string(const Shape &s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" +
         std::to_string(s.channels);
}

/// Dense H x W x C tensor stored row-major with channels innermost (HWC).
template <typename Scalar>
class Tensor3 {
public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor3() = default;

  Tensor3(Index height, Index width, Index channels, Scalar fill = Scalar(0))
      : shape_{height, width, channels} {
    check_dims();
    data_ = Storage::Constant(shape_.size(), fill);
  }

  Tensor3(Shape shape, Storage data) : shape_(shape), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + to_string(shape_));
    }
  }

  Index height() const { return shape_.height; }
  Index width() const { return shape_.width; }
  Index channels() const { return shape_.channels; }
  Index size() const { return data_.size(); }
  const Shape &shape() const { return shape_; }

  Scalar &operator()(Index row, Index col, Index ch) {
    return data_((row * shape_.width + col) * shape_.channels + ch);
  }
  Scalar operator()(Index row, Index col, Index ch) const {
    return data_((row * shape_.width + col) * shape_.channels + ch);
  }

  Storage &array() { return data_; }
  const Storage &array() const { return data_; }

  bool operator==(const Tensor3 &other) const {
    return shape_ == other.shape_ && (data_ == other.data_).all();
  }

private:
  void check_dims() const {
    if (shape_.height <= 0 || shape_.width <= 0 || shape_.channels <= 0) {
      throw std::invalid_argument("tensor dimensions must be positive, got " + to_string(shape_));
    }
  }

  Shape shape_;
  Storage data_;
};

/// Image with pixel intensities in [0, 1].
using ImageTensor = Tensor3<double>;

/// Perturbation living in the L-infinity ball of radius delta_max. The grid may be
/// coarser than the image it perturbs; it is upscaled bilinearly before use.
template <typename Scalar>
struct NoiseGrid {
  Tensor3<Scalar> values;
  Scalar delta_max = Scalar(0);

  Shape shape() const { return values.shape(); }
  bool operator==(const NoiseGrid &) const = default;
};

template <typename Scalar>
Tensor3<Scalar> bilinear_resize(const Tensor3<Scalar> &src, Index out_h, Index out_w) {
  if (out_h <= 0 || out_w <= 0) {
    throw std::invalid_argument("bilinear_resize: output dimensions must be positive");
  }
  const Index in_h = src.height();
  const Index in_w = src.width();
  const Index ch = src.channels();
  if (out_h < in_h || out_w < in_w) {
    throw std::invalid_argument("bilinear_resize: only upscaling is supported");
  }
  if (out_h == in_h && out_w == in_w) {
    return src;
  }

  // Half-pixel centres: src = (dst + 0.5) * in / out - 0.5, clamped to the grid.
  auto axis = [](Index dst, Index in, Index out, Index &lo, Index &hi, Scalar &frac) {
    Scalar pos = (Scalar(dst) + Scalar(0.5)) * Scalar(in) / Scalar(out) - Scalar(0.5);
    pos = std::clamp(pos, Scalar(0), Scalar(in - 1));
    lo = static_cast<Index>(std::floor(pos));
    hi = std::min(lo + 1, in - 1);
    frac = pos - Scalar(lo);
  };

  Tensor3<Scalar> out(out_h, out_w, ch);
  for (Index r = 0; r < out_h; ++r) {
    Index r0, r1;
    Scalar fr;
    axis(r, in_h, out_h, r0, r1, fr);
    for (Index c = 0; c < out_w; ++c) {
      Index c0, c1;
      Scalar fc;
      axis(c, in_w, out_w, c0, c1, fc);
      const Scalar w00 = (1 - fr) * (1 - fc);
      const Scalar w01 = (1 - fr) * fc;
      const Scalar w10 = fr * (1 - fc);
      const Scalar w11 = fr * fc;
      for (Index k = 0; k < ch; ++k) {
        out(r, c, k) = w00 * src(r0, c0, k) + w01 * src(r0, c1, k) + w10 * src(r1, c0, k) +
                       w11 * src(r1, c1, k);
      }
    }
  }
  return out;
}

template <typename Scalar>
NoiseGrid<Scalar> bilinear_resize(const NoiseGrid<Scalar> &grid, Index out_h, Index out_w) {
  return {bilinear_resize(grid.values, out_h, out_w), grid.delta_max};
}

/// Componentwise clamp into [-delta_max, delta_max].
template <typename Scalar>
NoiseGrid<Scalar> project_linf(NoiseGrid<Scalar> candidate, Scalar delta_max) {
  if (!(delta_max >= Scalar(0))) {
    throw std::invalid_argument("project_linf: delta_max must be non-negative");
  }
  auto &a = candidate.values.array();
  a = a.max(-delta_max).min(delta_max);
  candidate.delta_max = delta_max;
  return candidate;
}

template <typename Scalar>
Tensor3<Scalar> clamp_to_box(Tensor3<Scalar> image) {
  image.array() = image.array().max(Scalar(0)).min(Scalar(1));
  return image;
}

/// x_orig + S(noise), clamped to the valid pixel box [0, 1].
template <typename Scalar>
Tensor3<Scalar> apply_noise(const Tensor3<Scalar> &x_orig, const NoiseGrid<Scalar> &noise) {
  if (noise.values.channels() != x_orig.channels()) {
    throw std::invalid_argument("apply_noise: noise has " +
                                std::to_string(noise.values.channels()) +
                                " channels, image has " + std::to_string(x_orig.channels()));
  }
  Tensor3<Scalar> out = x_orig;
  if (noise.values.height() == x_orig.height() && noise.values.width() == x_orig.width()) {
    out.array() += noise.values.array();
  } else {
    out.array() += bilinear_resize(noise.values, x_orig.height(), x_orig.width()).array();
  }
  return clamp_to_box(std::move(out));
}

namespace detail {
template <typename Scalar>
void require_same_shape(const Tensor3<Scalar> &a, const Tensor3<Scalar> &b, const char *what) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
}
} // namespace detail

template <typename Scalar>
Scalar linf_distance(const Tensor3<Scalar> &a, const Tensor3<Scalar> &b) {
  detail::require_same_shape(a, b, "linf_distance");
  return (a.array() - b.array()).abs().maxCoeff();
}

/// sqrt(sum (a - b)^2) / (H * W * C).
template <typename Scalar>
Scalar l2_distance_per_pixel(const Tensor3<Scalar> &a, const Tensor3<Scalar> &b) {
  detail::require_same_shape(a, b, "l2_distance_per_pixel");
  return std::sqrt((a.array() - b.array()).square().sum()) / Scalar(a.size());
}

} // namespace genattack

#endif // GENATTACK_TENSOR_HPP

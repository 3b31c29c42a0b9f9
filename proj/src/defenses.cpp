#include "genattack/defenses.hpp"

#include <cmath>
#include <stdexcept>

namespace genattack {

namespace {

constexpr double kTvSmoothing = 1e-6;
constexpr int kMaxHalvings = 40;
// Descent directions come from a blunter surrogate that sharpens towards
// kTvSmoothing; steps are still accepted against the kTvSmoothing objective.
constexpr double kDirectionSmoothingStart = 0.1;
constexpr double kDirectionSmoothingDecay = 0.9;

/// Gradient of tv_objective w.r.t. z.
ImageTensor tv_gradient(const ImageTensor &z, const ImageTensor &image, const PixelMask &mask,
                        double tv_weight, double smoothing) {
  const Index h = z.height(), w = z.width(), ch = z.channels();
  ImageTensor g(h, w, ch);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      for (Index k = 0; k < ch; ++k) {
        const double v = z(r, c, k);
        if (mask(r, c)) {
          g(r, c, k) += v - image(r, c, k);
        }
        const double dx = c + 1 < w ? z(r, c + 1, k) - v : 0.0;
        const double dy = r + 1 < h ? z(r + 1, c, k) - v : 0.0;
        const double norm = std::sqrt(dx * dx + dy * dy + smoothing);
        const double gx = tv_weight * dx / norm;
        const double gy = tv_weight * dy / norm;
        g(r, c, k) -= gx + gy;
        if (c + 1 < w) {
          g(r, c + 1, k) += gx;
        }
        if (r + 1 < h) {
          g(r + 1, c, k) += gy;
        }
      }
    }
  }
  return g;
}

} // namespace

DefenseSpec DefenseSpec::bit_depth(int bits_kept) {
  DefenseSpec s;
  s.kind = DefenseKind::bit_depth;
  s.bits_kept = bits_kept;
  s.validate();
  return s;
}

DefenseSpec DefenseSpec::jpeg(int quality) {
  DefenseSpec s;
  s.kind = DefenseKind::jpeg;
  s.quality = quality;
  s.validate();
  return s;
}

DefenseSpec DefenseSpec::tvm(double dropout_rate, double tv_weight, int solver_iters) {
  DefenseSpec s;
  s.kind = DefenseKind::tvm;
  s.dropout_rate = dropout_rate;
  s.tv_weight = tv_weight;
  s.solver_iters = solver_iters;
  s.validate();
  return s;
}

void DefenseSpec::validate() const {
  switch (kind) {
  case DefenseKind::none:
    break;
  case DefenseKind::bit_depth:
    if (bits_kept < 1 || bits_kept > 8) {
      throw std::invalid_argument("bits kept must be in [1, 8], got " + std::to_string(bits_kept));
    }
    break;
  case DefenseKind::jpeg:
    if (quality < 1 || quality > 100) {
      throw std::invalid_argument("JPEG quality must be in [1, 100], got " +
                                  std::to_string(quality));
    }
    break;
  case DefenseKind::tvm:
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw std::invalid_argument("dropout rate must be in [0, 1)");
    }
    if (!(tv_weight > 0.0)) {
      throw std::invalid_argument("TV weight must be positive");
    }
    if (solver_iters < 1) {
      throw std::invalid_argument("TV solver iterations must be positive");
    }
    break;
  }
}

std::string to_string(DefenseKind kind) {
  switch (kind) {
  case DefenseKind::none:
    return "none";
  case DefenseKind::bit_depth:
    return "bit-depth";
  case DefenseKind::jpeg:
    return "jpeg";
  case DefenseKind::tvm:
    return "tvm";
  }
  return "unknown";
}

DefenseKind parse_defense_kind(const std::string &name) {
  for (DefenseKind k :
       {DefenseKind::none, DefenseKind::bit_depth, DefenseKind::jpeg, DefenseKind::tvm}) {
    if (to_string(k) == name) {
      return k;
    }
  }
  throw std::invalid_argument("unknown defense '" + name + "'");
}

ImageTensor bit_depth_reduce(const ImageTensor &image, int bits_kept) {
  if (bits_kept < 1 || bits_kept > 8) {
    throw std::invalid_argument("bits kept must be in [1, 8], got " + std::to_string(bits_kept));
  }
  const double levels = double((1 << bits_kept) - 1);
  ImageTensor out = image;
  for (double &v : out.array()) {
    v = std::round(v * levels) / levels;
  }
  return out;
}

PixelMask sample_keep_mask(Index height, Index width, double dropout_rate, Rng &rng) {
  PixelMask mask(height, width);
  for (Index r = 0; r < height; ++r) {
    for (Index c = 0; c < width; ++c) {
      mask(r, c) = rng.uniform() >= dropout_rate;
    }
  }
  return mask;
}

double tv_objective(const ImageTensor &z, const ImageTensor &image, const PixelMask &mask,
                    double tv_weight) {
  const Index h = z.height(), w = z.width(), ch = z.channels();
  double data = 0.0;
  double tv = 0.0;
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      for (Index k = 0; k < ch; ++k) {
        const double v = z(r, c, k);
        if (mask(r, c)) {
          const double e = v - image(r, c, k);
          data += e * e;
        }
        const double dx = c + 1 < w ? z(r, c + 1, k) - v : 0.0;
        const double dy = r + 1 < h ? z(r + 1, c, k) - v : 0.0;
        tv += std::sqrt(dx * dx + dy * dy + kTvSmoothing);
      }
    }
  }
  return 0.5 * data + tv_weight * tv;
}

ImageTensor tvm_solve(const ImageTensor &image, const PixelMask &mask, double tv_weight,
                      int iterations, std::vector<double> *objective_trace) {
  if (mask.rows() != image.height() || mask.cols() != image.width()) {
    throw std::invalid_argument("tvm_solve: mask does not match image");
  }
  const Index h = image.height(), w = image.width(), ch = image.channels();
  ImageTensor z = image;
  for (Index k = 0; k < ch; ++k) {
    double sum = 0.0;
    Index kept = 0;
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        if (mask(r, c)) {
          sum += image(r, c, k);
          ++kept;
        }
      }
    }
    const double fill = kept > 0 ? sum / double(kept) : 0.5;
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        if (!mask(r, c)) {
          z(r, c, k) = fill;
        }
      }
    }
  }

  const double base_step = 1.0 / (1.0 + 8.0 * tv_weight);
  double f = tv_objective(z, image, mask, tv_weight);
  if (objective_trace != nullptr) {
    objective_trace->assign(1, f);
  }
  double smoothing = kDirectionSmoothingStart;
  for (int it = 0; it < iterations; ++it) {
    const ImageTensor g = tv_gradient(z, image, mask, tv_weight, smoothing);
    smoothing = std::max(kTvSmoothing, smoothing * kDirectionSmoothingDecay);
    double step = base_step;
    for (int halving = 0; halving <= kMaxHalvings; ++halving, step *= 0.5) {
      ImageTensor trial = z;
      trial.array() = (z.array() - step * g.array()).max(0.0).min(1.0);
      const double ft = tv_objective(trial, image, mask, tv_weight);
      if (ft <= f) {
        z = std::move(trial);
        f = ft;
        break;
      }
    }
    if (objective_trace != nullptr) {
      objective_trace->push_back(f);
    }
  }
  return z;
}

ImageTensor tvm_reconstruct(const ImageTensor &image, const DefenseSpec &spec, Rng &rng) {
  if (spec.kind != DefenseKind::tvm) {
    throw std::invalid_argument("tvm_reconstruct: defense is not tvm");
  }
  spec.validate();
  const PixelMask mask = sample_keep_mask(image.height(), image.width(), spec.dropout_rate, rng);
  return clamp_to_box(tvm_solve(image, mask, spec.tv_weight, spec.solver_iters));
}

ImageTensor apply_defense(const ImageTensor &image, const DefenseSpec &spec, Rng &rng) {
  switch (spec.kind) {
  case DefenseKind::none:
    return image;
  case DefenseKind::bit_depth:
    return bit_depth_reduce(image, spec.bits_kept);
  case DefenseKind::jpeg:
    return jpeg_roundtrip(image, spec.quality);
  case DefenseKind::tvm:
    return tvm_reconstruct(image, spec, rng);
  }
  throw std::logic_error("unhandled defense kind");
}

DefendedModel::DefendedModel(BlackBox &base, DefenseSpec defense, std::uint64_t seed)
    : base_(&base), defense_(defense), rng_(seed) {
  defense_.validate();
}

ProbVector DefendedModel::predict(const ImageTensor &image, QueryMeter &meter) {
  return predict(image, meter, rng_);
}

ProbVector DefendedModel::predict(const ImageTensor &image, QueryMeter &meter, Rng &rng) {
  if (!(image.shape() == input_shape())) {
    throw std::invalid_argument("defended predict: image shape " + to_string(image.shape()) +
                                " does not match model input " + to_string(input_shape()));
  }
  return base_->predict(apply_defense(image, defense_, rng), meter);
}

double expected_fitness(DefendedModel &dm, const ImageTensor &image, Index target,
                        Index n_samples, QueryMeter &meter) {
  return sample_expected_fitness(dm, image, target, n_samples, meter).fitness;
}

bool confirm_success(DefendedModel &dm, const ImageTensor &image, Index target, Index repeats,
                     QueryMeter &meter) {
  return confirm_success(static_cast<BlackBox &>(dm), image, target, repeats, meter);
}

} // namespace genattack

#ifndef GENATTACK_DEFENSES_HPP
#define GENATTACK_DEFENSES_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "genattack/fitness.hpp"
#include "genattack/model.hpp"
#include "genattack/rng.hpp"
#include "genattack/tensor.hpp"

namespace genattack {

enum class DefenseKind { none, bit_depth, jpeg, tvm };

struct DefenseSpec {
  DefenseKind kind = DefenseKind::none;
  int bits_kept = 5;
  int quality = 75;
  double dropout_rate = 0.5;
  double tv_weight = 0.1;
  int solver_iters = 100;

  static DefenseSpec none() { return {}; }
  static DefenseSpec bit_depth(int bits_kept);
  static DefenseSpec jpeg(int quality);
  static DefenseSpec tvm(double dropout_rate = 0.5, double tv_weight = 0.1, int solver_iters = 100);

  bool randomized() const { return kind == DefenseKind::tvm; }
  void validate() const;
};

std::string to_string(DefenseKind kind);
DefenseKind parse_defense_kind(const std::string &name);

/// Quantizes every value to round(v * L) / L with L = 2^bits_kept - 1.
ImageTensor bit_depth_reduce(const ImageTensor &image, int bits_kept);

/// Standard IJG quantization table for `quality`, natural (row-major) order.
std::array<int, 64> jpeg_quant_table(int quality, bool chroma);

/// Baseline JPEG compress/decompress round trip in memory: 8-bit samples,
/// YCbCr for 3-channel input without chroma subsampling, 8x8 DCT blocks with
/// edge replication.
ImageTensor jpeg_roundtrip(const ImageTensor &image, int quality);

/// Per-pixel keep mask shared by all channels: 1 keeps the pixel, 0 drops it.
using PixelMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

PixelMask sample_keep_mask(Index height, Index width, double dropout_rate, Rng &rng);

/// 0.5 * ||M (z - image)||^2 + tv_weight * sum sqrt(dx^2 + dy^2 + 1e-6).
double tv_objective(const ImageTensor &z, const ImageTensor &image, const PixelMask &mask,
                    double tv_weight);

/// Box-projected gradient descent on tv_objective starting from the kept pixels
/// (dropped pixels start at the channel mean of the kept ones). The direction at
/// iteration k is the gradient with smoothing max(1e-6, 0.1 * 0.9^k); the step
/// starts at 1/(1 + 8 tv_weight) and halves until tv_objective does not increase. `objective_trace`, when given, receives the objective after each
/// iteration (the first entry is the starting point).
ImageTensor tvm_solve(const ImageTensor &image, const PixelMask &mask, double tv_weight,
                      int iterations, std::vector<double> *objective_trace = nullptr);

/// Random pixel dropout followed by TV reconstruction.
ImageTensor tvm_reconstruct(const ImageTensor &image, const DefenseSpec &spec, Rng &rng);

/// Applies the defense, drawing randomness from `rng` when the defense is randomized.
ImageTensor apply_defense(const ImageTensor &image, const DefenseSpec &spec, Rng &rng);

/// A base classifier behind an input transformation. The attack sees it as
/// just another BlackBox; each predict bills one base-model query.
class DefendedModel final : public BlackBox {
public:
  DefendedModel(BlackBox &base, DefenseSpec defense, std::uint64_t seed = 0);

  Shape input_shape() const override { return base_->input_shape(); }
  Index num_classes() const override { return base_->num_classes(); }
  const DefenseSpec &defense() const { return defense_; }

  /// Draws fresh defense randomness from the model's own stream.
  ProbVector predict(const ImageTensor &image, QueryMeter &meter) override;
  /// Same, with the randomness pinned by the caller.
  ProbVector predict(const ImageTensor &image, QueryMeter &meter, Rng &rng);

private:
  BlackBox *base_;
  DefenseSpec defense_;
  Rng rng_;
};

/// E_r[log f(x,r)_t - log max_{c != t} f(x,r)_c] over n_samples defended queries.
double expected_fitness(DefendedModel &dm, const ImageTensor &image, Index target,
                        Index n_samples, QueryMeter &meter);

bool confirm_success(DefendedModel &dm, const ImageTensor &image, Index target, Index repeats,
                     QueryMeter &meter);

} // namespace genattack

#endif // GENATTACK_DEFENSES_HPP

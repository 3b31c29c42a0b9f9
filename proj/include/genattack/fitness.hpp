#ifndef GENATTACK_FITNESS_HPP
#define GENATTACK_FITNESS_HPP

#include <cstdint>

#include "genattack/model.hpp"

namespace genattack {

/// Probabilities are floored here before taking logs.
inline constexpr double kProbFloor = 1e-30;

/// log p_t - log(sum_{j != t} p_j). Deterministic-model fitness.
double compute_fitness(const ProbVector &probs, Index target);

/// log p_t - log(max_{c != t} p_c). Per-sample body of the expectation fitness.
double compute_margin_fitness(const ProbVector &probs, Index target);

Index argmax(const ProbVector &probs);

struct FitnessSample {
  double fitness = 0.0;
  /// Mean of the sampled probability vectors.
  ProbVector mean_probs;
};

/// Mean of compute_margin_fitness over `n_samples` fresh queries of `model`.
/// Bills exactly `n_samples` queries.
FitnessSample sample_expected_fitness(BlackBox &model, const ImageTensor &image, Index target,
                                      Index n_samples, QueryMeter &meter);

/// True iff `repeats` consecutive queries all put `target` on top. Stops at the
/// first miss; `calls_made`, when given, receives the number of queries spent.
bool confirm_success(BlackBox &model, const ImageTensor &image, Index target, Index repeats,
                     QueryMeter &meter, std::uint64_t *calls_made = nullptr);

} // namespace genattack

#endif // GENATTACK_FITNESS_HPP

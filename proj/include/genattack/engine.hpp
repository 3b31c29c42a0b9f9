#ifndef GENATTACK_ENGINE_HPP
#define GENATTACK_ENGINE_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "genattack/fitness.hpp"
#include "genattack/model.hpp"
#include "genattack/rng.hpp"
#include "genattack/tensor.hpp"

namespace genattack {

using Noise = NoiseGrid<double>;

struct AttackConfig {
  Index population_size = 6;
  double mutation_prob = 5e-2; // rho, fixed mode
  double mutation_range = 1.0; // alpha, fixed mode
  double temperature = 0.1;    // tau, selection softmax
  double delta_max = 0.3;
  std::uint64_t max_queries = 100000;
  /// Noise-grid resolution; unset means full image resolution.
  std::optional<Index> reduced_height;
  std::optional<Index> reduced_width;

  bool adaptive = false;
  double rho_min = 0.1;
  double alpha_min = 0.15;
  double rho_init = 0.5;
  double alpha_init = 0.4;
  Index plateau_window = 100;

  /// Queries averaged per fitness evaluation (expectation over a randomized model).
  Index fitness_samples = 1;
  /// Consecutive target hits required before declaring success.
  Index confirm_repeats = 1;
  std::uint64_t rng_seed = 0;

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
};

struct Population {
  std::vector<Noise> members;
  std::vector<double> fitnesses;
  std::uint64_t generation = 0;
  int num_plateaus = 0;
  double best_fitness_seen;
  std::uint64_t steps_since_improvement = 0;

  Population();
  Index elite_index() const;
};

enum class AttackStatus { success, budget_exhausted };

const char *to_string(AttackStatus status);

struct AttackResult {
  AttackStatus status = AttackStatus::budget_exhausted;
  std::optional<ImageTensor> adversarial_image;
  std::optional<Noise> noise;
  /// All queries spent, including confirmation queries.
  std::uint64_t queries_used = 0;
  std::uint64_t confirmation_queries = 0;
  std::uint64_t generations = 0;
  /// Distances of the returned image, or of the last elite when the budget ran out.
  double final_linf = 0.0;
  double final_l2_per_pixel = 0.0;
  std::vector<double> elite_fitness_trace;
};

struct MutationParams {
  double rho;
  double alpha;
};

Population init_population(const ImageTensor &x_orig, const AttackConfig &config, Rng &rng);

/// softmax(fitnesses / temperature).
ProbVector selection_probs(const std::vector<double> &fitnesses, double temperature);

/// Probability of taking a feature from parent 1 given the parents' fitness
/// weights: w1 / (w1 + w2). Non-positive weights are first shifted by
/// min(w1, w2) - 1e-6 so the ratio stays defined. Result clamped to [0, 1].
double crossover_probability(double weight1, double weight2);

/// Uniform crossover: every feature comes from parent 1 with
/// crossover_probability(weight1, weight2), otherwise from parent 2.
Noise crossover(const Noise &parent1, const Noise &parent2, double weight1, double weight2,
                Rng &rng);

/// Adds U(-alpha*delta, alpha*delta) to each feature with probability rho, then
/// projects back into the delta ball.
Noise mutate(Noise child, double rho, double alpha, double delta_max, Rng &rng);

/// max(rho_min, rho_init * 0.9^k), max(alpha_min, alpha_init * 0.9^k).
MutationParams annealed_parameters(int num_plateaus, const AttackConfig &config);

/// Plateau bookkeeping for the current generation's elite fitness, followed by
/// annealed_parameters. A plateau is counted after `plateau_window` consecutive
/// generations without strict improvement.
MutationParams update_parameters(Population &state, const AttackConfig &config);

/// Targeted attack: searches the delta_max ball around `x_orig` for an input that
/// `model` assigns to `target`, spending at most config.max_queries queries.
AttackResult run_attack(BlackBox &model, QueryMeter &meter, const ImageTensor &x_orig,
                        Index target, const AttackConfig &config);

} // namespace genattack

#endif // GENATTACK_ENGINE_HPP

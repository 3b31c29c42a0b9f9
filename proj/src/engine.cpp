#include "genattack/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace genattack {

namespace {

constexpr double kDecay = 0.9;
constexpr double kCrossoverShift = 1e-6;

void require(bool ok, const std::string &msg) {
  if (!ok) {
    throw std::invalid_argument("AttackConfig: " + msg);
  }
}

Shape noise_shape(const ImageTensor &x_orig, const AttackConfig &config) {
  const Index h = config.reduced_height.value_or(x_orig.height());
  const Index w = config.reduced_width.value_or(x_orig.width());
  if (h > x_orig.height() || w > x_orig.width()) {
    throw std::invalid_argument("reduced noise grid " + std::to_string(h) + "x" +
                                std::to_string(w) + " is larger than the image " +
                                to_string(x_orig.shape()));
  }
  return {h, w, x_orig.channels()};
}

struct Evaluation {
  double fitness;
  Index top_class;
};

} // namespace

void AttackConfig::validate() const {
  require(population_size >= 2, "population size must be at least 2");
  require(mutation_prob >= 0.0 && mutation_prob <= 1.0, "mutation probability must be in [0, 1]");
  require(mutation_range > 0.0 && mutation_range <= 1.0, "mutation range must be in (0, 1]");
  require(temperature > 0.0, "temperature must be positive");
  require(delta_max >= 0.0 && std::isfinite(delta_max), "delta_max must be non-negative");
  require(max_queries > 0, "query budget must be positive");
  require(!reduced_height || *reduced_height > 0, "reduced height must be positive");
  require(!reduced_width || *reduced_width > 0, "reduced width must be positive");
  require(fitness_samples >= 1, "fitness samples must be at least 1");
  require(confirm_repeats >= 1, "confirmation repeats must be at least 1");
  if (adaptive) {
    require(plateau_window >= 1, "plateau window must be at least 1");
    require(rho_min <= rho_init, "rho_min must not exceed rho_init");
    require(alpha_min <= alpha_init, "alpha_min must not exceed alpha_init");
    require(rho_min >= 0.0 && rho_init <= 1.0, "adaptive rho bounds must lie in [0, 1]");
    require(alpha_min > 0.0 && alpha_init <= 1.0, "adaptive alpha bounds must lie in (0, 1]");
  }
}

Population::Population() : best_fitness_seen(-std::numeric_limits<double>::infinity()) {}

Index Population::elite_index() const {
  if (fitnesses.empty()) {
    throw std::logic_error("population has not been evaluated");
  }
  return std::distance(fitnesses.begin(), std::max_element(fitnesses.begin(), fitnesses.end()));
}

const char *to_string(AttackStatus status) {
  return status == AttackStatus::success ? "success" : "budget_exhausted";
}

Population init_population(const ImageTensor &x_orig, const AttackConfig &config, Rng &rng) {
  config.validate();
  const Shape shape = noise_shape(x_orig, config);
  const double delta = config.delta_max;
  Population pop;
  pop.members.reserve(config.population_size);
  for (Index i = 0; i < config.population_size; ++i) {
    Noise member{Tensor3<double>(shape.height, shape.width, shape.channels), delta};
    for (double &v : member.values.array()) {
      v = rng.uniform(-delta, delta);
    }
    pop.members.push_back(std::move(member));
  }
  return pop;
}

ProbVector selection_probs(const std::vector<double> &fitnesses, double temperature) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("selection temperature must be positive");
  }
  return softmax(Eigen::Map<const Eigen::VectorXd>(fitnesses.data(), fitnesses.size()) /
                 temperature);
}

double crossover_probability(double weight1, double weight2) {
  const double lo = std::min(weight1, weight2);
  if (lo <= 0.0) {
    const double shift = lo - kCrossoverShift;
    weight1 -= shift;
    weight2 -= shift;
  }
  return std::clamp(weight1 / (weight1 + weight2), 0.0, 1.0);
}

Noise crossover(const Noise &parent1, const Noise &parent2, double weight1, double weight2,
                Rng &rng) {
  if (!(parent1.shape() == parent2.shape())) {
    throw std::invalid_argument("crossover: parent shapes differ (" +
                                to_string(parent1.shape()) + " vs " +
                                to_string(parent2.shape()) + ")");
  }
  const double p = crossover_probability(weight1, weight2);
  Noise child = parent1;
  child.delta_max = std::max(parent1.delta_max, parent2.delta_max);
  auto &out = child.values.array();
  const auto &other = parent2.values.array();
  for (Index i = 0; i < out.size(); ++i) {
    if (!rng.bernoulli(p)) {
      out(i) = other(i);
    }
  }
  return child;
}

Noise mutate(Noise child, double rho, double alpha, double delta_max, Rng &rng) {
  const double range = alpha * delta_max;
  for (double &v : child.values.array()) {
    if (rng.bernoulli(rho)) {
      v += rng.uniform(-range, range);
    }
  }
  return project_linf(std::move(child), delta_max);
}

MutationParams annealed_parameters(int num_plateaus, const AttackConfig &config) {
  const double decay = std::pow(kDecay, num_plateaus);
  return {std::max(config.rho_min, config.rho_init * decay),
          std::max(config.alpha_min, config.alpha_init * decay)};
}

MutationParams update_parameters(Population &state, const AttackConfig &config) {
  const double elite = state.fitnesses[state.elite_index()];
  if (elite > state.best_fitness_seen) {
    state.best_fitness_seen = elite;
    state.steps_since_improvement = 0;
  } else if (++state.steps_since_improvement >=
             static_cast<std::uint64_t>(config.plateau_window)) {
    ++state.num_plateaus;
    state.steps_since_improvement = 0;
  }
  return annealed_parameters(state.num_plateaus, config);
}

AttackResult run_attack(BlackBox &model, QueryMeter &meter, const ImageTensor &x_orig,
                        Index target, const AttackConfig &config) {
  config.validate();
  if (!(x_orig.shape() == model.input_shape())) {
    throw std::invalid_argument("run_attack: image shape " + to_string(x_orig.shape()) +
                                " does not match model input " + to_string(model.input_shape()));
  }
  if (target < 0 || target >= model.num_classes()) {
    throw std::invalid_argument("run_attack: target class " + std::to_string(target) +
                                " out of range");
  }

  Rng rng(config.rng_seed);
  Population pop = init_population(x_orig, config, rng);
  const Index n = config.population_size;
  const std::uint64_t per_generation = std::uint64_t(n) * std::uint64_t(config.fitness_samples);

  MutationParams params = config.adaptive
                              ? annealed_parameters(0, config)
                              : MutationParams{config.mutation_prob, config.mutation_range};

  AttackResult result;
  std::optional<ImageTensor> last_elite;

  auto finish = [&](const ImageTensor &image) {
    result.final_linf = linf_distance(image, x_orig);
    result.final_l2_per_pixel = l2_distance_per_pixel(image, x_orig);
  };

  std::vector<Evaluation> evals(n);
  std::vector<ImageTensor> images(n);
  while (result.queries_used + per_generation <= config.max_queries) {
    pop.fitnesses.assign(n, 0.0);
    for (Index i = 0; i < n; ++i) {
      images[i] = apply_noise(x_orig, pop.members[i]);
      if (config.fitness_samples == 1) {
        const ProbVector probs = model.predict(images[i], meter);
        evals[i] = {compute_fitness(probs, target), argmax(probs)};
      } else {
        const FitnessSample s = sample_expected_fitness(model, images[i], target,
                                                        config.fitness_samples, meter);
        evals[i] = {s.fitness, argmax(s.mean_probs)};
      }
      pop.fitnesses[i] = evals[i].fitness;
    }
    result.queries_used += per_generation;
    ++result.generations;

    const Index elite = pop.elite_index();
    result.elite_fitness_trace.push_back(pop.fitnesses[elite]);
    last_elite = images[elite];

    if (evals[elite].top_class == target) {
      bool confirmed = true;
      if (config.confirm_repeats > 1) {
        if (result.queries_used + std::uint64_t(config.confirm_repeats) <= config.max_queries) {
          std::uint64_t calls = 0;
          confirmed = confirm_success(model, images[elite], target, config.confirm_repeats,
                                      meter, &calls);
          result.queries_used += calls;
          result.confirmation_queries += calls;
        } else {
          confirmed = false;
        }
      }
      if (confirmed) {
        result.status = AttackStatus::success;
        result.adversarial_image = images[elite];
        result.noise = pop.members[elite];
        finish(images[elite]);
        return result;
      }
    }

    const ProbVector probs = selection_probs(pop.fitnesses, config.temperature);
    std::vector<Noise> next;
    next.reserve(n);
    next.push_back(pop.members[elite]);
    for (Index i = 1; i < n; ++i) {
      const std::size_t a = rng.categorical({probs.data(), std::size_t(probs.size())});
      const std::size_t b = rng.categorical({probs.data(), std::size_t(probs.size())});
      Noise child = crossover(pop.members[a], pop.members[b], probs(a), probs(b), rng);
      next.push_back(mutate(std::move(child), params.rho, params.alpha, config.delta_max, rng));
    }
    if (config.adaptive) {
      params = update_parameters(pop, config);
    }
    pop.members = std::move(next);
    ++pop.generation;
  }

  result.status = AttackStatus::budget_exhausted;
  if (last_elite) {
    finish(*last_elite);
  }
  return result;
}

} // namespace genattack

#include "genattack/fitness.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace genattack {

namespace {

void check_target(const ProbVector &probs, Index target) {
  if (target < 0 || target >= probs.size()) {
    throw std::invalid_argument("target class " + std::to_string(target) + " out of range [0, " +
                                std::to_string(probs.size()) + ")");
  }
}

} // namespace

double compute_fitness(const ProbVector &probs, Index target) {
  check_target(probs, target);
  const double p_t = probs(target);
  double rest = 0.0;
  for (Index c = 0; c < probs.size(); ++c) {
    if (c != target) {
      rest += probs(c);
    }
  }
  return std::log(std::max(p_t, kProbFloor)) - std::log(std::max(rest, kProbFloor));
}

double compute_margin_fitness(const ProbVector &probs, Index target) {
  check_target(probs, target);
  double runner_up = 0.0;
  for (Index c = 0; c < probs.size(); ++c) {
    if (c != target) {
      runner_up = std::max(runner_up, probs(c));
    }
  }
  return std::log(std::max(probs(target), kProbFloor)) -
         std::log(std::max(runner_up, kProbFloor));
}

Index argmax(const ProbVector &probs) {
  Index best;
  probs.maxCoeff(&best);
  return best;
}

FitnessSample sample_expected_fitness(BlackBox &model, const ImageTensor &image, Index target,
                                      Index n_samples, QueryMeter &meter) {
  if (n_samples < 1) {
    throw std::invalid_argument("fitness sample count must be at least 1");
  }
  FitnessSample out;
  out.mean_probs = ProbVector::Zero(model.num_classes());
  double total = 0.0;
  for (Index i = 0; i < n_samples; ++i) {
    const ProbVector probs = model.predict(image, meter);
    total += compute_margin_fitness(probs, target);
    out.mean_probs += probs;
  }
  out.fitness = total / double(n_samples);
  out.mean_probs /= double(n_samples);
  return out;
}

bool confirm_success(BlackBox &model, const ImageTensor &image, Index target, Index repeats,
                     QueryMeter &meter, std::uint64_t *calls_made) {
  if (repeats < 1) {
    throw std::invalid_argument("confirmation repeats must be at least 1");
  }
  std::uint64_t calls = 0;
  bool ok = true;
  for (Index i = 0; i < repeats; ++i) {
    ++calls;
    if (argmax(model.predict(image, meter)) != target) {
      ok = false;
      break;
    }
  }
  if (calls_made != nullptr) {
    *calls_made = calls;
  }
  return ok;
}

} // namespace genattack

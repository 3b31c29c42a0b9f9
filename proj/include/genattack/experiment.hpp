#ifndef GENATTACK_EXPERIMENT_HPP
#define GENATTACK_EXPERIMENT_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "genattack/defenses.hpp"
#include "genattack/engine.hpp"
#include "genattack/io.hpp"

namespace genattack {

struct DatasetSource {
  enum class Kind { idx, image_dir, single_image };
  Kind kind = Kind::idx;
  std::filesystem::path images; // IDX images, image directory or single image
  std::filesystem::path labels; // IDX labels (idx only)
  Index label = -1;             // true label (single_image only)
};

struct TargetPolicy {
  enum class Kind { random_other, fixed, next_class };
  Kind kind = Kind::random_other;
  Index fixed_class = 0;

  /// "random", "next" or "fixed:<class>".
  static TargetPolicy parse(const std::string &text);
};

struct ExperimentSpec {
  std::filesystem::path model_path;
  DefenseSpec defense;
  DatasetSource dataset;
  Index sample_count = 1;
  TargetPolicy target_policy;
  /// rng_seed is the experiment seed; per-example seeds derive from it.
  AttackConfig attack;
  /// Empty: nothing is written.
  std::filesystem::path output_dir;
};

struct ExampleRecord {
  Index index = 0; // position in the dataset
  Index true_label = 0;
  Index target = 0;
  AttackStatus status = AttackStatus::budget_exhausted;
  std::uint64_t queries = 0;
  std::uint64_t confirmation_queries = 0;
  std::uint64_t generations = 0;
  double linf = 0.0;
  double l2_per_pixel = 0.0;
};

struct ExperimentReport {
  std::vector<ExampleRecord> records;
  Index attempted = 0;
  Index successes = 0;
  double success_rate = 0.0;
  std::optional<double> median_queries; // over successes only
  std::optional<double> mean_linf;      // over successes only
  std::optional<double> mean_l2_per_pixel;
  std::uint64_t total_queries = 0;
  /// Prefilter queries on clean inputs; not part of any attack's cost.
  std::uint64_t setup_queries = 0;
  double wall_clock_seconds = 0.0;
};

/// Median of the given values; nullopt when empty. Even counts average the middle pair.
std::optional<double> median(std::vector<double> values);

/// Loads the dataset named by `source`.
std::vector<LabeledImage> load_dataset(const DatasetSource &source);

/// Chooses the attack target for an example with true label `label`.
Index choose_target(const TargetPolicy &policy, Index label, Index num_classes, Rng &rng);

/// Attack over the first `sample_count` correctly classified examples. When
/// output_dir is set, writes report.json, timing.json and one adversarial image
/// plus noise dump per success. Throws std::runtime_error when no example is
/// correctly classified.
ExperimentReport run_experiment(const ExperimentSpec &spec);

/// Deterministic JSON; wall-clock time is left out so reruns are byte-identical.
std::string report_to_json(const ExperimentReport &report);
void write_report(const ExperimentReport &report, const std::filesystem::path &path);

/// Clean accuracy of the model with and without the defense.
struct DefenseEvaluation {
  Index evaluated = 0;
  Index correct_undefended = 0;
  Index correct_defended = 0;
};

DefenseEvaluation evaluate_defense(const std::filesystem::path &model_path,
                                   const DefenseSpec &defense, const DatasetSource &dataset,
                                   Index sample_count, std::uint64_t seed);

} // namespace genattack

#endif // GENATTACK_EXPERIMENT_HPP

// genattack: command-line front end for the attack engine.
//
//   genattack attack      --model m.gnw --image x.pgm --target 3 [--label 7] --out dir
//   genattack bench       --model m.gnw --images i.idx --labels l.idx --samples 50 --out dir
//   genattack defend-eval --model m.gnw --images i.idx --labels l.idx --defense jpeg
//
// Exit codes: 0 success, 2 budget exhausted (attack only), 1 error.

#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "genattack/experiment.hpp"

using namespace genattack;

namespace {

struct CommonOptions {
  std::string model;
  std::string defense = "none";
  int bits = 5;
  int quality = 75;
  double tv_weight = 0.1;
  int tv_iters = 100;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  std::string out;
};

struct AttackOptions {
  double delta = 0.3;
  Index pop_size = 6;
  double mutation_prob = 5e-2;
  double alpha = 1.0;
  double tau = 0.1;
  bool adaptive = false;
  std::string reduced_dim;
  // Unset: 1 against deterministic models, 32 / 3 against randomized defenses.
  std::optional<Index> fitness_samples;
  std::optional<Index> confirm_repeats;
  std::uint64_t max_queries = 100000;
};

void add_common(CLI::App *app, CommonOptions &o, bool with_out = true) {
  app->add_option("--model", o.model, "GNW model file")->required()->check(CLI::ExistingFile);
  app->add_option("--defense", o.defense, "none | bit-depth | jpeg | tvm")->capture_default_str();
  app->add_option("--bits", o.bits, "bits kept by bit-depth reduction")->capture_default_str();
  app->add_option("--quality", o.quality, "JPEG quality")->capture_default_str();
  app->add_option("--tv-weight", o.tv_weight, "TV regularization weight")->capture_default_str();
  app->add_option("--tv-iters", o.tv_iters, "TV solver iterations")->capture_default_str();
  app->add_option("--dropout", o.dropout, "TVM pixel dropout rate")->capture_default_str();
  app->add_option("--seed", o.seed, "experiment seed")->capture_default_str();
  if (with_out) {
    app->add_option("--out", o.out, "output directory");
  }
}

void add_attack(CLI::App *app, AttackOptions &o) {
  app->add_option("--delta", o.delta, "L-infinity radius")->capture_default_str();
  app->add_option("--pop-size", o.pop_size, "population size")->capture_default_str();
  app->add_option("--mutation-prob", o.mutation_prob, "mutation probability (fixed mode)")
      ->capture_default_str();
  app->add_option("--alpha", o.alpha, "mutation range (fixed mode)")->capture_default_str();
  app->add_option("--tau", o.tau, "selection temperature")->capture_default_str();
  app->add_flag("--adaptive", o.adaptive, "anneal mutation probability and range");
  app->add_option("--reduced-dim", o.reduced_dim, "noise grid size HxW");
  app->add_option("--fitness-samples", o.fitness_samples,
                  "queries per fitness evaluation (default 1, 32 for tvm)");
  app->add_option("--confirm-repeats", o.confirm_repeats,
                  "consecutive hits to confirm success (default 1, 3 for tvm)");
  app->add_option("--max-queries", o.max_queries, "query budget")->capture_default_str();
}

DefenseSpec make_defense(const CommonOptions &o) {
  DefenseSpec d;
  d.kind = parse_defense_kind(o.defense);
  d.bits_kept = o.bits;
  d.quality = o.quality;
  d.tv_weight = o.tv_weight;
  d.solver_iters = o.tv_iters;
  d.dropout_rate = o.dropout;
  d.validate();
  return d;
}

AttackConfig make_config(const AttackOptions &o, std::uint64_t seed, bool randomized) {
  AttackConfig c;
  c.delta_max = o.delta;
  c.population_size = o.pop_size;
  c.mutation_prob = o.mutation_prob;
  c.mutation_range = o.alpha;
  c.temperature = o.tau;
  c.adaptive = o.adaptive;
  c.fitness_samples = o.fitness_samples.value_or(randomized ? 32 : 1);
  c.confirm_repeats = o.confirm_repeats.value_or(randomized ? 3 : 1);
  c.max_queries = o.max_queries;
  c.rng_seed = seed;
  if (!o.reduced_dim.empty()) {
    const auto x = o.reduced_dim.find('x');
    if (x == std::string::npos) {
      throw std::invalid_argument("--reduced-dim must look like HxW");
    }
    c.reduced_height = std::stol(o.reduced_dim.substr(0, x));
    c.reduced_width = std::stol(o.reduced_dim.substr(x + 1));
  }
  c.validate();
  return c;
}

DatasetSource make_dataset(const std::string &images, const std::string &labels,
                           const std::string &image_dir) {
  DatasetSource src;
  if (!image_dir.empty()) {
    src.kind = DatasetSource::Kind::image_dir;
    src.images = image_dir;
  } else if (!images.empty() && !labels.empty()) {
    src.kind = DatasetSource::Kind::idx;
    src.images = images;
    src.labels = labels;
  } else {
    throw std::invalid_argument("need --images and --labels, or --image-dir");
  }
  return src;
}

int run_single(const CommonOptions &common, const AttackOptions &opts, const std::string &image,
               Index target, Index label) {
  Network network(load_model(common.model));
  const ImageTensor x = load_image(image);
  const DefenseSpec defense = make_defense(common);
  const AttackConfig config = make_config(opts, common.seed, defense.randomized());

  QueryMeter meter;
  if (label < 0) {
    label = argmax(network.predict(x, meter));
  }
  QueryMeter attack_meter;
  DefendedModel guarded(network, defense, derive_seed(common.seed, 2));
  BlackBox &victim =
      defense.kind == DefenseKind::none ? static_cast<BlackBox &>(network) : guarded;
  const AttackResult r = run_attack(victim, attack_meter, x, target, config);

  ExperimentReport report;
  ExampleRecord rec;
  rec.true_label = label;
  rec.target = target;
  rec.status = r.status;
  rec.queries = r.queries_used;
  rec.confirmation_queries = r.confirmation_queries;
  rec.generations = r.generations;
  rec.linf = r.final_linf;
  rec.l2_per_pixel = r.final_l2_per_pixel;
  report.records.push_back(rec);
  report.attempted = 1;
  report.successes = r.status == AttackStatus::success ? 1 : 0;
  report.success_rate = double(report.successes);
  if (report.successes) {
    report.median_queries = double(r.queries_used);
    report.mean_linf = r.final_linf;
    report.mean_l2_per_pixel = r.final_l2_per_pixel;
  }
  report.total_queries = attack_meter.count();
  report.setup_queries = meter.count();

  if (!common.out.empty()) {
    const std::filesystem::path out(common.out);
    std::filesystem::create_directories(out);
    write_report(report, out / "report.json");
    if (r.adversarial_image) {
      write_image(out / (x.channels() == 1 ? "adversarial.pgm" : "adversarial.ppm"),
                  *r.adversarial_image);
      write_noise_dump(out / "adversarial.noise.f32", *r.noise);
    }
  } else {
    std::cout << report_to_json(report);
  }
  std::cerr << to_string(r.status) << " after " << r.queries_used << " queries ("
            << r.generations << " generations)\n";
  return r.status == AttackStatus::success ? 0 : 2;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"genattack: targeted black-box attacks on image classifiers"};
  app.require_subcommand(1);

  CommonOptions common;
  AttackOptions opts;
  std::string image, images, labels, image_dir, policy = "random";
  Index target = -1;
  Index label = -1;
  Index samples = 50;

  auto *attack = app.add_subcommand("attack", "attack a single PGM/PPM image");
  add_common(attack, common);
  add_attack(attack, opts);
  attack->add_option("--image", image, "input image (P5/P6)")->required()->check(CLI::ExistingFile);
  attack->add_option("--target", target, "target class")->required();
  attack->add_option("--label", label, "true label (default: model prediction)");

  auto *bench = app.add_subcommand("bench", "attack a dataset and aggregate metrics");
  add_common(bench, common);
  add_attack(bench, opts);
  bench->add_option("--images", images, "IDX image file");
  bench->add_option("--labels", labels, "IDX label file");
  bench->add_option("--image-dir", image_dir, "directory of <label>_*.pgm|ppm files");
  bench->add_option("--samples", samples, "number of correctly classified examples")
      ->capture_default_str();
  bench->add_option("--target-policy", policy, "random | next | fixed:<class>")
      ->capture_default_str();

  auto *defend = app.add_subcommand("defend-eval", "clean accuracy with and without a defense");
  add_common(defend, common);
  defend->add_option("--images", images, "IDX image file");
  defend->add_option("--labels", labels, "IDX label file");
  defend->add_option("--image-dir", image_dir, "directory of <label>_*.pgm|ppm files");
  defend->add_option("--samples", samples, "number of examples")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (attack->parsed()) {
      return run_single(common, opts, image, target, label);
    }
    if (bench->parsed()) {
      ExperimentSpec spec;
      spec.model_path = common.model;
      spec.defense = make_defense(common);
      spec.dataset = make_dataset(images, labels, image_dir);
      spec.sample_count = samples;
      spec.target_policy = TargetPolicy::parse(policy);
      spec.attack = make_config(opts, common.seed, spec.defense.randomized());
      spec.output_dir = common.out;
      const ExperimentReport report = run_experiment(spec);
      if (common.out.empty()) {
        std::cout << report_to_json(report);
      }
      std::cerr << "ASR " << report.success_rate << " over " << report.attempted
                << " examples in " << report.wall_clock_seconds << " s\n";
      return 0;
    }
    if (defend->parsed()) {
      const DefenseEvaluation e =
          evaluate_defense(common.model, make_defense(common),
                           make_dataset(images, labels, image_dir), samples, common.seed);
      const nlohmann::ordered_json doc = {
          {"defense", common.defense},
          {"evaluated", e.evaluated},
          {"accuracy_undefended", e.evaluated ? double(e.correct_undefended) / e.evaluated : 0.0},
          {"accuracy_defended", e.evaluated ? double(e.correct_defended) / e.evaluated : 0.0}};
      if (!common.out.empty()) {
        std::filesystem::create_directories(common.out);
        std::ofstream(std::filesystem::path(common.out) / "defense.json") << doc.dump(2) << '\n';
      } else {
        std::cout << doc.dump(2) << '\n';
      }
      return 0;
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

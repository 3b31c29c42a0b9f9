#include "genattack/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace genattack {

namespace {

using json = nlohmann::ordered_json;

// Stream ids for derive_seed; keep stable, they feed reproducible reports.
constexpr std::uint64_t kTargetStream = 1;
constexpr std::uint64_t kDefenseStream = 2;
constexpr std::uint64_t kPrefilterStream = 3;

json optional_number(const std::optional<double> &v) { return v ? json(*v) : json(nullptr); }

std::string example_stem(Index index) {
  std::ostringstream s;
  s << "adv_" << std::setw(5) << std::setfill('0') << index;
  return s.str();
}

} // namespace

TargetPolicy TargetPolicy::parse(const std::string &text) {
  TargetPolicy p;
  if (text == "random") {
    p.kind = Kind::random_other;
  } else if (text == "next") {
    p.kind = Kind::next_class;
  } else if (text.rfind("fixed:", 0) == 0 && text.size() > 6) {
    p.kind = Kind::fixed;
    try {
      p.fixed_class = std::stol(text.substr(6));
    } catch (const std::exception &) {
      throw std::invalid_argument("bad target policy '" + text + "'");
    }
  } else {
    throw std::invalid_argument("target policy must be random, next or fixed:<class>, got '" +
                                text + "'");
  }
  return p;
}

std::optional<double> median(std::vector<double> values) {
  if (values.empty()) {
    return std::nullopt;
  }
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) {
    return values[mid];
  }
  return 0.5 * (values[mid - 1] + values[mid]);
}

std::vector<LabeledImage> load_dataset(const DatasetSource &source) {
  switch (source.kind) {
  case DatasetSource::Kind::idx:
    return load_idx(source.images, source.labels);
  case DatasetSource::Kind::image_dir:
    return load_image_dir(source.images);
  case DatasetSource::Kind::single_image:
    return {{load_image(source.images), source.label}};
  }
  throw std::logic_error("unhandled dataset kind");
}

Index choose_target(const TargetPolicy &policy, Index label, Index num_classes, Rng &rng) {
  switch (policy.kind) {
  case TargetPolicy::Kind::fixed:
    if (policy.fixed_class < 0 || policy.fixed_class >= num_classes) {
      throw std::invalid_argument("fixed target class out of range");
    }
    return policy.fixed_class;
  case TargetPolicy::Kind::next_class:
    return (label + 1) % num_classes;
  case TargetPolicy::Kind::random_other: {
    const auto draw = Index(rng.below(std::uint64_t(num_classes - 1)));
    return draw >= label ? draw + 1 : draw;
  }
  }
  throw std::logic_error("unhandled target policy");
}

ExperimentReport run_experiment(const ExperimentSpec &spec) {
  if (spec.sample_count <= 0) {
    throw std::invalid_argument("sample count must be positive");
  }
  spec.attack.validate();
  spec.defense.validate();
  const auto start = std::chrono::steady_clock::now();

  Network network(load_model(spec.model_path));
  const auto dataset = load_dataset(spec.dataset);
  const Index classes = network.num_classes();
  const std::uint64_t seed = spec.attack.rng_seed;
  const bool defended = spec.defense.kind != DefenseKind::none;

  if (!spec.output_dir.empty()) {
    std::filesystem::create_directories(spec.output_dir);
  }

  ExperimentReport report;
  QueryMeter setup_meter;
  for (std::size_t i = 0; i < dataset.size() && report.attempted < spec.sample_count; ++i) {
    const auto &example = dataset[i];
    if (example.label < 0 || example.label >= classes) {
      throw std::invalid_argument("example " + std::to_string(i) + " has label " +
                                  std::to_string(example.label) + " outside the model's " +
                                  std::to_string(classes) + " classes");
    }
    const std::uint64_t example_seed = derive_seed(seed, i);
    {
      DefendedModel screen(network, spec.defense, derive_seed(example_seed, kPrefilterStream));
      if (argmax(screen.predict(example.image, setup_meter)) != example.label) {
        continue;
      }
    }

    Rng target_rng(derive_seed(example_seed, kTargetStream));
    const Index target = choose_target(spec.target_policy, example.label, classes, target_rng);
    AttackConfig config = spec.attack;
    config.rng_seed = example_seed;

    QueryMeter meter;
    DefendedModel guarded(network, spec.defense, derive_seed(example_seed, kDefenseStream));
    BlackBox &victim = defended ? static_cast<BlackBox &>(guarded) : network;
    const AttackResult result = run_attack(victim, meter, example.image, target, config);

    ExampleRecord rec;
    rec.index = Index(i);
    rec.true_label = example.label;
    rec.target = target;
    rec.status = result.status;
    rec.queries = result.queries_used;
    rec.confirmation_queries = result.confirmation_queries;
    rec.generations = result.generations;
    rec.linf = result.final_linf;
    rec.l2_per_pixel = result.final_l2_per_pixel;
    report.records.push_back(rec);
    ++report.attempted;
    report.total_queries += meter.count();

    if (!spec.output_dir.empty() && result.status == AttackStatus::success) {
      const auto &img = *result.adversarial_image;
      const std::string stem = example_stem(Index(i));
      write_image(spec.output_dir / (stem + (img.channels() == 1 ? ".pgm" : ".ppm")), img);
      write_noise_dump(spec.output_dir / (stem + ".noise.f32"), *result.noise);
    }
  }
  report.setup_queries = setup_meter.count();
  if (report.attempted == 0) {
    throw std::runtime_error("no correctly classified examples to attack");
  }

  std::vector<double> queries, linf, l2;
  for (const auto &r : report.records) {
    if (r.status == AttackStatus::success) {
      queries.push_back(double(r.queries));
      linf.push_back(r.linf);
      l2.push_back(r.l2_per_pixel);
    }
  }
  auto mean = [](const std::vector<double> &v) -> std::optional<double> {
    if (v.empty()) {
      return std::nullopt;
    }
    double s = 0.0;
    for (double x : v) {
      s += x;
    }
    return s / double(v.size());
  };
  report.successes = Index(queries.size());
  report.success_rate = double(report.successes) / double(report.attempted);
  report.median_queries = median(queries);
  report.mean_linf = mean(linf);
  report.mean_l2_per_pixel = mean(l2);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!spec.output_dir.empty()) {
    write_report(report, spec.output_dir / "report.json");
    std::ofstream timing(spec.output_dir / "timing.json");
    timing << json{{"wall_clock_seconds", report.wall_clock_seconds}}.dump(2) << '\n';
  }
  return report;
}

std::string report_to_json(const ExperimentReport &report) {
  json records = json::array();
  for (const auto &r : report.records) {
    records.push_back({{"index", r.index},
                       {"true_label", r.true_label},
                       {"target", r.target},
                       {"status", to_string(r.status)},
                       {"queries", r.queries},
                       {"confirmation_queries", r.confirmation_queries},
                       {"generations", r.generations},
                       {"linf", r.linf},
                       {"l2_per_pixel", r.l2_per_pixel}});
  }
  json doc = {{"summary",
               {{"attempted", report.attempted},
                {"successes", report.successes},
                {"success_rate", report.success_rate},
                {"median_queries", optional_number(report.median_queries)},
                {"mean_linf", optional_number(report.mean_linf)},
                {"mean_l2_per_pixel", optional_number(report.mean_l2_per_pixel)},
                {"total_queries", report.total_queries},
                {"setup_queries", report.setup_queries}}},
              {"records", std::move(records)}};
  return doc.dump(2) + "\n";
}

void write_report(const ExperimentReport &report, const std::filesystem::path &path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot write report " + path.string());
  }
  os << report_to_json(report);
  if (!os) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

DefenseEvaluation evaluate_defense(const std::filesystem::path &model_path,
                                   const DefenseSpec &defense, const DatasetSource &dataset,
                                   Index sample_count, std::uint64_t seed) {
  if (sample_count <= 0) {
    throw std::invalid_argument("sample count must be positive");
  }
  Network network(load_model(model_path));
  DefendedModel guarded(network, defense, seed);
  const auto data = load_dataset(dataset);
  DefenseEvaluation out;
  QueryMeter meter;
  for (const auto &ex : data) {
    if (out.evaluated >= sample_count) {
      break;
    }
    ++out.evaluated;
    out.correct_undefended += argmax(network.predict(ex.image, meter)) == ex.label;
    out.correct_defended += argmax(guarded.predict(ex.image, meter)) == ex.label;
  }
  return out;
}

} // namespace genattack

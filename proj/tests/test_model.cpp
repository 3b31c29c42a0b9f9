#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <thread>

#include <json.hpp>

#include "genattack/io.hpp"
#include "genattack/model.hpp"
#include "genattack/rng.hpp"

using namespace genattack;

namespace {

const std::filesystem::path kFixtures = GENATTACK_FIXTURES;

std::vector<char> slurp(const std::filesystem::path &p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::filesystem::path scratch(const std::string &name, const std::vector<char> &bytes) {
  const auto p = std::filesystem::temp_directory_path() / ("genattack_" + name);
  std::ofstream(p, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
  return p;
}

layers::Dense dense(Index in, Index out, Rng &rng) {
  layers::Dense d;
  d.weights.resize(out, in);
  d.bias.resize(out);
  for (Index i = 0; i < d.weights.size(); ++i) d.weights.data()[i] = rng.uniform(-1, 1);
  for (Index i = 0; i < out; ++i) d.bias(i) = rng.uniform(-1, 1);
  return d;
}

ModelSpec random_cnn(Rng &rng) {
  ModelSpec m;
  m.input = {6, 5, 2};
  layers::Conv2d c;
  c.kernel_h = 3; c.kernel_w = 3; c.in_channels = 2; c.out_channels = 3; c.stride = 1;
  c.padding = layers::Padding::same;
  c.weights.resize(3 * 2 * 9);
  for (double &w : c.weights) w = rng.uniform(-1, 1);
  c.bias = Eigen::VectorXd::Random(3);
  m.layers = {c, layers::Relu{}, layers::MaxPool2d{2, 2}, layers::Flatten{},
              dense(3 * 2 * 3, 4, rng), layers::Softmax{}};
  return m;
}

} // namespace

TEST_CASE("softmax") {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(3);
  CHECK((softmax(z).array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);

  Eigen::VectorXd r(2);
  r << std::log(1.0), std::log(2.0);
  const auto p = softmax(r);
  CHECK(p(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(p(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  Eigen::VectorXd big(2);
  big << 1000, 1000;
  const auto q = softmax(big);
  CHECK(q(0) == 0.5);
  CHECK(q(1) == 0.5);

  Eigen::VectorXd bad(2);
  bad << 0.0, std::nan("");
  CHECK_THROWS_AS(softmax(bad), std::invalid_argument);
  CHECK_THROWS_AS(softmax(Eigen::VectorXd()), std::invalid_argument);
}

TEST_CASE("load the bundled MLP") {
  const ModelSpec m = load_model(kFixtures / "mnist_mlp.gnw");
  CHECK(m.input == Shape{28, 28, 1});
  REQUIRE(m.layers.size() == 5);
  CHECK(std::holds_alternative<layers::Flatten>(m.layers[0]));
  const auto &d1 = std::get<layers::Dense>(m.layers[1]);
  CHECK(d1.weights.rows() == 64);
  CHECK(d1.weights.cols() == 784);
  CHECK(std::holds_alternative<layers::Relu>(m.layers[2]));
  const auto &d2 = std::get<layers::Dense>(m.layers[3]);
  CHECK(d2.weights.rows() == 10);
  CHECK(d2.weights.cols() == 64);
  CHECK(std::holds_alternative<layers::Softmax>(m.layers[4]));
  CHECK(m.num_classes() == 10);
}

TEST_CASE("malformed model files are rejected") {
  const auto good = slurp(kFixtures / "tiny_linear.gnw");
  CHECK_THROWS_AS(load_model(scratch("empty.gnw", {})), FormatError);

  auto bad_magic = good;
  bad_magic[3] = '2';
  CHECK_THROWS_AS(load_model(scratch("magic.gnw", bad_magic)), FormatError);

  auto truncated = good;
  truncated.resize(good.size() - 3);
  try {
    load_model(scratch("trunc.gnw", truncated));
    FAIL("expected FormatError");
  } catch (const FormatError &e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }

  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(load_model(scratch("trailing.gnw", trailing)), FormatError);

  auto bad_tag = good;
  bad_tag[20] = 42; // first layer tag follows the 20-byte header
  CHECK_THROWS_AS(load_model(scratch("tag.gnw", bad_tag)), FormatError);

  SUBCASE("single-class model") {
    Rng rng(1);
    ModelSpec m;
    m.input = {1, 1, 3};
    m.layers = {dense(3, 1, rng), layers::Softmax{}};
    CHECK_THROWS_AS(m.validate(), FormatError);
    // Write the bytes by hand since save_model validates.
    std::vector<char> b = {'G', 'N', 'W', '1'};
    auto u32 = [&](std::uint32_t v) {
      for (int i = 0; i < 4; ++i) b.push_back(char((v >> (8 * i)) & 0xff));
    };
    u32(2); u32(1); u32(1); u32(3);
    b.push_back(1); u32(3); u32(1);
    for (int i = 0; i < 4; ++i) u32(0); // 3 weights + 1 bias, all 0.0f
    b.push_back(6);
    CHECK_THROWS_AS(load_model(scratch("k1.gnw", b)), FormatError);
  }

  SUBCASE("inconsistent shape chain names the layer") {
    Rng rng(2);
    ModelSpec m;
    m.input = {2, 2, 1};
    m.layers = {layers::Flatten{}, dense(5, 3, rng), layers::Softmax{}};
    try {
      m.validate();
      FAIL("expected FormatError");
    } catch (const FormatError &e) {
      CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
  }
}

TEST_CASE("tiny_linear forward pass matches the documented weights") {
  Network net(load_model(kFixtures / "tiny_linear.gnw"));
  QueryMeter meter;
  // softmax(bias) with bias (0.2, -0.3): p0 = 1 / (1 + exp(-0.5)).
  const ProbVector p = net.predict(ImageTensor(2, 2, 1), meter);
  CHECK(p(0) == doctest::Approx(0.6224593312018546).epsilon(1e-7));
  CHECK(p(1) == doctest::Approx(0.3775406687981454).epsilon(1e-7));

  // x = (1, 0, 0, 1): logits (1.2, -1.05), p0 = 1 / (1 + exp(-2.25)).
  ImageTensor x(2, 2, 1);
  x.array() << 1, 0, 0, 1;
  CHECK(net.predict(x, meter)(0) == doctest::Approx(0.9046505351008906).epsilon(1e-7));
  CHECK(meter.count() == 2);
}

TEST_CASE("predict contract") {
  Rng rng(4);
  ModelSpec m;
  m.input = {2, 3, 1};
  layers::Dense flat = dense(6, 7, rng);
  flat.weights.setZero();
  flat.bias.setConstant(0.25);
  m.layers = {layers::Flatten{}, flat, layers::Softmax{}};
  QueryMeter meter;
  ImageTensor x(2, 3, 1, 0.7);
  const auto p = predict(m, x, meter);
  CHECK((p.array() - 1.0 / 7.0).abs().maxCoeff() < 1e-15);

  const auto again = predict(m, x, meter);
  CHECK(p == again);
  CHECK(meter.count() == 2);

  CHECK_THROWS_AS(predict(m, ImageTensor(3, 2, 1), meter), std::invalid_argument);
  CHECK(meter.count() == 2);
}

TEST_CASE("golden vectors from the exporter") {
  const auto manifest = nlohmann::json::parse(std::ifstream(kFixtures / "manifest.json"));
  const auto data = load_idx(kFixtures / "mnist_test-images.idx",
                             kFixtures / "mnist_test-labels.idx");
  for (const char *name : {"mnist_mlp", "small_cnn"}) {
    CAPTURE(name);
    Network net(load_model(kFixtures / (std::string(name) + ".gnw")));
    QueryMeter meter;
    const ProbVector p = net.predict(data[0].image, meter);
    const auto golden = manifest[name]["golden_probs"].get<std::vector<double>>();
    REQUIRE(golden.size() == std::size_t(p.size()));
    for (std::size_t k = 0; k < golden.size(); ++k) {
      CHECK(std::abs(p(Index(k)) - golden[k]) < 1e-4);
    }
  }
}

TEST_CASE("probabilities sum to one on random models and inputs") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const ModelSpec m = random_cnn(rng);
    QueryMeter meter;
    ImageTensor x(6, 5, 2);
    for (double &v : x.array()) v = rng.uniform();
    const auto p = predict(m, x, meter);
    CHECK(std::abs(p.sum() - 1.0) < 1e-6);
    CHECK((p.array() >= 0.0).all());
  }
}

TEST_CASE("save then load preserves predictions") {
  Rng rng(12);
  ModelSpec m = random_cnn(rng);
  // Round weights through f32 first so the file is exact.
  for (auto &layer : m.layers) {
    if (auto *c = std::get_if<layers::Conv2d>(&layer)) {
      for (double &w : c->weights) w = float(w);
      c->bias = c->bias.cast<float>().cast<double>();
    } else if (auto *d = std::get_if<layers::Dense>(&layer)) {
      d->weights = d->weights.cast<float>().cast<double>();
      d->bias = d->bias.cast<float>().cast<double>();
    }
  }
  const auto path = std::filesystem::temp_directory_path() / "genattack_roundtrip.gnw";
  save_model(m, path);
  const ModelSpec back = load_model(path);
  QueryMeter meter;
  ImageTensor x(6, 5, 2);
  for (double &v : x.array()) v = rng.uniform();
  CHECK(predict(m, x, meter) == predict(back, x, meter));
}

TEST_CASE("concurrent predicts keep the meter exact") {
  Network net(load_model(kFixtures / "mnist_mlp.gnw"));
  QueryMeter meter;
  std::vector<std::thread> pool;
  for (int t = 0; t < 4; ++t) {
    pool.emplace_back([&] {
      ImageTensor x(28, 28, 1, 0.1);
      for (int i = 0; i < 250; ++i) net.predict(x, meter);
    });
  }
  for (auto &th : pool) th.join();
  CHECK(meter.count() == 1000);
}

#ifndef GENATTACK_MODEL_HPP
#define GENATTACK_MODEL_HPP

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "genattack/tensor.hpp"

namespace genattack {

/// Class probabilities; non-negative, summing to one.
using ProbVector = Eigen::VectorXd;

/// Malformed model or data file.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Counts single-image model evaluations. Thread-safe and monotone.
class QueryMeter {
public:
  QueryMeter() = default;
  QueryMeter(const QueryMeter &) = delete;
  QueryMeter &operator=(const QueryMeter &) = delete;

  void increment(std::uint64_t n = 1) { count_.fetch_add(n, std::memory_order_relaxed); }
  std::uint64_t count() const { return count_.load(std::memory_order_relaxed); }

private:
  std::atomic<std::uint64_t> count_{0};
};

/// Numerically stable softmax. Throws std::invalid_argument on empty or non-finite input.
ProbVector softmax(const Eigen::Ref<const Eigen::VectorXd> &logits);

namespace layers {

struct Dense {
  Eigen::MatrixXd weights; // out x in
  Eigen::VectorXd bias;    // out
};

enum class Padding : std::uint32_t { valid = 0, same = 1 };

struct Conv2d {
  Index kernel_h = 0;
  Index kernel_w = 0;
  Index in_channels = 0;
  Index out_channels = 0;
  Index stride = 1;
  Padding padding = Padding::valid;
  std::vector<double> weights; // (out_c, in_c, kh, kw) row-major
  Eigen::VectorXd bias;        // out_c
};

struct Relu {};

struct MaxPool2d {
  Index kernel = 2;
  Index stride = 2;
};

struct Flatten {};

struct Softmax {};

} // namespace layers

using Layer = std::variant<layers::Dense, layers::Conv2d, layers::Relu, layers::MaxPool2d,
                           layers::Flatten, layers::Softmax>;

/// Feed-forward network description. The shape chain must lead from
/// `input` to a flat vector of class probabilities (last layer softmax).
struct ModelSpec {
  Shape input;
  std::vector<Layer> layers;

  /// Checks the shape chain; throws FormatError naming the offending layer.
  void validate() const;
  /// Shape after the given number of layers (0 = input).
  Shape shape_after(std::size_t layer_count) const;
  Index num_classes() const;
};

ModelSpec load_model(const std::filesystem::path &path);
void save_model(const ModelSpec &model, const std::filesystem::path &path);

/// Runs the forward pass and bills one query.
ProbVector predict(const ModelSpec &model, const ImageTensor &image, QueryMeter &meter);

/// Scores-only classifier: the only surface an attack gets to see.
class BlackBox {
public:
  virtual ~BlackBox() = default;
  virtual Shape input_shape() const = 0;
  virtual Index num_classes() const = 0;
  /// One forward pass on one image; increments `meter` by exactly one.
  virtual ProbVector predict(const ImageTensor &image, QueryMeter &meter) = 0;
};

/// BlackBox over a loaded network. Immutable, safe to share across threads.
class Network final : public BlackBox {
public:
  explicit Network(ModelSpec spec);

  Shape input_shape() const override { return spec_.input; }
  Index num_classes() const override { return classes_; }
  ProbVector predict(const ImageTensor &image, QueryMeter &meter) override;

private:
  ModelSpec spec_;
  Index classes_;
};

} // namespace genattack

#endif // GENATTACK_MODEL_HPP

#include "genattack/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>

namespace genattack {

static_assert(std::endian::native == std::endian::little,
              "GNW reader assumes a little-endian host");

ProbVector softmax(const Eigen::Ref<const Eigen::VectorXd> &logits) {
  if (logits.size() == 0) {
    throw std::invalid_argument("softmax: empty input");
  }
  if (!logits.allFinite()) {
    throw std::invalid_argument("softmax: non-finite input");
  }
  const Eigen::ArrayXd e = (logits.array() - logits.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

namespace {

enum class Tag : std::uint8_t {
  dense = 1,
  conv2d = 2,
  relu = 3,
  maxpool2d = 4,
  flatten = 5,
  softmax = 6,
};

constexpr char kMagic[4] = {'G', 'N', 'W', '1'};

std::string layer_label(std::size_t index) { return "layer " + std::to_string(index); }

Index conv_out(Index in, Index kernel, Index stride, layers::Padding pad) {
  if (pad == layers::Padding::same) {
    return (in + stride - 1) / stride;
  }
  return in < kernel ? 0 : (in - kernel) / stride + 1;
}

Shape next_shape(const Shape &in, const Layer &layer, std::size_t index) {
  auto fail = [&](const std::string &msg) -> FormatError {
    return FormatError(layer_label(index) + ": " + msg + " (input " + to_string(in) + ")");
  };
  const bool flat = in.height == 1 && in.width == 1;
  return std::visit(
      [&](const auto &l) -> Shape {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, layers::Dense>) {
          if (!flat) {
            throw fail("dense layer needs a flattened input");
          }
          if (l.weights.cols() != in.channels || l.bias.size() != l.weights.rows() ||
              l.weights.rows() <= 0) {
            throw fail("dense weights are " + std::to_string(l.weights.rows()) + "x" +
                       std::to_string(l.weights.cols()));
          }
          return {1, 1, l.weights.rows()};
        } else if constexpr (std::is_same_v<T, layers::Conv2d>) {
          if (l.in_channels != in.channels) {
            throw fail("conv expects " + std::to_string(l.in_channels) + " channels");
          }
          if (l.kernel_h <= 0 || l.kernel_w <= 0 || l.stride <= 0 || l.out_channels <= 0) {
            throw fail("conv dimensions must be positive");
          }
          if (static_cast<Index>(l.weights.size()) !=
                  l.out_channels * l.in_channels * l.kernel_h * l.kernel_w ||
              l.bias.size() != l.out_channels) {
            throw fail("conv weight count does not match its dimensions");
          }
          const Index oh = conv_out(in.height, l.kernel_h, l.stride, l.padding);
          const Index ow = conv_out(in.width, l.kernel_w, l.stride, l.padding);
          if (oh <= 0 || ow <= 0) {
            throw fail("conv kernel larger than its input");
          }
          return {oh, ow, l.out_channels};
        } else if constexpr (std::is_same_v<T, layers::MaxPool2d>) {
          if (l.kernel <= 0 || l.stride <= 0 || in.height < l.kernel || in.width < l.kernel) {
            throw fail("invalid maxpool window");
          }
          return {(in.height - l.kernel) / l.stride + 1, (in.width - l.kernel) / l.stride + 1,
                  in.channels};
        } else if constexpr (std::is_same_v<T, layers::Flatten>) {
          return {1, 1, in.size()};
        } else if constexpr (std::is_same_v<T, layers::Softmax>) {
          if (!flat) {
            throw fail("softmax needs a flattened input");
          }
          return in;
        } else {
          return in;
        }
      },
      layer);
}

ImageTensor run_conv(const ImageTensor &in, const layers::Conv2d &l) {
  const Index oh = conv_out(in.height(), l.kernel_h, l.stride, l.padding);
  const Index ow = conv_out(in.width(), l.kernel_w, l.stride, l.padding);
  Index pad_top = 0;
  Index pad_left = 0;
  if (l.padding == layers::Padding::same) {
    pad_top = std::max<Index>((oh - 1) * l.stride + l.kernel_h - in.height(), 0) / 2;
    pad_left = std::max<Index>((ow - 1) * l.stride + l.kernel_w - in.width(), 0) / 2;
  }
  ImageTensor out(oh, ow, l.out_channels);
  for (Index oy = 0; oy < oh; ++oy) {
    for (Index ox = 0; ox < ow; ++ox) {
      for (Index oc = 0; oc < l.out_channels; ++oc) {
        double acc = l.bias(oc);
        for (Index ic = 0; ic < l.in_channels; ++ic) {
          const double *w = &l.weights[((oc * l.in_channels + ic) * l.kernel_h) * l.kernel_w];
          for (Index ky = 0; ky < l.kernel_h; ++ky) {
            const Index iy = oy * l.stride + ky - pad_top;
            if (iy < 0 || iy >= in.height()) {
              continue;
            }
            for (Index kx = 0; kx < l.kernel_w; ++kx) {
              const Index ix = ox * l.stride + kx - pad_left;
              if (ix < 0 || ix >= in.width()) {
                continue;
              }
              acc += w[ky * l.kernel_w + kx] * in(iy, ix, ic);
            }
          }
        }
        out(oy, ox, oc) = acc;
      }
    }
  }
  return out;
}

ImageTensor run_maxpool(const ImageTensor &in, const layers::MaxPool2d &l) {
  const Index oh = (in.height() - l.kernel) / l.stride + 1;
  const Index ow = (in.width() - l.kernel) / l.stride + 1;
  ImageTensor out(oh, ow, in.channels());
  for (Index oy = 0; oy < oh; ++oy) {
    for (Index ox = 0; ox < ow; ++ox) {
      for (Index c = 0; c < in.channels(); ++c) {
        double best = -std::numeric_limits<double>::infinity();
        for (Index ky = 0; ky < l.kernel; ++ky) {
          for (Index kx = 0; kx < l.kernel; ++kx) {
            best = std::max(best, in(oy * l.stride + ky, ox * l.stride + kx, c));
          }
        }
        out(oy, ox, c) = best;
      }
    }
  }
  return out;
}

ProbVector forward(const ModelSpec &model, const ImageTensor &image) {
  if (!(image.shape() == model.input)) {
    throw std::invalid_argument("predict: image shape " + to_string(image.shape()) +
                                " does not match model input " + to_string(model.input));
  }
  ImageTensor act = image;
  for (const Layer &layer : model.layers) {
    std::visit(
        [&](const auto &l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, layers::Dense>) {
            Eigen::ArrayXd out = (l.weights * act.array().matrix() + l.bias).array();
            const Index n = out.size();
            act = ImageTensor({1, 1, n}, std::move(out));
          } else if constexpr (std::is_same_v<T, layers::Conv2d>) {
            act = run_conv(act, l);
          } else if constexpr (std::is_same_v<T, layers::Relu>) {
            act.array() = act.array().max(0.0);
          } else if constexpr (std::is_same_v<T, layers::MaxPool2d>) {
            act = run_maxpool(act, l);
          } else if constexpr (std::is_same_v<T, layers::Flatten>) {
            const Index n = act.size();
            act = ImageTensor({1, 1, n}, std::move(act.array()));
          } else if constexpr (std::is_same_v<T, layers::Softmax>) {
            act.array() = softmax(act.array().matrix()).array();
          }
        },
        layer);
  }
  return act.array().matrix();
}

class Reader {
public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  void read(void *dst, std::size_t n, const std::string &where) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("truncated GNW file at " + where);
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::uint8_t u8(const std::string &where) {
    std::uint8_t v;
    read(&v, 1, where);
    return v;
  }

  std::uint32_t u32(const std::string &where) {
    std::uint32_t v;
    read(&v, 4, where);
    return v;
  }

  std::vector<double> f32s(std::uint64_t n, const std::string &where) {
    if ((bytes_.size() - pos_) / 4 < n) {
      throw FormatError("truncated GNW file at " + where + " (expected " + std::to_string(n) +
                        " weights)");
    }
    std::vector<float> raw(n);
    read(raw.data(), n * 4, where);
    return {raw.begin(), raw.end()};
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

void put_u32(std::ofstream &os, std::uint64_t v) {
  const auto x = static_cast<std::uint32_t>(v);
  os.write(reinterpret_cast<const char *>(&x), 4);
}

template <typename Range>
void put_f32s(std::ofstream &os, const Range &values) {
  for (double v : values) {
    const auto f = static_cast<float>(v);
    os.write(reinterpret_cast<const char *>(&f), 4);
  }
}

} // namespace

Shape ModelSpec::shape_after(std::size_t layer_count) const {
  Shape s = input;
  for (std::size_t i = 0; i < layer_count && i < layers.size(); ++i) {
    s = next_shape(s, layers[i], i);
  }
  return s;
}

void ModelSpec::validate() const {
  if (input.height <= 0 || input.width <= 0 || input.channels <= 0) {
    throw FormatError("model input shape must be positive, got " + to_string(input));
  }
  if (layers.empty()) {
    throw FormatError("model has no layers");
  }
  Shape s = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (std::holds_alternative<layers::Softmax>(layers[i]) && i + 1 != layers.size()) {
      throw FormatError(layer_label(i) + ": softmax must be the final layer");
    }
    s = next_shape(s, layers[i], i);
  }
  if (!std::holds_alternative<layers::Softmax>(layers.back())) {
    throw FormatError(layer_label(layers.size() - 1) + ": final layer must be softmax");
  }
  if (s.channels < 2) {
    throw FormatError(layer_label(layers.size() - 1) + ": model must have at least 2 classes");
  }
}

Index ModelSpec::num_classes() const { return shape_after(layers.size()).channels; }

ModelSpec load_model(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("cannot open model file " + path.string());
  }
  Reader in(std::vector<char>(std::istreambuf_iterator<char>(is), {}));

  char magic[4];
  in.read(magic, 4, "header");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad magic in " + path.string() + " (expected GNW1)");
  }
  const std::uint32_t count = in.u32("header");
  ModelSpec model;
  model.input.height = in.u32("header");
  model.input.width = in.u32("header");
  model.input.channels = in.u32("header");
  if (count == 0 || count > in.remaining()) {
    throw FormatError("implausible layer count " + std::to_string(count));
  }

  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = layer_label(i);
    const auto tag = static_cast<Tag>(in.u8(where));
    switch (tag) {
    case Tag::dense: {
      const std::uint32_t n_in = in.u32(where);
      const std::uint32_t n_out = in.u32(where);
      const auto w = in.f32s(std::uint64_t(n_in) * n_out, where);
      const auto b = in.f32s(n_out, where);
      layers::Dense d;
      d.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                 Eigen::RowMajor>>(w.data(), n_out, n_in);
      d.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), n_out);
      model.layers.emplace_back(std::move(d));
      break;
    }
    case Tag::conv2d: {
      layers::Conv2d c;
      c.kernel_h = in.u32(where);
      c.kernel_w = in.u32(where);
      c.in_channels = in.u32(where);
      c.out_channels = in.u32(where);
      c.stride = in.u32(where);
      const std::uint32_t pad = in.u32(where);
      if (pad > 1) {
        throw FormatError(where + ": unknown padding mode " + std::to_string(pad));
      }
      c.padding = static_cast<layers::Padding>(pad);
      for (Index dim : {c.kernel_h, c.kernel_w, c.in_channels, c.out_channels}) {
        if (dim == 0 || static_cast<std::size_t>(dim) > in.remaining()) {
          throw FormatError(where + ": implausible conv dimension " + std::to_string(dim));
        }
      }
      c.weights = in.f32s(std::uint64_t(c.out_channels) * c.in_channels * c.kernel_h *
                              c.kernel_w,
                          where);
      const auto b = in.f32s(c.out_channels, where);
      c.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), c.out_channels);
      model.layers.emplace_back(std::move(c));
      break;
    }
    case Tag::relu:
      model.layers.emplace_back(layers::Relu{});
      break;
    case Tag::maxpool2d: {
      layers::MaxPool2d p;
      p.kernel = in.u32(where);
      p.stride = in.u32(where);
      model.layers.emplace_back(p);
      break;
    }
    case Tag::flatten:
      model.layers.emplace_back(layers::Flatten{});
      break;
    case Tag::softmax:
      model.layers.emplace_back(layers::Softmax{});
      break;
    default:
      throw FormatError(where + ": unknown layer tag " + std::to_string(int(tag)));
    }
  }
  if (in.remaining() != 0) {
    throw FormatError(std::to_string(in.remaining()) + " trailing bytes after last layer");
  }
  model.validate();
  return model;
}

void save_model(const ModelSpec &model, const std::filesystem::path &path) {
  model.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot write model file " + path.string());
  }
  os.write(kMagic, 4);
  put_u32(os, model.layers.size());
  put_u32(os, model.input.height);
  put_u32(os, model.input.width);
  put_u32(os, model.input.channels);
  for (const Layer &layer : model.layers) {
    std::visit(
        [&](const auto &l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, layers::Dense>) {
            os.put(char(Tag::dense));
            put_u32(os, l.weights.cols());
            put_u32(os, l.weights.rows());
            const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm =
                l.weights;
            put_f32s(os, std::span<const double>(rm.data(), rm.size()));
            put_f32s(os, std::span<const double>(l.bias.data(), l.bias.size()));
          } else if constexpr (std::is_same_v<T, layers::Conv2d>) {
            os.put(char(Tag::conv2d));
            for (Index v : {l.kernel_h, l.kernel_w, l.in_channels, l.out_channels, l.stride}) {
              put_u32(os, v);
            }
            put_u32(os, static_cast<std::uint32_t>(l.padding));
            put_f32s(os, l.weights);
            put_f32s(os, std::span<const double>(l.bias.data(), l.bias.size()));
          } else if constexpr (std::is_same_v<T, layers::Relu>) {
            os.put(char(Tag::relu));
          } else if constexpr (std::is_same_v<T, layers::MaxPool2d>) {
            os.put(char(Tag::maxpool2d));
            put_u32(os, l.kernel);
            put_u32(os, l.stride);
          } else if constexpr (std::is_same_v<T, layers::Flatten>) {
            os.put(char(Tag::flatten));
          } else if constexpr (std::is_same_v<T, layers::Softmax>) {
            os.put(char(Tag::softmax));
          }
        },
        layer);
  }
  if (!os) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

ProbVector predict(const ModelSpec &model, const ImageTensor &image, QueryMeter &meter) {
  ProbVector probs = forward(model, image);
  meter.increment();
  return probs;
}

Network::Network(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  classes_ = spec_.num_classes();
}

ProbVector Network::predict(const ImageTensor &image, QueryMeter &meter) {
  return genattack::predict(spec_, image, meter);
}

} // namespace genattack

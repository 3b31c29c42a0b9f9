#include "genattack/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>

namespace genattack {

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(is), {}};
}

std::uint32_t be32(const std::vector<unsigned char> &b, std::size_t at) {
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) |
         (std::uint32_t(b[at + 2]) << 8) | std::uint32_t(b[at + 3]);
}

/// Next whitespace-delimited header token of a PNM file, skipping comments.
std::string pnm_token(const std::vector<unsigned char> &b, std::size_t &pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') {
        ++pos;
      }
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#') {
    tok.push_back(char(b[pos++]));
  }
  return tok;
}

long pnm_int(const std::vector<unsigned char> &b, std::size_t &pos, const std::string &path) {
  const std::string tok = pnm_token(b, pos);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit) || tok.size() > 9) {
    throw FormatError(path + ": malformed PNM header field '" + tok + "'");
  }
  return std::stol(tok);
}

} // namespace

std::vector<LabeledImage> load_idx(const std::filesystem::path &images,
                                   const std::filesystem::path &labels) {
  const auto ib = read_all(images);
  const auto lb = read_all(labels);
  if (ib.size() < 16) {
    throw FormatError(images.string() + ": truncated IDX image header");
  }
  if (lb.size() < 8) {
    throw FormatError(labels.string() + ": truncated IDX label header");
  }
  if (be32(ib, 0) != 0x00000803) {
    throw FormatError(images.string() + ": bad IDX image magic");
  }
  if (be32(lb, 0) != 0x00000801) {
    throw FormatError(labels.string() + ": bad IDX label magic");
  }
  const std::uint64_t n = be32(ib, 4);
  const std::uint64_t rows = be32(ib, 8);
  const std::uint64_t cols = be32(ib, 12);
  if (be32(lb, 4) != n) {
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                      std::to_string(be32(lb, 4)) + " labels");
  }
  if (rows == 0 || cols == 0) {
    throw FormatError(images.string() + ": zero image dimension");
  }
  if (ib.size() != 16 + n * rows * cols) {
    throw FormatError(images.string() + ": expected " + std::to_string(n * rows * cols) +
                      " pixel bytes, found " + std::to_string(ib.size() - 16));
  }
  if (lb.size() != 8 + n) {
    throw FormatError(labels.string() + ": expected " + std::to_string(n) + " labels, found " +
                      std::to_string(lb.size() - 8));
  }
  std::vector<LabeledImage> out;
  out.reserve(n);
  const std::size_t px = rows * cols;
  for (std::size_t i = 0; i < n; ++i) {
    ImageTensor img(Index(rows), Index(cols), 1);
    for (std::size_t j = 0; j < px; ++j) {
      img.array()(Index(j)) = ib[16 + i * px + j] / 255.0;
    }
    out.push_back({std::move(img), Index(lb[8 + i])});
  }
  return out;
}

ImageTensor load_image(const std::filesystem::path &path) {
  const auto b = read_all(path);
  const std::string name = path.string();
  std::size_t pos = 0;
  const std::string magic = pnm_token(b, pos);
  Index channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw FormatError(name + ": unsupported image magic '" + magic + "' (need P5 or P6)");
  }
  const long width = pnm_int(b, pos, name);
  const long height = pnm_int(b, pos, name);
  const long maxval = pnm_int(b, pos, name);
  if (maxval != 255) {
    throw FormatError(name + ": maxval " + std::to_string(maxval) + " unsupported (need 255)");
  }
  if (width <= 0 || height <= 0) {
    throw FormatError(name + ": zero image dimension");
  }
  ++pos; // single whitespace byte after maxval
  const std::size_t count = std::size_t(width) * std::size_t(height) * std::size_t(channels);
  if (pos > b.size() || b.size() - pos < count) {
    throw FormatError(name + ": truncated pixel data");
  }
  ImageTensor img(height, width, channels);
  for (std::size_t i = 0; i < count; ++i) {
    img.array()(Index(i)) = b[pos + i] / 255.0;
  }
  return img;
}

void write_image(const std::filesystem::path &path, const ImageTensor &image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw std::invalid_argument("write_image: need 1 or 3 channels");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot write " + path.string());
  }
  os << (image.channels() == 1 ? "P5" : "P6") << '\n'
     << image.width() << ' ' << image.height() << "\n255\n";
  for (double v : image.array()) {
    os.put(char(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  if (!os) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

void write_noise_dump(const std::filesystem::path &path, const NoiseGrid<double> &noise) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw std::runtime_error("cannot write " + path.string());
  }
  for (double v : noise.values.array()) {
    const auto f = static_cast<float>(v);
    os.write(reinterpret_cast<const char *>(&f), 4);
  }
  if (!os) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

std::vector<LabeledImage> load_image_dir(const std::filesystem::path &dir) {
  std::vector<std::filesystem::path> files;
  for (const auto &entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<LabeledImage> out;
  for (const auto &f : files) {
    const std::string stem = f.filename().string();
    const auto cut = stem.find('_');
    const std::string digits = stem.substr(0, cut);
    if (cut == std::string::npos || digits.empty() ||
        !std::all_of(digits.begin(), digits.end(), ::isdigit) || digits.size() > 6) {
      throw FormatError(f.string() + ": file name must start with '<label>_'");
    }
    out.push_back({load_image(f), Index(std::stol(digits))});
  }
  return out;
}

} // namespace genattack

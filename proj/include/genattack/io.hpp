#ifndef GENATTACK_IO_HPP
#define GENATTACK_IO_HPP

#include <filesystem>
#include <vector>

#include "genattack/model.hpp"
#include "genattack/tensor.hpp"

namespace genattack {

struct LabeledImage {
  ImageTensor image;
  Index label = -1;
};

/// Big-endian IDX pair (images 0x00000803 n x rows x cols, labels 0x00000801 n),
/// pixels scaled by 1/255. Throws FormatError on any inconsistency.
std::vector<LabeledImage> load_idx(const std::filesystem::path &images,
                                   const std::filesystem::path &labels);

/// Binary PGM (P5) or PPM (P6) with maxval 255.
ImageTensor load_image(const std::filesystem::path &path);

/// Writes P5 for one channel, P6 for three; values rounded to 8 bits.
void write_image(const std::filesystem::path &path, const ImageTensor &image);

/// Raw little-endian f32 dump of the values in HWC order.
void write_noise_dump(const std::filesystem::path &path, const NoiseGrid<double> &noise);

/// Every *.pgm / *.ppm in `dir`, sorted by file name. The label is the integer
/// before the first '_' in the file name ("7_0003.pgm" has label 7).
std::vector<LabeledImage> load_image_dir(const std::filesystem::path &dir);

} // namespace genattack

#endif // GENATTACK_IO_HPP

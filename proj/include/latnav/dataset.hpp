#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "latnav/tensor.hpp"

namespace latnav {

// Where an image came from. The downstream trainer refuses anything but
// `synthetic` for the synthetic arms.
enum class Origin { real, projection, synthetic };

std::string_view origin_name(Origin origin) noexcept;

struct ToyImage {
  Tensor pixels;  // height x width, values in [-1, 1]
  int identity = -1;
  int label = -1;
  Origin origin = Origin::real;
};

enum class Split { train, val, test };

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct LabeledDataset {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t n_classes = 2;
  std::vector<ToyImage> images;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  // Indices of images appended by projection augmentation.
  std::vector<std::size_t> projections;

  const std::vector<std::size_t>& split(Split s) const;
  std::size_t pixel_count() const { return height * width; }
};

// Flattened images (rows) with labels, the form every trainer consumes.
struct Samples {
  Tensor inputs;
  std::vector<int> labels;
  std::vector<Origin> origins;

  std::size_t size() const { return labels.size(); }
};

enum class LabelKind { identity, label };

Samples make_samples(const LabeledDataset& data, std::span<const std::size_t> indices, LabelKind kind);
Samples make_samples(std::span<const ToyImage> images, LabelKind kind);
Samples concat_samples(const Samples& a, const Samples& b);
Samples subset(const Samples& s, std::span<const std::size_t> indices);

// Per-identity structural pattern + per-class global blob + pixel noise.
// The identity pattern and the class blob are driven by disjoint parameters.
struct IdenticonSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t grid = 4;                 // identity pattern is grid x grid cells
  double pattern_amplitude = 0.5;       // cell values are +/- this
  double background = -0.2;
  double class_amplitude = 0.35;        // mean blob strength
  double class_jitter = 0.2;            // per-image std of the blob strength
  double blob_radius = 3.0;             // Gaussian sigma in pixels
  double noise = 0.05;                  // per-pixel Gaussian noise std
  SplitFractions splits;
};

// One image per identity. Identity i is drawn from a stream keyed by
// identity_keys[i] (default 0..n_id-1); class = key mod n_classes. Splits are
// stratified by class and assigned from `seed`.
LabeledDataset generate_identicon_dataset(const IdenticonSpec& spec, std::size_t n_id, std::size_t n_classes,
                                          std::uint64_t seed, std::span<const std::uint64_t> identity_keys = {});

void validate_splits(const SplitFractions& fractions);

// Clamps every pixel to [-1, 1]; returns the number of clamped values.
std::size_t enforce_pixel_range(Tensor& pixels);

// --- on-disk form ------------------------------------------------------------
// <stem>.bin : raw little-endian float64, N*H*W values, image-major
// <stem>.hdr : text sidecar
//     latnav-images 1
//     count N
//     height H
//     width W
//     range -1 1
//     n_classes C
//     split train|val|test|projections <indices...>   (optional lines)
//     <identity> <label> <origin>                      (N lines)
void write_images(const std::filesystem::path& stem, const LabeledDataset& data);
LabeledDataset read_images(const std::filesystem::path& stem);

// Binary PGM (P5) strip of up to `max_images` images for eyeballing.
void write_pgm_strip(const std::filesystem::path& path, std::span<const ToyImage> images, std::size_t max_images);

}  // namespace latnav

#include "latnav/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "latnav/random.hpp"

namespace latnav {

std::string_view origin_name(Origin origin) noexcept {
  switch (origin) {
    case Origin::real:
      return "real";
    case Origin::projection:
      return "projection";
    case Origin::synthetic:
      return "synthetic";
  }
  return "real";
}

namespace {

Origin parse_origin(const std::string& name) {
  if (name == "real") return Origin::real;
  if (name == "projection") return Origin::projection;
  if (name == "synthetic") return Origin::synthetic;
  throw std::runtime_error("unknown image origin '" + name + "'");
}

Tensor render_identicon(const IdenticonSpec& spec, std::size_t n_classes, int label, std::uint64_t stream_seed) {
  Rng rng(stream_seed);
  const std::size_t h = spec.height, w = spec.width;
  Tensor img = Tensor::matrix(h, w, spec.background);

  // Identity: binary cell pattern.
  std::vector<double> cells(spec.grid * spec.grid);
  for (double& c : cells) c = (rng() & 1U) ? spec.pattern_amplitude : -spec.pattern_amplitude;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t cy = y * spec.grid / h, cx = x * spec.grid / w;
      img.at(y, x) += cells[cy * spec.grid + cx];
    }
  }

  // Class: Gaussian blob at a class-specific position on a circle.
  const double strength = spec.class_amplitude + spec.class_jitter * standard_normal(rng);
  const double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(label) / static_cast<double>(n_classes);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0 + 0.25 * static_cast<double>(h) * std::sin(angle);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0 + 0.25 * static_cast<double>(w) * std::cos(angle);
  const double two_sigma2 = 2.0 * spec.blob_radius * spec.blob_radius;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      img.at(y, x) += strength * std::exp(-(dy * dy + dx * dx) / two_sigma2);
    }
  }

  if (spec.noise > 0.0) {
    for (double& v : img.values()) v += spec.noise * standard_normal(rng);
  }
  enforce_pixel_range(img);
  return img;
}

void append_row(Tensor& dst, std::size_t row, std::span<const double> src) {
  std::copy(src.begin(), src.end(), dst.data() + row * dst.cols());
}

void write_index_line(std::ostream& out, const char* name, const std::vector<std::size_t>& indices) {
  out << "split " << name;
  for (std::size_t i : indices) out << ' ' << i;
  out << '\n';
}

}  // namespace

const std::vector<std::size_t>& LabeledDataset::split(Split s) const {
  switch (s) {
    case Split::train:
      return train;
    case Split::val:
      return val;
    case Split::test:
      return test;
  }
  return train;
}

Samples make_samples(const LabeledDataset& data, std::span<const std::size_t> indices, LabelKind kind) {
  Samples out;
  out.inputs = Tensor::matrix(indices.size(), data.pixel_count());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const ToyImage& img = data.images.at(indices[r]);
    append_row(out.inputs, r, img.pixels.values());
    out.labels.push_back(kind == LabelKind::identity ? img.identity : img.label);
    out.origins.push_back(img.origin);
  }
  return out;
}

Samples make_samples(std::span<const ToyImage> images, LabelKind kind) {
  Samples out;
  const std::size_t pixels = images.empty() ? 0 : images.front().pixels.size();
  out.inputs = Tensor::matrix(images.size(), pixels);
  for (std::size_t r = 0; r < images.size(); ++r) {
    if (images[r].pixels.size() != pixels) throw std::invalid_argument("make_samples: mixed image sizes");
    append_row(out.inputs, r, images[r].pixels.values());
    out.labels.push_back(kind == LabelKind::identity ? images[r].identity : images[r].label);
    out.origins.push_back(images[r].origin);
  }
  return out;
}

Samples concat_samples(const Samples& a, const Samples& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  Samples out;
  const Tensor parts[] = {a.inputs, b.inputs};
  out.inputs = stack_rows(parts);
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.origins = a.origins;
  out.origins.insert(out.origins.end(), b.origins.begin(), b.origins.end());
  return out;
}

Samples subset(const Samples& s, std::span<const std::size_t> indices) {
  Samples out;
  out.inputs = gather_rows(s.inputs, indices);
  for (std::size_t i : indices) {
    out.labels.push_back(s.labels.at(i));
    out.origins.push_back(s.origins.at(i));
  }
  return out;
}

void validate_splits(const SplitFractions& f) {
  const bool positive = f.train > 0.0 && f.val > 0.0 && f.test > 0.0;
  if (!positive || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    std::ostringstream msg;
    msg << "split proportions must be positive and sum to 1, got " << f.train << '/' << f.val << '/' << f.test;
    throw std::invalid_argument(msg.str());
  }
}

std::size_t enforce_pixel_range(Tensor& pixels) {
  std::size_t clamped = 0;
  for (double& v : pixels.values()) {
    if (v < -1.0 || v > 1.0) {
      v = std::clamp(v, -1.0, 1.0);
      ++clamped;
    }
  }
  return clamped;
}

LabeledDataset generate_identicon_dataset(const IdenticonSpec& spec, std::size_t n_id, std::size_t n_classes,
                                          std::uint64_t seed, std::span<const std::uint64_t> identity_keys) {
  if (n_classes < 2) throw std::invalid_argument("identicon dataset needs at least two classes");
  if (n_id < 2 * n_classes) {
    throw std::invalid_argument("identicon dataset needs n_id >= 2 * n_classes, got n_id=" + std::to_string(n_id));
  }
  if (spec.grid == 0 || spec.height % spec.grid != 0 || spec.width % spec.grid != 0) {
    throw std::invalid_argument("identicon grid must divide the image size");
  }
  validate_splits(spec.splits);
  std::vector<std::uint64_t> keys(identity_keys.begin(), identity_keys.end());
  if (keys.empty()) {
    keys.resize(n_id);
    std::iota(keys.begin(), keys.end(), std::uint64_t{0});
  }
  if (keys.size() != n_id) throw std::invalid_argument("identity_keys must have n_id entries");

  LabeledDataset data;
  data.height = spec.height;
  data.width = spec.width;
  data.n_classes = n_classes;
  for (std::size_t i = 0; i < n_id; ++i) {
    const int label = static_cast<int>(keys[i] % n_classes);
    ToyImage img;
    img.pixels = render_identicon(spec, n_classes, label, mix_seed(seed, 0x1d, keys[i]));
    img.identity = static_cast<int>(i);
    img.label = label;
    data.images.push_back(std::move(img));
  }

  // Stratified split.
  Rng split_rng(mix_seed(seed, 0x5b));
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n_id; ++i) {
      if (data.images[i].label == static_cast<int>(c)) members.push_back(i);
    }
    seeded_shuffle(members, split_rng);
    const auto n = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::llround(n * spec.splits.train));
    const auto n_val = static_cast<std::size_t>(std::llround(n * spec.splits.val));
    for (std::size_t k = 0; k < members.size(); ++k) {
      if (k < n_train) {
        data.train.push_back(members[k]);
      } else if (k < n_train + n_val) {
        data.val.push_back(members[k]);
      } else {
        data.test.push_back(members[k]);
      }
    }
  }
  std::sort(data.train.begin(), data.train.end());
  std::sort(data.val.begin(), data.val.end());
  std::sort(data.test.begin(), data.test.end());
  return data;
}

void write_images(const std::filesystem::path& stem, const LabeledDataset& data) {
  const auto bin_path = std::filesystem::path(stem).concat(".bin");
  const auto hdr_path = std::filesystem::path(stem).concat(".hdr");
  {
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + bin_path.string());
    static_assert(std::endian::native == std::endian::little, "image files are little-endian");
    for (const auto& img : data.images) {
      bin.write(reinterpret_cast<const char*>(img.pixels.data()),
                static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
    }
  }
  std::ofstream hdr(hdr_path);
  if (!hdr) throw std::runtime_error("cannot write " + hdr_path.string());
  hdr << "latnav-images 1\n"
      << "count " << data.images.size() << '\n'
      << "height " << data.height << '\n'
      << "width " << data.width << '\n'
      << "range -1 1\n"
      << "n_classes " << data.n_classes << '\n';
  write_index_line(hdr, "train", data.train);
  write_index_line(hdr, "val", data.val);
  write_index_line(hdr, "test", data.test);
  write_index_line(hdr, "projections", data.projections);
  hdr << "labels\n";
  for (const auto& img : data.images) hdr << img.identity << ' ' << img.label << ' ' << origin_name(img.origin) << '\n';
}

LabeledDataset read_images(const std::filesystem::path& stem) {
  const auto bin_path = std::filesystem::path(stem).concat(".bin");
  const auto hdr_path = std::filesystem::path(stem).concat(".hdr");
  std::ifstream hdr(hdr_path);
  if (!hdr) throw std::runtime_error("cannot read " + hdr_path.string());
  LabeledDataset data;
  std::size_t count = 0;
  std::string line;
  std::getline(hdr, line);
  if (line != "latnav-images 1") throw std::runtime_error(hdr_path.string() + ": not an image header");
  while (std::getline(hdr, line)) {
    std::istringstream in(line);
    std::string key;
    in >> key;
    if (key == "count") {
      in >> count;
    } else if (key == "height") {
      in >> data.height;
    } else if (key == "width") {
      in >> data.width;
    } else if (key == "n_classes") {
      in >> data.n_classes;
    } else if (key == "split") {
      std::string name;
      in >> name;
      std::vector<std::size_t>* target = name == "train"         ? &data.train
                                         : name == "val"         ? &data.val
                                         : name == "test"        ? &data.test
                                         : name == "projections" ? &data.projections
                                                                 : nullptr;
      if (target == nullptr) throw std::runtime_error(hdr_path.string() + ": unknown split " + name);
      std::size_t idx = 0;
      while (in >> idx) target->push_back(idx);
    } else if (key == "labels") {
      break;
    }
  }
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read " + bin_path.string());
  for (std::size_t i = 0; i < count; ++i) {
    ToyImage img;
    std::string origin;
    if (!(hdr >> img.identity >> img.label >> origin)) throw std::runtime_error(hdr_path.string() + ": truncated labels");
    img.origin = parse_origin(origin);
    img.pixels = Tensor::matrix(data.height, data.width);
    bin.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
    if (!bin) throw std::runtime_error(bin_path.string() + ": truncated pixel data");
    const std::size_t clamped = enforce_pixel_range(img.pixels);
    if (clamped != 0) throw std::runtime_error(bin_path.string() + ": pixel values outside [-1, 1]");
    data.images.push_back(std::move(img));
  }
  return data;
}

void write_pgm_strip(const std::filesystem::path& path, std::span<const ToyImage> images, std::size_t max_images) {
  const std::size_t n = std::min(images.size(), max_images);
  if (n == 0) return;
  const std::size_t h = images.front().pixels.rows(), w = images.front().pixels.cols();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << w * n << ' ' << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = std::clamp(images[i].pixels.at(y, x), -1.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) * 127.5))));
      }
    }
  }
}

}  // namespace latnav

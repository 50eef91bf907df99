#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <unistd.h>

#include "latnav/dataset.hpp"

using namespace latnav;

namespace {

std::vector<std::vector<double>> sorted_images(const LabeledDataset& data) {
  std::vector<std::vector<double>> out;
  for (const auto& img : data.images) {
    std::vector<double> v(img.pixels.values().begin(), img.pixels.values().end());
    v.push_back(img.label);
    out.push_back(std::move(v));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("latnav_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Identicon, SplitsAreSeventyTenTwentyByIdentity) {
  const auto data = generate_identicon_dataset({}, 100, 2, 7);
  EXPECT_EQ(data.images.size(), 100u);
  EXPECT_EQ(data.train.size(), 70u);
  EXPECT_EQ(data.val.size(), 10u);
  EXPECT_EQ(data.test.size(), 20u);
  std::set<std::size_t> all;
  for (auto split : {Split::train, Split::val, Split::test}) all.insert(data.split(split).begin(), data.split(split).end());
  EXPECT_EQ(all.size(), 100u);
  std::set<int> ids;
  for (const auto& img : data.images) ids.insert(img.identity);
  EXPECT_EQ(ids.size(), 100u);
}

TEST(Identicon, SplitsAreStratifiedByClass) {
  const auto data = generate_identicon_dataset({}, 200, 4, 3);
  for (int c = 0; c < 4; ++c) {
    const auto count = std::count_if(data.train.begin(), data.train.end(),
                                     [&](std::size_t i) { return data.images[i].label == c; });
    EXPECT_EQ(count, 35);
  }
}

TEST(Identicon, ZeroNoiseIsPixelIdenticalForSameSeed) {
  IdenticonSpec spec;
  spec.noise = 0.0;
  const auto a = generate_identicon_dataset(spec, 40, 2, 11);
  const auto b = generate_identicon_dataset(spec, 40, 2, 11);
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) EXPECT_EQ(a.images[i].pixels, b.images[i].pixels);
  EXPECT_EQ(a.train, b.train);
}

TEST(Identicon, DifferentSeedsDiffer) {
  const auto a = generate_identicon_dataset({}, 20, 2, 1);
  const auto b = generate_identicon_dataset({}, 20, 2, 2);
  EXPECT_NE(a.images[0].pixels, b.images[0].pixels);
}

TEST(Identicon, PermutedIdentityKeysPreserveImageMultiset) {
  std::vector<std::uint64_t> keys(30);
  std::iota(keys.begin(), keys.end(), std::uint64_t{0});
  const auto base = generate_identicon_dataset({}, 30, 3, 5, keys);
  std::reverse(keys.begin(), keys.end());
  std::rotate(keys.begin(), keys.begin() + 7, keys.end());
  const auto permuted = generate_identicon_dataset({}, 30, 3, 5, keys);
  EXPECT_EQ(sorted_images(base), sorted_images(permuted));
  EXPECT_NE(base.images[0].pixels, permuted.images[0].pixels);
}

TEST(Identicon, PixelsStayInRange) {
  IdenticonSpec spec;
  spec.noise = 0.5;
  const auto data = generate_identicon_dataset(spec, 50, 2, 9);
  for (const auto& img : data.images) {
    for (double v : img.pixels.values()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Identicon, RejectsInvalidInputs) {
  IdenticonSpec bad;
  bad.splits = {0.5, 0.3, 0.3};
  EXPECT_THROW(generate_identicon_dataset(bad, 100, 2, 0), std::invalid_argument);
  bad.splits = {1.0, 0.0, 0.0};
  EXPECT_THROW(generate_identicon_dataset(bad, 100, 2, 0), std::invalid_argument);
  EXPECT_THROW(generate_identicon_dataset({}, 3, 2, 0), std::invalid_argument);
  EXPECT_THROW(generate_identicon_dataset({}, 10, 1, 0), std::invalid_argument);
  IdenticonSpec grid;
  grid.grid = 5;
  EXPECT_THROW(generate_identicon_dataset(grid, 10, 2, 0), std::invalid_argument);
}

TEST(Samples, MakeSamplesFlattensAndLabels) {
  const auto data = generate_identicon_dataset({}, 20, 2, 4);
  const Samples s = make_samples(data, data.train, LabelKind::identity);
  ASSERT_EQ(s.size(), data.train.size());
  EXPECT_EQ(s.inputs.cols(), 256u);
  for (std::size_t r = 0; r < s.size(); ++r) {
    EXPECT_EQ(s.labels[r], data.images[data.train[r]].identity);
    EXPECT_EQ(s.inputs.at(r, 17), data.images[data.train[r]].pixels[17]);
  }
  const Samples both = concat_samples(s, s);
  EXPECT_EQ(both.size(), 2 * s.size());
  const std::size_t pick[] = {1, 0};
  const Samples sub = subset(s, pick);
  EXPECT_EQ(sub.labels[0], s.labels[1]);
}

TEST(ImageFiles, RoundTripPreservesEverything) {
  auto data = generate_identicon_dataset({}, 30, 3, 21);
  data.images[4].origin = Origin::projection;
  data.projections = {4};
  const auto dir = scratch_dir("images");
  write_images(dir / "set", data);
  const auto back = read_images(dir / "set");
  ASSERT_EQ(back.images.size(), data.images.size());
  EXPECT_EQ(back.train, data.train);
  EXPECT_EQ(back.val, data.val);
  EXPECT_EQ(back.test, data.test);
  EXPECT_EQ(back.projections, data.projections);
  EXPECT_EQ(back.n_classes, 3u);
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    EXPECT_EQ(back.images[i].pixels, data.images[i].pixels);
    EXPECT_EQ(back.images[i].identity, data.images[i].identity);
    EXPECT_EQ(back.images[i].label, data.images[i].label);
    EXPECT_EQ(back.images[i].origin, data.images[i].origin);
  }
  std::filesystem::remove_all(dir);
}

TEST(ImageFiles, LoadRejectsOutOfRangePixels) {
  auto data = generate_identicon_dataset({}, 10, 2, 1);
  data.images[2].pixels[0] = 1.5;
  const auto dir = scratch_dir("range");
  write_images(dir / "bad", data);
  EXPECT_THROW(read_images(dir / "bad"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(ImageFiles, PgmStripHasExpectedSize) {
  const auto data = generate_identicon_dataset({}, 10, 2, 1);
  const auto dir = scratch_dir("pgm");
  write_pgm_strip(dir / "s.pgm", data.images, 4);
  EXPECT_EQ(std::filesystem::file_size(dir / "s.pgm"), std::string("P5\n64 16\n255\n").size() + 64u * 16u);
  std::filesystem::remove_all(dir);
}

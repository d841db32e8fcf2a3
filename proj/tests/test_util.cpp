#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "potionlab/util.hpp"

using namespace potionlab;

TEST(MixSeed, StreamsDifferAndRepeat) {
  EXPECT_EQ(mix_seed(3, 1), mix_seed(3, 1));
  EXPECT_NE(mix_seed(3, 1), mix_seed(3, 2));
  EXPECT_NE(mix_seed(3, 1), mix_seed(4, 1));
  Rng a = make_rng(9, 5), b = make_rng(9, 5);
  EXPECT_EQ(a(), b());
}

TEST(SampleIndices, DistinctSortedInRange) {
  Rng rng(1);
  auto v = sample_indices(rng, 50, 20);
  ASSERT_EQ(v.size(), 20u);
  EXPECT_TRUE(std::is_sorted(v.begin(), v.end()));
  EXPECT_EQ(std::set<std::size_t>(v.begin(), v.end()).size(), 20u);
  EXPECT_LT(v.back(), 50u);
  EXPECT_EQ(sample_indices(rng, 7, 7), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_THROW(sample_indices(rng, 3, 4), std::invalid_argument);
}

TEST(Checksum, KnownFnv1aValues) {
  Checksum empty;
  EXPECT_EQ(empty.hex(), "cbf29ce484222325");
  Checksum a;
  a.update(std::string_view("a"));
  EXPECT_EQ(a.hex(), "af63dc4c8601ec8c");
}

TEST(Blob, RoundTripAndSizeCheck) {
  const auto dir = std::filesystem::temp_directory_path() / "potionlab_test_util";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "v.f64").string();
  std::vector<double> v{0.0, -1.5, 1e-300, 3.141592653589793};
  write_blob<double>(path, v);
  EXPECT_EQ(read_blob<double>(path, v.size()), v);
  EXPECT_THROW(read_blob<double>(path, v.size() + 1), std::runtime_error);
  EXPECT_THROW(read_blob<double>(path, v.size() - 1), std::runtime_error);
  EXPECT_EQ(std::filesystem::file_size(path), v.size() * 8);
}

TEST(FormatNumber, ShortestRoundTrip) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(2.0), "2");
  const double x = 1.0 / 3.0;
  EXPECT_EQ(std::stod(format_number(x)), x);
}

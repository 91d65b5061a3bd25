#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gator/dataset.hpp"
#include "gator/error.hpp"

using namespace gator;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& bytes) {
  auto path = std::filesystem::temp_directory_path() / ("gator_test_" + name);
  std::ofstream(path, std::ios::binary) << bytes;
  return path;
}

// per-channel mean and population std of a split
std::pair<std::vector<double>, std::vector<double>> stats(const Dataset& d) {
  const std::size_t c = d.images.c(), hw = d.images.h() * d.images.w();
  std::vector<double> mean(c, 0.0), sd(c, 0.0);
  const double m = static_cast<double>(d.size() * hw);
  for (std::size_t n = 0; n < d.size(); ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t q = 0; q < hw; ++q) mean[ch] += d.images.data[(n * c + ch) * hw + q] / m;
  for (std::size_t n = 0; n < d.size(); ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t q = 0; q < hw; ++q) {
        const double v = d.images.data[(n * c + ch) * hw + q] - mean[ch];
        sd[ch] += v * v / m;
      }
  for (double& v : sd) v = std::sqrt(v);
  return {mean, sd};
}

}  // namespace

TEST_CASE("synthetic data is seeded") {
  const auto a = load_dataset("synthetic:classes=10,n=200,hw=8,seed=7");
  const auto b = load_dataset("synthetic:classes=10,n=200,hw=8,seed=7");
  const auto c = load_dataset("synthetic:classes=10,n=200,hw=8,seed=8");
  CHECK(a.train.images == b.train.images);
  CHECK(a.train.labels == b.train.labels);
  CHECK(a.eval.images == b.eval.images);
  CHECK(a.train.images != c.train.images);
  CHECK(a.train.size() == 200);
  CHECK(a.eval.size() == 50);
  CHECK(a.train.images.shape == Shape{200, 3, 8, 8});
  for (std::size_t l : a.train.labels) CHECK(l < 10);
  std::vector<std::size_t> per_class(10, 0);
  for (std::size_t l : a.train.labels) ++per_class[l];
  for (std::size_t k : per_class) CHECK(k == 20);
}

TEST_CASE("normalization uses the train split") {
  const auto d = load_dataset("synthetic:classes=4,n=300,hw=8,eval=100,seed=2,noise=0.5");
  auto [mean, sd] = stats(d.train);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    CHECK(std::abs(mean[ch]) <= 1e-6);
    CHECK(std::abs(sd[ch] - 1.0) <= 1e-6);
  }
  CHECK(d.eval.mean == d.train.mean);
  CHECK(d.eval.stddev == d.train.stddev);
}

TEST_CASE("dataset spec errors") {
  CHECK_THROWS_AS(load_dataset("synthetic:classes=1,n=10,hw=8"), InvalidInput);
  CHECK_THROWS_AS(load_dataset("synthetic:classes=3,n=10,hw=8,colour=red"), InvalidInput);
  CHECK_THROWS_AS(load_dataset("synthetic:classes=x"), InvalidInput);
  CHECK_THROWS_AS(load_dataset("imagenet"), InvalidInput);
  CHECK_THROWS_AS(load_dataset("idx:images=/nonexistent"), InvalidInput);
}

TEST_CASE("idx encode and decode") {
  IdxArray a;
  a.type = 0x08;
  a.dims = {2, 3};
  a.values = {0, 1, 2, 253, 254, 255};
  const std::string bytes = encode_idx(a);
  REQUIRE(bytes.size() == 4 + 8 + 6);
  CHECK(bytes.substr(0, 4) == std::string("\0\0\x08\x02", 4));
  CHECK(bytes.substr(4, 4) == std::string("\0\0\0\x02", 4));
  auto back = decode_idx(bytes);
  CHECK(back.dims == a.dims);
  CHECK(back.values == a.values);

  IdxArray f;
  f.type = 0x0E;
  f.dims = {2};
  f.values = {-1.5, 3.25};
  const std::string fb = encode_idx(f);
  CHECK(fb.size() == 4 + 4 + 16);
  CHECK(static_cast<unsigned char>(fb[8]) == 0xBF);  // big-endian sign/exponent byte of -1.5
  CHECK(decode_idx(fb).values == f.values);
}

TEST_CASE("idx errors name the offset") {
  auto msg = [](const std::string& bytes) {
    try {
      decode_idx(bytes);
    } catch (const InvalidInput& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(msg(std::string("\x01\0\x08\x01", 4)).find("offset 0") != std::string::npos);
  CHECK(msg(std::string("\0\0\x08\x01\0\0", 6)).find("offset 4") != std::string::npos);
  CHECK(msg(std::string("\0\0\x08\x01\0\0\0\x05\x01\x02", 10)).find("offset 8") !=
        std::string::npos);
  CHECK(msg(std::string("\0\0\x07\x01\0\0\0\x00", 8)).find("0x7") != std::string::npos);
}

TEST_CASE("idx dataset files") {
  IdxArray images;
  images.dims = {10, 4, 4};
  for (std::size_t i = 0; i < 160; ++i) images.values.push_back(static_cast<double>((i * 37) % 256));
  IdxArray labels;
  labels.dims = {10};
  labels.values = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
  const auto ip = temp_file("images.idx", encode_idx(images));
  const auto lp = temp_file("labels.idx", encode_idx(labels));
  auto d = load_dataset("idx:images=" + ip.string() + ",labels=" + lp.string() + ",eval_fraction=0.2");
  CHECK(d.train.size() == 8);
  CHECK(d.eval.size() == 2);
  CHECK(d.train.classes == 3);
  CHECK(d.train.images.shape == Shape{8, 1, 4, 4});
  CHECK(d.eval.labels == std::vector<std::size_t>{2, 0});

  labels.values[3] = 300;
  labels.type = 0x0E;
  const auto bad = temp_file("labels_bad.idx", encode_idx(labels));
  CHECK_THROWS_AS(load_dataset("idx:images=" + ip.string() + ",labels=" + bad.string()),
                  InvalidInput);
  labels.dims = {9};
  labels.values.pop_back();
  labels.type = 0x08;
  labels.values[3] = 0;
  const auto short_labels = temp_file("labels_short.idx", encode_idx(labels));
  CHECK_THROWS_AS(load_dataset("idx:images=" + ip.string() + ",labels=" + short_labels.string()),
                  InvalidInput);
}

TEST_CASE("epoch batches and augmentation") {
  std::mt19937_64 rng(1);
  auto batches = epoch_batches(10, 4, rng);
  CHECK(batches.size() == 2);  // trailing partial batch dropped
  std::vector<std::size_t> seen;
  for (const auto& b : batches) seen.insert(seen.end(), b.begin(), b.end());
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
  CHECK(epoch_batches(3, 8, rng).size() == 1);

  const auto d = load_dataset("synthetic:classes=2,n=8,hw=8,eval=2");
  const std::vector<std::size_t> idx{0, 1, 2};
  CHECK(gather_batch(d.train, idx, nullptr).shape == Shape{3, 3, 8, 8});
  std::mt19937_64 aug(3);
  Tensor a = gather_batch(d.train, idx, &aug);
  CHECK(a.shape == Shape{3, 3, 8, 8});
  CHECK(a != gather_batch(d.train, idx, nullptr));
  CHECK(gather_labels(d.train, idx) ==
        std::vector<std::size_t>{d.train.labels[0], d.train.labels[1], d.train.labels[2]});
}

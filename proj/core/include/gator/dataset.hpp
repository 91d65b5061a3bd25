#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "gator/tensor.hpp"

namespace gator {

// Labelled images, NCHW, normalized per channel with the train split's
// statistics (mean and population standard deviation).
struct Dataset {
  Tensor images;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.c(); }
};

struct DataSplits {
  Dataset train;
  Dataset eval;
};

// Data sources:
//   synthetic:classes=10,n=4096,hw=16[,eval=N][,seed=S][,noise=X]
//   idx:images=PATH,labels=PATH[,eval_images=PATH,eval_labels=PATH]
//       [,eval_fraction=F]
// Without eval files the last eval_fraction (default 0.2) of the samples
// form the eval split.
DataSplits load_dataset(std::string_view spec);

// Seeded class-conditional blobs: each class has its own colour and blob
// width; samples jitter amplitude and centre and add Gaussian pixel noise.
// Returns raw (unnormalized) images.
Dataset synthetic_images(std::size_t classes, std::size_t n, std::size_t hw,
                         double noise, std::mt19937_64& rng);

// Per-channel statistics of `train`, applied to both splits exactly once.
void normalize(DataSplits& splits);

// IDX files: 4-byte magic {0, 0, type, rank}, rank big-endian uint32 dims,
// then the values in big-endian order. Supported types: 0x08 unsigned byte
// and 0x0E float64. Image files have rank 3 (N, H, W; one channel) or rank
// 4 (N, C, H, W); unsigned bytes are scaled by 1/255. Label files have rank
// 1 and type 0x08.
struct IdxArray {
  std::uint8_t type = 0x08;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

IdxArray decode_idx(const std::string& bytes);
std::string encode_idx(const IdxArray& array);
IdxArray load_idx(const std::string& path);

// Shuffled index batches for one epoch; a trailing partial batch is dropped
// unless it is the only one.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                    std::mt19937_64& rng);

// Copies the selected samples. With `augment`, each sample is zero-padded
// by 4 pixels, randomly cropped back to its size, and flipped horizontally
// with probability 1/2.
Tensor gather_batch(const Dataset& data, const std::vector<std::size_t>& indices,
                    std::mt19937_64* augment);

std::vector<std::size_t> gather_labels(const Dataset& data,
                                       const std::vector<std::size_t>& indices);

}  // namespace gator

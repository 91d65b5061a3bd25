#include "gator/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "gator/error.hpp"

namespace gator {

namespace {

constexpr std::size_t kPad = 4;

std::map<std::string, std::string> parse_options(std::string_view text, std::string_view what) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view item = text.substr(pos, end - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw InvalidInput(std::string(what) + ": expected key=value, got '" + std::string(item) + "'");
    }
    out[std::string(item.substr(0, eq))] = std::string(item.substr(eq + 1));
    pos = end + 1;
  }
  return out;
}

template <typename T>
T number(const std::map<std::string, std::string>& opts, const std::string& key, T fallback,
         std::string_view what) {
  auto it = opts.find(key);
  if (it == opts.end()) return fallback;
  T value{};
  const char* first = it->second.data();
  const char* last = first + it->second.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw InvalidInput(std::string(what) + ": bad value for '" + key + "': '" + it->second + "'");
  }
  return value;
}

void check_known(const std::map<std::string, std::string>& opts,
                 std::initializer_list<std::string_view> known, std::string_view what) {
  for (const auto& [k, v] : opts) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw InvalidInput(std::string(what) + ": unknown option '" + k + "'");
    }
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + 3]));
}

void write_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

Dataset subset(const Dataset& all, std::size_t first, std::size_t last) {
  Dataset d;
  d.classes = all.classes;
  const std::size_t per = all.images.c() * all.images.h() * all.images.w();
  d.images = Tensor({last - first, all.images.c(), all.images.h(), all.images.w()});
  std::copy(all.images.data.begin() + static_cast<long>(first * per),
            all.images.data.begin() + static_cast<long>(last * per), d.images.data.begin());
  d.labels.assign(all.labels.begin() + static_cast<long>(first),
                  all.labels.begin() + static_cast<long>(last));
  return d;
}

Dataset images_from_idx(const IdxArray& images, const IdxArray& labels, const std::string& name) {
  if (labels.dims.size() != 1 || labels.type != 0x08) {
    throw InvalidInput(name + ": label file must be a rank-1 unsigned byte array");
  }
  Shape shape;
  if (images.dims.size() == 3) {
    shape = {images.dims[0], 1, images.dims[1], images.dims[2]};
  } else if (images.dims.size() == 4) {
    shape = {images.dims[0], images.dims[1], images.dims[2], images.dims[3]};
  } else {
    throw InvalidInput(name + ": image file must have rank 3 or 4");
  }
  if (labels.dims[0] != images.dims[0]) {
    throw InvalidInput(name + ": " + std::to_string(images.dims[0]) + " images but " +
                       std::to_string(labels.dims[0]) + " labels");
  }
  Dataset d;
  d.images = Tensor(shape, images.values);
  if (images.type == 0x08) {
    for (double& v : d.images.data) v /= 255.0;
  }
  std::size_t max_label = 0;
  for (double v : labels.values) {
    d.labels.push_back(static_cast<std::size_t>(v));
    max_label = std::max(max_label, d.labels.back());
  }
  d.classes = max_label + 1;
  return d;
}

void check_labels(const Dataset& d, std::size_t classes, const char* split) {
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (d.labels[i] >= classes) {
      throw InvalidInput(std::string(split) + " label " + std::to_string(d.labels[i]) +
                         " at sample " + std::to_string(i) + " is out of range [0, " +
                         std::to_string(classes) + ")");
    }
  }
}

}  // namespace

Dataset synthetic_images(std::size_t classes, std::size_t n, std::size_t hw, double noise,
                         std::mt19937_64& rng) {
  Dataset d;
  d.classes = classes;
  d.images = Tensor({n, 3, hw, hw});
  d.labels.resize(n);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  std::normal_distribution<double> pixel(0.0, noise);
  const double centre = (static_cast<double>(hw) - 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % classes;
    d.labels[i] = k;
    // colours spread around the hue circle, widths alternate narrow / wide
    const double hue = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
    const double colour[3] = {std::cos(hue), std::cos(hue - 2.0 * std::numbers::pi / 3.0),
                              std::cos(hue + 2.0 * std::numbers::pi / 3.0)};
    const double width = static_cast<double>(hw) * (k % 2 == 0 ? 0.12 : 0.25);
    const double amp = 1.0 + 0.3 * jitter(rng);
    const double cy = centre + jitter(rng), cx = centre + jitter(rng);
    for (std::size_t y = 0; y < hw; ++y)
      for (std::size_t x = 0; x < hw; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double blob = amp * std::exp(-(dy * dy + dx * dx) / (2.0 * width * width));
        for (std::size_t c = 0; c < 3; ++c) d.images.at(i, c, y, x) = colour[c] * blob + pixel(rng);
      }
  }
  // interleaved labels; shuffle so splits are not class-ordered
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  Dataset shuffled;
  shuffled.classes = classes;
  shuffled.images = gather_batch(d, order, nullptr);
  shuffled.labels = gather_labels(d, order);
  return shuffled;
}

void normalize(DataSplits& splits) {
  const Tensor& t = splits.train.images;
  const std::size_t c = t.c(), hw = t.h() * t.w(), n = t.n();
  if (n == 0) throw InvalidInput("dataset: train split is empty");
  std::vector<double> mean(c, 0.0), stddev(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t q = 0; q < hw; ++q) sum += t.data[(b * c + ch) * hw + q];
    mean[ch] = sum / static_cast<double>(n * hw);
    double sq = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t q = 0; q < hw; ++q) {
        const double d = t.data[(b * c + ch) * hw + q] - mean[ch];
        sq += d * d;
      }
    stddev[ch] = std::sqrt(sq / static_cast<double>(n * hw));
    if (!(stddev[ch] > 0.0)) stddev[ch] = 1.0;
  }
  for (Dataset* d : {&splits.train, &splits.eval}) {
    Tensor& x = d->images;
    if (x.size() != 0 && x.c() != c) {
      throw InvalidInput("dataset: eval split has " + std::to_string(x.c()) +
                         " channels, train split " + std::to_string(c));
    }
    const std::size_t m = x.size() == 0 ? 0 : x.n(), xhw = x.size() == 0 ? 0 : x.h() * x.w();
    for (std::size_t b = 0; b < m; ++b)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t q = 0; q < xhw; ++q) {
          double& v = x.data[(b * c + ch) * xhw + q];
          v = (v - mean[ch]) / stddev[ch];
        }
    d->mean = mean;
    d->stddev = stddev;
  }
}

DataSplits load_dataset(std::string_view spec) {
  DataSplits splits;
  if (spec.starts_with("synthetic:")) {
    const auto opts = parse_options(spec.substr(10), "synthetic dataset");
    check_known(opts, {"classes", "n", "hw", "eval", "seed", "noise"}, "synthetic dataset");
    const auto classes = number<std::size_t>(opts, "classes", 10, "synthetic dataset");
    const auto n = number<std::size_t>(opts, "n", 4096, "synthetic dataset");
    const auto hw = number<std::size_t>(opts, "hw", 16, "synthetic dataset");
    const auto n_eval = number<std::size_t>(opts, "eval", n / 4, "synthetic dataset");
    const auto seed = number<std::uint64_t>(opts, "seed", 7, "synthetic dataset");
    const auto noise = number<double>(opts, "noise", 0.3, "synthetic dataset");
    if (classes < 2 || n < classes || hw < 4 || n_eval == 0) {
      throw InvalidInput("synthetic dataset: need classes >= 2, n >= classes, hw >= 4, eval >= 1");
    }
    std::mt19937_64 train_rng(seed), eval_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    splits.train = synthetic_images(classes, n, hw, noise, train_rng);
    splits.eval = synthetic_images(classes, n_eval, hw, noise, eval_rng);
  } else if (spec.starts_with("idx:")) {
    const auto opts = parse_options(spec.substr(4), "idx dataset");
    check_known(opts, {"images", "labels", "eval_images", "eval_labels", "eval_fraction"},
                "idx dataset");
    if (!opts.count("images") || !opts.count("labels")) {
      throw InvalidInput("idx dataset: 'images' and 'labels' are required");
    }
    Dataset all = images_from_idx(load_idx(opts.at("images")), load_idx(opts.at("labels")),
                                  opts.at("images"));
    if (opts.count("eval_images") != opts.count("eval_labels")) {
      throw InvalidInput("idx dataset: give both eval_images and eval_labels, or neither");
    }
    if (opts.count("eval_images")) {
      splits.train = std::move(all);
      splits.eval = images_from_idx(load_idx(opts.at("eval_images")),
                                    load_idx(opts.at("eval_labels")), opts.at("eval_images"));
      splits.train.classes = splits.eval.classes =
          std::max(splits.train.classes, splits.eval.classes);
    } else {
      const double fraction = number<double>(opts, "eval_fraction", 0.2, "idx dataset");
      if (!(fraction > 0.0 && fraction < 1.0)) {
        throw InvalidInput("idx dataset: eval_fraction must lie in (0, 1)");
      }
      const std::size_t n = all.size();
      const auto n_eval = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
      if (n_eval == 0 || n_eval >= n) throw InvalidInput("idx dataset: too few samples to split");
      splits.train = subset(all, 0, n - n_eval);
      splits.eval = subset(all, n - n_eval, n);
    }
  } else {
    throw InvalidInput("unknown dataset '" + std::string(spec) +
                       "' (expected synthetic:... or idx:...)");
  }
  check_labels(splits.train, splits.train.classes, "train");
  check_labels(splits.eval, splits.train.classes, "eval");
  splits.eval.classes = splits.train.classes;
  normalize(splits);
  return splits;
}

IdxArray decode_idx(const std::string& bytes) {
  if (bytes.size() < 4) throw InvalidInput("idx: truncated magic number at offset 0");
  if (bytes[0] != 0 || bytes[1] != 0) {
    throw InvalidInput("idx: bad magic number at offset 0 (first two bytes must be zero)");
  }
  IdxArray out;
  out.type = static_cast<std::uint8_t>(bytes[2]);
  if (out.type != 0x08 && out.type != 0x0E) {
    throw InvalidInput("idx: unsupported element type 0x" +
                       std::to_string(static_cast<int>(out.type)) + " at offset 2");
  }
  const std::size_t rank = static_cast<unsigned char>(bytes[3]);
  if (rank == 0) throw InvalidInput("idx: rank 0 at offset 3");
  std::size_t offset = 4;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i, offset += 4) {
    if (offset + 4 > bytes.size()) {
      throw InvalidInput("idx: truncated dimension " + std::to_string(i) + " at offset " +
                         std::to_string(offset));
    }
    out.dims.push_back(read_be32(bytes, offset));
    count *= out.dims.back();
  }
  const std::size_t width = out.type == 0x08 ? 1 : 8;
  if (bytes.size() - offset < count * width) {
    throw InvalidInput("idx: truncated data at offset " + std::to_string(offset) + ": need " +
                       std::to_string(count * width) + " bytes, have " +
                       std::to_string(bytes.size() - offset));
  }
  if (bytes.size() - offset > count * width) {
    throw InvalidInput("idx: trailing bytes after offset " + std::to_string(offset + count * width));
  }
  out.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (width == 1) {
      out.values[i] = static_cast<unsigned char>(bytes[offset + i]);
    } else {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < 8; ++b) {
        bits = (bits << 8) | static_cast<unsigned char>(bytes[offset + 8 * i + b]);
      }
      out.values[i] = std::bit_cast<double>(bits);
    }
  }
  return out;
}

std::string encode_idx(const IdxArray& array) {
  std::string out{'\0', '\0', static_cast<char>(array.type), static_cast<char>(array.dims.size())};
  for (std::uint32_t d : array.dims) write_be32(out, d);
  for (double v : array.values) {
    if (array.type == 0x08) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    } else {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<char>((bits >> shift) & 0xFF));
    }
  }
  return out;
}

IdxArray load_idx(const std::string& path) {
  try {
    return decode_idx(read_file(path));
  } catch (const InvalidInput& e) {
    throw InvalidInput(path + ": " + e.what());
  }
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                    std::mt19937_64& rng) {
  if (batch == 0) throw InvalidInput("batch size must be at least 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    const std::size_t end = std::min(n, i + batch);
    if (end - i < batch && !out.empty()) break;
    out.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
  }
  return out;
}

Tensor gather_batch(const Dataset& data, const std::vector<std::size_t>& indices,
                    std::mt19937_64* augment) {
  const std::size_t c = data.images.c(), h = data.images.h(), w = data.images.w();
  Tensor out({indices.size(), c, h, w});
  std::uniform_int_distribution<std::size_t> shift(0, 2 * kPad);
  std::bernoulli_distribution flip(0.5);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t src = indices[b];
    if (src >= data.size()) throw InvalidInput("sample index out of range");
    if (!augment) {
      std::copy_n(data.images.data.begin() + static_cast<long>(src * c * h * w), c * h * w,
                  out.data.begin() + static_cast<long>(b * c * h * w));
      continue;
    }
    // offset into the padded image: crop origin in [0, 2 * pad]
    const long oy = static_cast<long>(shift(*augment)) - static_cast<long>(kPad);
    const long ox = static_cast<long>(shift(*augment)) - static_cast<long>(kPad);
    const bool mirrored = flip(*augment);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const long sy = static_cast<long>(y) + oy;
          const long sx0 = static_cast<long>(x) + ox;
          const long sx = mirrored ? static_cast<long>(w) - 1 - sx0 : sx0;
          double v = 0.0;
          if (sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w)) {
            v = data.images.at(src, ch, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
          }
          out.at(b, ch, y, x) = v;
        }
  }
  return out;
}

std::vector<std::size_t> gather_labels(const Dataset& data,
                                       const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.labels.at(i));
  return out;
}

}  // namespace gator

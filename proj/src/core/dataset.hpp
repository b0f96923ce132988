#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace st {

struct Dataset {
  Tensor inputs;            // (n, ...), values in [0,1]
  std::vector<int> labels;  // n entries, < classes
  std::string name;
  std::string split;
  int classes = 0;

  int size() const { return inputs.empty() ? 0 : inputs.dim(0); }
  void validate() const;
};

// MNIST-style IDX pair: big-endian headers, magic 0x00000803 (images) /
// 0x00000801 (labels), pixel bytes scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path);

// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072 pixel
// bytes in channel-planar order.
Dataset load_cifar10_bin(const std::vector<std::string>& paths);

// Gaussian clusters (sigma 0.04) at the vertices of a regular simplex with
// pairwise center distance `separation`, clipped into [0,1]. Labels are
// assigned round-robin. Requires dim >= classes.
Dataset synth_blobs(uint64_t seed, int n, int classes, int dim, float separation);

// Deterministic 28x28 digit glyphs with seeded shift/intensity jitter and
// pixel noise, quantized to bytes so values match an IDX round trip. The
// desk-scale stand-in where real handwritten digits are unavailable.
Dataset synth_digits(uint64_t seed, int n);

Dataset subset(const Dataset& data, int start, int count);

}  // namespace st

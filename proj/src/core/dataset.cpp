#include "core/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace st {

void Dataset::validate() const {
  if (size() != static_cast<int>(labels.size()))
    throw Error::data("dataset '" + name + "': " + std::to_string(size()) + " inputs vs " +
                      std::to_string(labels.size()) + " labels");
  for (int l : labels)
    if (l < 0 || l >= classes)
      throw Error::data("dataset '" + name + "': label " + std::to_string(l) +
                        " out of range for " + std::to_string(classes) + " classes");
  if (!inputs.all_finite()) throw Error::data("dataset '" + name + "': non-finite input values");
}

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error::data("cannot open '" + path + "'");
  f.seekg(0, std::ios::end);
  const std::streamoff len = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(len));
  if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);
  if (!f) throw Error::data("failed reading '" + path + "'");
  return bytes;
}

uint32_t be32(const std::vector<uint8_t>& b, size_t off) {
  return (static_cast<uint32_t>(b[off]) << 24) | (static_cast<uint32_t>(b[off + 1]) << 16) |
         (static_cast<uint32_t>(b[off + 2]) << 8) | static_cast<uint32_t>(b[off + 3]);
}

void put_be32(std::ofstream& f, uint32_t v) {
  const uint8_t b[4] = {static_cast<uint8_t>(v >> 24), static_cast<uint8_t>(v >> 16),
                        static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const std::vector<uint8_t> img = read_file(images_path);
  const std::vector<uint8_t> lab = read_file(labels_path);

  if (img.size() < 16) throw Error::data("IDX images '" + images_path + "': header truncated");
  if (be32(img, 0) != 0x00000803u)
    throw Error::data("IDX images '" + images_path + "': bad magic");
  const uint32_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  // Validate declared sizes against the actual file length before any
  // payload-sized allocation.
  const uint64_t expect_img = 16ull + static_cast<uint64_t>(n) * rows * cols;
  if (img.size() != expect_img)
    throw Error::data("IDX images '" + images_path + "': expected " +
                      std::to_string(expect_img) + " bytes, got " + std::to_string(img.size()));

  if (lab.size() < 8) throw Error::data("IDX labels '" + labels_path + "': header truncated");
  if (be32(lab, 0) != 0x00000801u)
    throw Error::data("IDX labels '" + labels_path + "': bad magic");
  const uint32_t nl = be32(lab, 4);
  const uint64_t expect_lab = 8ull + nl;
  if (lab.size() != expect_lab)
    throw Error::data("IDX labels '" + labels_path + "': expected " +
                      std::to_string(expect_lab) + " bytes, got " + std::to_string(lab.size()));
  if (n != nl)
    throw Error::data("IDX pair: " + std::to_string(n) + " images vs " + std::to_string(nl) +
                      " labels");

  Dataset d;
  d.name = "idx";
  d.inputs = Tensor(Shape{static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
  const int64_t count = d.inputs.size();
  for (int64_t i = 0; i < count; ++i)
    d.inputs[i] = static_cast<float>(img[16 + static_cast<size_t>(i)]) / 255.0f;
  d.labels.resize(n);
  int max_label = 0;
  for (uint32_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.classes = std::max(max_label + 1, 2);
  d.validate();
  return d;
}

void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path) {
  if (data.inputs.rank() != 4 || data.inputs.dim(1) != 1)
    throw Error::data("write_idx: expects (n,1,rows,cols) inputs");
  const int n = data.size(), rows = data.inputs.dim(2), cols = data.inputs.dim(3);
  std::ofstream fi(images_path, std::ios::binary);
  if (!fi) throw Error::data("cannot write '" + images_path + "'");
  put_be32(fi, 0x00000803u);
  put_be32(fi, static_cast<uint32_t>(n));
  put_be32(fi, static_cast<uint32_t>(rows));
  put_be32(fi, static_cast<uint32_t>(cols));
  for (int64_t i = 0; i < data.inputs.size(); ++i) {
    const float v = std::min(std::max(data.inputs[i], 0.0f), 1.0f);
    const uint8_t b = static_cast<uint8_t>(std::lround(v * 255.0f));
    fi.write(reinterpret_cast<const char*>(&b), 1);
  }
  std::ofstream fl(labels_path, std::ios::binary);
  if (!fl) throw Error::data("cannot write '" + labels_path + "'");
  put_be32(fl, 0x00000801u);
  put_be32(fl, static_cast<uint32_t>(n));
  for (int l : data.labels) {
    const uint8_t b = static_cast<uint8_t>(l);
    fl.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!fi || !fl) throw Error::data("write_idx: I/O failure");
}

Dataset load_cifar10_bin(const std::vector<std::string>& paths) {
  if (paths.empty()) throw Error::usage("cifar10: no batch files given");
  constexpr int kRecord = 3073;
  std::vector<uint8_t> all;
  for (const auto& path : paths) {
    std::vector<uint8_t> bytes = read_file(path);
    if (bytes.size() % kRecord != 0)
      throw Error::data("cifar10 '" + path + "': length " + std::to_string(bytes.size()) +
                        " is not a multiple of 3073");
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  const int n = static_cast<int>(all.size() / kRecord);
  Dataset d;
  d.name = "cifar10";
  d.classes = 10;
  d.inputs = Tensor(Shape{n, 3, 32, 32});
  d.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const uint8_t* rec = all.data() + static_cast<int64_t>(i) * kRecord;
    if (rec[0] > 9)
      throw Error::data("cifar10: record " + std::to_string(i) + " has corrupt label " +
                        std::to_string(rec[0]));
    d.labels[static_cast<size_t>(i)] = rec[0];
    float* dst = d.inputs.data() + static_cast<int64_t>(i) * 3072;
    for (int j = 0; j < 3072; ++j) dst[j] = static_cast<float>(rec[1 + j]) / 255.0f;
  }
  d.validate();
  return d;
}

Dataset synth_blobs(uint64_t seed, int n, int classes, int dim, float separation) {
  if (classes < 2) throw Error::usage("synth_blobs: classes must be >= 2");
  if (separation <= 0.0f) throw Error::usage("synth_blobs: separation must be > 0");
  if (n < 1) throw Error::usage("synth_blobs: n must be >= 1");
  if (dim < classes)
    throw Error::usage("synth_blobs: dim must be >= classes for equidistant centers");

  constexpr float kSigma = 0.04f;
  // Regular simplex: centered standard basis vectors have pairwise distance
  // sqrt(2); scale so centers sit `separation` apart around 0.5.
  const float s = separation / std::sqrt(2.0f);
  std::vector<std::vector<float>> centers(static_cast<size_t>(classes),
                                          std::vector<float>(static_cast<size_t>(dim), 0.5f));
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < classes; ++k) {
      const float e = (k == c ? 1.0f : 0.0f) - 1.0f / static_cast<float>(classes);
      centers[static_cast<size_t>(c)][static_cast<size_t>(k)] += s * e;
    }
  }

  Dataset d;
  d.name = "blobs";
  d.classes = classes;
  d.inputs = Tensor(Shape{n, dim});
  d.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int label = i % classes;
    d.labels[static_cast<size_t>(i)] = label;
    Rng rng(derive_stream(seed, static_cast<uint64_t>(i)));
    float* row = d.inputs.data() + static_cast<int64_t>(i) * dim;
    for (int k = 0; k < dim; ++k) {
      const float v = centers[static_cast<size_t>(label)][static_cast<size_t>(k)] +
                      kSigma * rng.gaussian();
      row[k] = std::min(std::max(v, 0.0f), 1.0f);
    }
  }
  d.validate();
  return d;
}

namespace {

// 5x7 digit glyphs.
const char* const kGlyphs[10][7] = {
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},  // 0
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},  // 1
    {"01110", "10001", "00001", "00110", "01000", "10000", "11111"},  // 2
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},  // 3
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},  // 4
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},  // 5
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},  // 6
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},  // 7
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},  // 8
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},  // 9
};

}  // namespace

Dataset synth_digits(uint64_t seed, int n) {
  if (n < 1) throw Error::usage("synth_digits: n must be >= 1");
  constexpr int kSide = 28, kScale = 3;
  constexpr int kGlyphH = 7 * kScale, kGlyphW = 5 * kScale;  // 21 x 15
  Dataset d;
  d.name = "digits";
  d.classes = 10;
  d.inputs = Tensor(Shape{n, 1, kSide, kSide});
  d.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_stream(seed, static_cast<uint64_t>(i)));
    const int digit = static_cast<int>(rng.below(10));
    d.labels[static_cast<size_t>(i)] = digit;
    const int dy = static_cast<int>(rng.below(7)) - 3;
    const int dx = static_cast<int>(rng.below(7)) - 3;
    const float intensity = rng.uniform(0.75f, 1.0f);
    const int top = (kSide - kGlyphH) / 2 + dy;
    const int left = (kSide - kGlyphW) / 2 + dx;
    float* img = d.inputs.data() + static_cast<int64_t>(i) * kSide * kSide;
    for (int r = 0; r < kSide; ++r) {
      for (int c = 0; c < kSide; ++c) {
        float v = 0.0f;
        const int gr = r - top, gc = c - left;
        if (gr >= 0 && gr < kGlyphH && gc >= 0 && gc < kGlyphW) {
          if (kGlyphs[digit][gr / kScale][gc / kScale] == '1') v = intensity;
        }
        v += 0.06f * rng.gaussian();
        v = std::min(std::max(v, 0.0f), 1.0f);
        // byte quantization, so the dataset equals its own IDX round trip
        img[r * kSide + c] = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
      }
    }
  }
  d.validate();
  return d;
}

Dataset subset(const Dataset& data, int start, int count) {
  if (start < 0 || count < 1 || start + count > data.size())
    throw Error::usage("subset: range [" + std::to_string(start) + "," +
                       std::to_string(start + count) + ") out of bounds for " +
                       std::to_string(data.size()));
  Dataset d;
  d.name = data.name;
  d.split = data.split;
  d.classes = data.classes;
  const int64_t per = data.inputs.size() / data.size();
  Shape s = data.inputs.shape();
  s[0] = count;
  std::vector<float> vals(data.inputs.data() + start * per,
                          data.inputs.data() + (start + count) * per);
  d.inputs = Tensor(std::move(s), std::move(vals));
  d.labels.assign(data.labels.begin() + start, data.labels.begin() + start + count);
  return d;
}

}  // namespace st

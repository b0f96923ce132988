#include "core/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "core/error.hpp"

namespace st {

using nlohmann::json;

bool Checkpoint::operator==(const Checkpoint& other) const {
  if (version != other.version || descriptor != other.descriptor || trailer != other.trailer)
    return false;
  if (tensors.size() != other.tensors.size()) return false;
  auto it = other.tensors.begin();
  for (const auto& [name, t] : tensors) {
    if (it->first != name || !it->second.bit_equal(t)) return false;
    ++it;
  }
  return true;
}

namespace {

void put_u32(std::ofstream& f, uint32_t v) {
  const uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                        static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

void put_str(std::ofstream& f, const std::string& s) {
  put_u32(f, static_cast<uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::string path, std::vector<uint8_t> bytes)
      : path_(std::move(path)), bytes_(std::move(bytes)) {}

  size_t remaining() const { return bytes_.size() - pos_; }

  // Bounds are validated before any allocation sized from header fields.
  void need(uint64_t n, const char* what) const {
    if (n > remaining())
      throw Error::data("checkpoint '" + path_ + "': truncated " + what + " (need " +
                        std::to_string(n) + " bytes, " + std::to_string(remaining()) +
                        " remain)");
  }

  const uint8_t* raw(uint64_t n, const char* what) {
    need(n, what);
    const uint8_t* p = bytes_.data() + pos_;
    pos_ += static_cast<size_t>(n);
    return p;
  }

  uint32_t u32(const char* what) {
    const uint8_t* p = raw(4, what);
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }

  std::string str(const char* what) {
    const uint32_t len = u32(what);
    const uint8_t* p = raw(len, what);
    return std::string(reinterpret_cast<const char*>(p), len);
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<uint8_t> bytes_;
  size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error::data("cannot write '" + path + "'");
  f.write("STCK", 4);
  put_u32(f, cp.version);
  put_str(f, cp.descriptor);
  put_u32(f, static_cast<uint32_t>(cp.tensors.size()));
  for (const auto& [name, t] : cp.tensors) {
    put_str(f, name);
    put_u32(f, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(f, static_cast<uint32_t>(t.dim(i)));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size()) * 4);
  }
  put_str(f, cp.trailer);
  if (!f) throw Error::data("I/O failure writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error::data("cannot open '" + path + "'");
  f.seekg(0, std::ios::end);
  const std::streamoff len = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(len));
  if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);
  if (!f) throw Error::data("failed reading '" + path + "'");

  Reader r(path, std::move(bytes));
  const uint8_t* magic = r.raw(4, "magic");
  if (std::memcmp(magic, "STCK", 4) != 0)
    throw Error::data("checkpoint '" + path + "': bad magic");

  Checkpoint cp;
  cp.version = r.u32("version");
  if (cp.version != kCheckpointVersion)
    throw Error::data("checkpoint '" + path + "': version " + std::to_string(cp.version) +
                      " not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  cp.descriptor = r.str("descriptor");
  const uint32_t count = r.u32("tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str("tensor name");
    const uint32_t ndim = r.u32("tensor rank");
    r.need(static_cast<uint64_t>(ndim) * 4, "tensor dims");
    Shape shape(ndim);
    uint64_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      const uint32_t dim = r.u32("tensor dim");
      if (dim == 0 || dim > (1u << 30))
        throw Error::data("checkpoint '" + path + "': tensor '" + name + "' has corrupt dim " +
                          std::to_string(dim));
      shape[d] = static_cast<int>(dim);
      n *= dim;
    }
    const uint8_t* payload = r.raw(n * 4, "tensor payload");
    std::vector<float> data(static_cast<size_t>(n));
    std::memcpy(data.data(), payload, static_cast<size_t>(n) * 4);
    cp.tensors.emplace(name, Tensor(std::move(shape), std::move(data)));
  }
  cp.trailer = r.str("trailer");
  return cp;
}

Checkpoint make_model_checkpoint(const ModelSpec& spec, const Parameters& params,
                                 const std::string& config_echo, int epoch, float clean_acc,
                                 float robust_acc, bool is_best) {
  Checkpoint cp;
  cp.descriptor = spec.to_json();
  for (const auto& [name, t] : params) cp.tensors.emplace(name, t);
  json trailer;
  trailer["config"] = config_echo;
  trailer["epoch"] = epoch;
  trailer["clean_acc"] = clean_acc;
  trailer["robust_acc"] = robust_acc;
  trailer["is_best"] = is_best;
  cp.trailer = trailer.dump();
  return cp;
}

ModelSpec checkpoint_spec(const Checkpoint& cp) { return ModelSpec::from_json(cp.descriptor); }

Parameters checkpoint_params(const Checkpoint& cp) {
  Parameters p;
  for (const auto& [name, t] : cp.tensors) {
    if (!t.all_finite())
      throw Error::data("checkpoint tensor '" + name + "' contains non-finite values");
    p.emplace(name, t);
  }
  return p;
}

}  // namespace st

#include "skupatch/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "skupatch/errors.hpp"

namespace skupatch {

namespace {

constexpr char kMagic[] = "SKUP1";
constexpr std::size_t kMagicLen = 5;

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }
  void array(const NamedArray& a) {
    u32(static_cast<std::uint32_t>(a.name.size()));
    bytes(a.name);
    u32(static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) u32(static_cast<std::uint32_t>(d));
    for (float f : a.values) u32(std::bit_cast<std::uint32_t>(f));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}

  void need(std::size_t n) const {
    if (pos_ + n > end_) throw InputError("checkpoint truncated");
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  NamedArray array() {
    NamedArray a;
    a.name = bytes(u32());
    const std::uint32_t rank = u32();
    if (rank > 8) throw InputError("checkpoint tensor rank too large");
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      a.shape.push_back(u32());
      n *= a.shape.back();
    }
    need(n * 4);
    a.values.resize(n);
    for (auto& f : a.values) f = std::bit_cast<float>(u32());
    return a;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, data, static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

NamedArray to_array(const std::string& name, const Shape& shape, std::span<const float> values) {
  return {name, shape, std::vector<float>(values.begin(), values.end())};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  Writer w;
  w.bytes(std::string(kMagic, kMagicLen));
  const std::string cfg = serialize(data.config);
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  w.u32(static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& t : data.tensors) w.array(t);
  w.u8(data.optimizer ? 1 : 0);
  if (data.optimizer) {
    w.u64(data.optimizer->steps);
    w.u32(static_cast<std::uint32_t>(data.optimizer->first.size()));
    for (const auto& t : data.optimizer->first) w.array(t);
    for (const auto& t : data.optimizer->second) w.array(t);
  }
  w.u32(crc_of(w.out.data(), w.out.size()));
  return std::move(w.out);
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagicLen + 4 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw InputError("not a checkpoint (bad magic)");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + static_cast<std::size_t>(i)]) << (8 * i);
  if (crc_of(bytes.data(), body) != stored) throw InputError("checkpoint CRC mismatch (file corrupted)");

  Reader r(bytes, body);
  r.bytes(kMagicLen);
  CheckpointData data;
  try {
    data.config = parse_model_config(r.bytes(r.u32()));
  } catch (const ConfigError& e) {
    throw InputError(std::string("checkpoint config block: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) data.tensors.push_back(r.array());
  const std::uint8_t has_opt = r.u8();
  if (has_opt > 1) throw InputError("checkpoint optimizer flag is invalid");
  if (has_opt) {
    OptimizerSnapshot s;
    s.steps = r.u64();
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) s.first.push_back(r.array());
    for (std::uint32_t i = 0; i < n; ++i) s.second.push_back(r.array());
    data.optimizer = std::move(s);
  }
  if (r.pos() != body) throw InputError("checkpoint has trailing bytes");
  return data;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  const auto bytes = encode_checkpoint(data);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

CheckpointData snapshot(SkuPatchModel<float>& model, const AdamW<float>* optimizer) {
  CheckpointData data;
  data.config = model.config();
  model.visit([&](const std::string& name, Tensor<float>& t) { data.tensors.push_back(to_array(name, t.shape(), t.data())); });
  if (optimizer) {
    OptimizerSnapshot s;
    s.steps = optimizer->steps();
    const auto& params = optimizer->params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      s.first.push_back(to_array("m/" + params[i].first, params[i].second.shape(), optimizer->first_moments()[i]));
      s.second.push_back(to_array("v/" + params[i].first, params[i].second.shape(), optimizer->second_moments()[i]));
    }
    data.optimizer = std::move(s);
  }
  return data;
}

SkuPatchModel<float> model_from_checkpoint(const CheckpointData& data) {
  SkuPatchModel<float> model;
  try {
    model = SkuPatchModel<float>::create(data.config, 0);
  } catch (const ConfigError& e) {
    throw InputError(std::string("checkpoint config is invalid: ") + e.what());
  }
  std::size_t i = 0;
  model.visit([&](const std::string& name, Tensor<float>& t) {
    if (i >= data.tensors.size() || data.tensors[i].name != name) {
      throw InputError("checkpoint is missing tensor " + name);
    }
    const auto& a = data.tensors[i++];
    if (a.shape != t.shape()) {
      throw InputError("checkpoint tensor " + name + " has shape " + shape_str(a.shape) + ", expected " +
                       shape_str(t.shape()));
    }
    std::copy(a.values.begin(), a.values.end(), t.mutable_data().begin());
  });
  if (i != data.tensors.size()) throw InputError("checkpoint holds unexpected extra tensors");
  return model;
}

void restore_optimizer(const CheckpointData& data, AdamW<float>& optimizer) {
  if (!data.optimizer) throw InputError("checkpoint has no optimizer state");
  const auto& s = *data.optimizer;
  std::vector<std::vector<float>> m, v;
  for (const auto& a : s.first) m.push_back(a.values);
  for (const auto& a : s.second) v.push_back(a.values);
  try {
    optimizer.load_state(s.steps, std::move(m), std::move(v));
  } catch (const DimensionError& e) {
    throw InputError(std::string("checkpoint optimizer state: ") + e.what());
  }
}

}  // namespace skupatch

// Copyright 2026 The Contraction PPO Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cppo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cppo/errors.hpp"

namespace cppo {

namespace {

constexpr size_t kMagicLen = sizeof(kCheckpointMagic) - 1;
// Seed for power-iteration vectors of loaded networks; they are not stored.
constexpr std::uint64_t kLoadPowerSeed = 0x5eed;

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* p, size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(size_t n) const {
    if (pos_ + n > in_.size()) throw CheckpointError("checkpoint truncated");
  }
  const std::string& in_;
  size_t pos_ = 0;
};

void write_net(Writer& w, const LipschitzMlp& net) {
  w.u32(static_cast<std::uint32_t>(net.num_layers()));
  for (const auto& layer : net.layers()) {
    w.u32(static_cast<std::uint32_t>(layer.weight.rows()));
    w.u32(static_cast<std::uint32_t>(layer.weight.cols()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) w.f64(layer.weight(r, c));
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) w.f64(layer.bias(r));
    w.u8(static_cast<std::uint8_t>(layer.activation));
    w.f64(layer.budget);
  }
}

LipschitzMlp read_net(Reader& rd) {
  const std::uint32_t n_layers = rd.u32();
  if (n_layers == 0 || n_layers > 64) throw CheckpointError("implausible layer count");
  std::vector<DenseLayer> layers(n_layers);
  for (auto& layer : layers) {
    const std::uint32_t rows = rd.u32();
    const std::uint32_t cols = rd.u32();
    if (rows == 0 || cols == 0 || rows > 1u << 16 || cols > 1u << 16) {
      throw CheckpointError("implausible layer shape");
    }
    layer.weight.resize(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) layer.weight(r, c) = rd.f64();
    layer.bias.resize(rows);
    for (std::uint32_t r = 0; r < rows; ++r) layer.bias(r) = rd.f64();
    const std::uint8_t tag = rd.u8();
    if (tag > static_cast<std::uint8_t>(Activation::kElu)) {
      throw CheckpointError("unknown activation tag " + std::to_string(tag));
    }
    layer.activation = static_cast<Activation>(tag);
    layer.budget = rd.f64();
  }
  try {
    return LipschitzMlp(std::move(layers), kLoadPowerSeed);
  } catch (const ContractError& e) {
    throw CheckpointError(std::string("inconsistent network: ") + e.what());
  }
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kCheckpointMagic, kMagicLen);
  w.u32(kCheckpointVersion);
  w.u32(3);
  write_net(w, ckpt.policy);
  write_net(w, ckpt.value);
  write_net(w, ckpt.metric);
  w.u32(static_cast<std::uint32_t>(ckpt.log_std.size()));
  for (Eigen::Index i = 0; i < ckpt.log_std.size(); ++i) w.f64(ckpt.log_std(i));
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader rd(bytes);
  if (rd.raw(kMagicLen) != std::string(kCheckpointMagic, kMagicLen)) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  const std::uint32_t version = rd.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) +
                          " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (rd.u32() != 3) throw CheckpointError("expected 3 networks");
  Checkpoint ckpt;
  ckpt.policy = read_net(rd);
  ckpt.value = read_net(rd);
  ckpt.metric = read_net(rd);
  const std::uint32_t n = rd.u32();
  if (n > 1u << 16) throw CheckpointError("implausible log-std length");
  ckpt.log_std.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) ckpt.log_std(i) = rd.f64();
  if (!rd.done()) throw CheckpointError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace cppo

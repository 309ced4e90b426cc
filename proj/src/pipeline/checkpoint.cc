// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/checkpoint.h"

#include <cstring>
#include <fstream>
#include <sstream>

#include "msfnet/error.h"

namespace msf::ckpt {

namespace {

template <typename T>
void put(std::string& out, T value) {
  static_assert(sizeof(T) <= 8);
  std::uint64_t bits = 0;
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
  }

  std::string take(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::uint64_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError(path_ + ": truncated checkpoint");
  }

  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw DataError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& entry : tensors)
    if (entry.first == name) return true;
  return false;
}

void save(const Checkpoint& checkpoint, const std::string& path) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  const std::string meta = checkpoint.meta.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint64_t>(out, checkpoint.tensors.size());
  for (const auto& [name, t] : checkpoint.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::int64_t>(out, e);
    for (double v : t.data()) put<double>(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("cannot write checkpoint " + path);
}

Checkpoint load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("missing file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  Reader r(ss.str(), path);
  if (r.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw DataError(path + ": not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion)
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto meta_len = r.get<std::uint64_t>();
  try {
    ck.meta = nlohmann::ordered_json::parse(r.take(meta_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ": corrupt metadata (" + e.what() + ")");
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.take(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw DataError(path + ": tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
      e = r.get<std::int64_t>();
      if (e < 0) throw DataError(path + ": tensor '" + name + "' has a negative extent");
    }
    const auto numel = static_cast<std::uint64_t>(shape_numel(shape));
    if (numel > r.remaining() / sizeof(double)) throw DataError(path + ": truncated checkpoint");
    std::vector<double> data(numel);
    for (auto& v : data) v = r.get<double>();
    ck.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw DataError(path + ": trailing bytes after the last tensor");
  return ck;
}

}  // namespace msf::ckpt

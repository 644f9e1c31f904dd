// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include "zssl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace zssl {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ofstream &os, T v) {
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream &is, const std::string &path) {
  T v;
  is.read(reinterpret_cast<char *>(&v), sizeof(T));
  if (!is) throw IoError("truncated checkpoint: " + path);
  return v;
}

}  // namespace

void save_tensors(const std::string &path, const ParamMap &tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod<uint64_t>(os, tensors.size());
  for (const auto &[name, t] : tensors) {
    write_pod<uint64_t>(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint64_t>(os, static_cast<uint64_t>(t.rank()));
    for (int64_t e : t.shape()) write_pod<int64_t>(os, e);
    os.write(reinterpret_cast<const char *>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw IoError("write failed: " + path);
}

ParamMap load_tensors(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError("bad magic in " + path);
  }
  const uint64_t count = read_pod<uint64_t>(is, path);
  ParamMap out;
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t name_len = read_pod<uint64_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw IoError("truncated checkpoint: " + path);
    const uint64_t rank = read_pod<uint64_t>(is, path);
    Shape shape(rank);
    for (uint64_t r = 0; r < rank; ++r) {
      shape[r] = read_pod<int64_t>(is, path);
      if (shape[r] < 0) throw IoError("negative extent in " + path);
    }
    const int64_t n = shape_numel(shape);
    std::vector<double> value(static_cast<size_t>(n));
    is.read(reinterpret_cast<char *>(value.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint: " + path);
    if (out.count(name)) throw IoError("duplicate tensor '" + name + "' in " + path);
    out.emplace(std::move(name), Tensor::from(std::move(shape), std::move(value)));
  }
  return out;
}

void put_scalar(ParamMap &m, const std::string &name, double v) {
  m[name] = Tensor::scalar(v);
}

double get_scalar(const ParamMap &m, const std::string &name) {
  auto it = m.find(name);
  if (it == m.end()) throw IoError("missing scalar '" + name + "' in checkpoint");
  return it->second.item();
}

bool has_scalar(const ParamMap &m, const std::string &name) {
  return m.find(name) != m.end();
}

}  // namespace zssl

// Copyright 2025-2026 The zssl Authors
//
// Named-tensor container used for model checkpoints, codebooks, and any
// other tensor bundle that must round-trip bit-exactly.
//
// File layout, all integers and floats little-endian:
//   magic "ZSSL0001" (8 bytes)
//   u64 tensor_count
//   per tensor:
//     u64 name_len, name bytes (UTF-8)
//     u64 rank, rank x i64 extents
//     product(extents) x f64 values
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>

#include "zssl/tensor.hpp"

namespace zssl {

inline constexpr char kCheckpointMagic[8] = {'Z', 'S', 'S', 'L',
                                             '0', '0', '0', '1'};

void save_tensors(const std::string &path, const ParamMap &tensors);
ParamMap load_tensors(const std::string &path);

// Convenience for scalar bookkeeping stored as rank-0 tensors.
void put_scalar(ParamMap &m, const std::string &name, double v);
double get_scalar(const ParamMap &m, const std::string &name);
bool has_scalar(const ParamMap &m, const std::string &name);

}  // namespace zssl

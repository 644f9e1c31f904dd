// Copyright 2025-2026 The zssl Authors
//
// Euclidean k-means for acoustic-unit discovery: k-means++ seeding, Lloyd
// refinement with empty-cluster rescue, and nearest-centroid labeling.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <vector>

#include "zssl/tensor.hpp"

namespace zssl {

struct Codebook {
  Tensor centroids;  // [K, F], finite

  int64_t num_units() const { return centroids.rows(); }
  int64_t feature_dim() const { return centroids.cols(); }
};

// Fits K centroids to the rows of features [M, F] with Lloyd's algorithm
// seeded by k-means++. Clusters that lose all members are re-seeded to the
// point farthest from its current centroid. When inertia_trace is given it
// receives the within-cluster sum of squares after each assignment pass,
// which is non-increasing.
Codebook kmeans_fit(const Tensor &features, int64_t k, int64_t iters,
                    uint64_t seed, std::vector<double> *inertia_trace = nullptr);

// Nearest centroid per row of features [T, F]; equidistant centroids
// resolve to the lowest index.
LabelSequence kmeans_label(const Codebook &cb, const Tensor &features);

// Sum of squared distances from each row to its nearest centroid.
double kmeans_inertia(const Codebook &cb, const Tensor &features);

void save_codebook(const std::string &path, const Codebook &cb);
Codebook load_codebook(const std::string &path);

}  // namespace zssl

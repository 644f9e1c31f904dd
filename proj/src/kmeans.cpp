// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include "zssl/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "zssl/checkpoint.hpp"

namespace zssl {

namespace {

// Uniform double in [0, 1) built from the top 53 bits, identical on every
// platform for a given engine state.
double unit_uniform(std::mt19937_64 &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::span<const double> row_of(const Tensor &t, int64_t r) {
  const int64_t f = t.cols();
  return t.value().subspan(static_cast<size_t>(r * f), static_cast<size_t>(f));
}

}  // namespace

Codebook kmeans_fit(const Tensor &features, int64_t k, int64_t iters,
                    uint64_t seed, std::vector<double> *inertia_trace) {
  const int64_t m = features.rows();
  const int64_t f = features.cols();
  if (k < 1 || k > m) {
    throw ContractError("kmeans_fit: k=" + std::to_string(k) + " with " +
                        std::to_string(m) + " points");
  }
  if (iters < 0) throw ContractError("kmeans_fit: negative iteration count");
  if (!features.all_finite()) {
    throw NumericError("kmeans_fit: non-finite feature values");
  }
  std::mt19937_64 rng(seed);
  Tensor centroids = Tensor::zeros({k, f});
  const std::span<double> cv = centroids.value();

  // k-means++ seeding: first centroid uniform, the rest proportional to the
  // squared distance from the nearest centroid already chosen.
  std::vector<double> best_sq(static_cast<size_t>(m),
                              std::numeric_limits<double>::infinity());
  {
    const int64_t first = static_cast<int64_t>(
        unit_uniform(rng) * static_cast<double>(m));
    const std::span<const double> src = row_of(features, std::min(first, m - 1));
    std::copy(src.begin(), src.end(), cv.begin());
  }
  for (int64_t c = 1; c < k; ++c) {
    const std::span<const double> prev =
        cv.subspan(static_cast<size_t>((c - 1) * f), static_cast<size_t>(f));
    double total = 0.0;
    for (int64_t i = 0; i < m; ++i) {
      best_sq[i] = std::min(best_sq[i], sq_dist(row_of(features, i), prev));
      total += best_sq[i];
    }
    int64_t pick = 0;
    if (total > 0.0) {
      const double target = unit_uniform(rng) * total;
      double cum = 0.0;
      pick = m - 1;
      for (int64_t i = 0; i < m; ++i) {
        cum += best_sq[i];
        if (cum > target) {
          pick = i;
          break;
        }
      }
    } else {
      // All points coincide with existing centroids; any choice is as good.
      pick = static_cast<int64_t>(rng() % static_cast<uint64_t>(m));
    }
    const std::span<const double> src = row_of(features, pick);
    std::copy(src.begin(), src.end(),
              cv.begin() + static_cast<int64_t>(c * f));
  }

  std::vector<int64_t> assign(static_cast<size_t>(m), 0);
  std::vector<double> point_sq(static_cast<size_t>(m), 0.0);
  std::vector<int64_t> counts(static_cast<size_t>(k), 0);
  if (inertia_trace) inertia_trace->clear();

  for (int64_t it = 0; it < iters; ++it) {
    // Assignment pass; ties resolve to the lowest centroid index.
    double inertia = 0.0;
    bool changed = false;
    for (int64_t i = 0; i < m; ++i) {
      const std::span<const double> x = row_of(features, i);
      int64_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int64_t c = 0; c < k; ++c) {
        const double d = sq_dist(
            x, cv.subspan(static_cast<size_t>(c * f), static_cast<size_t>(f)));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
      point_sq[i] = best_d;
      inertia += best_d;
    }
    if (inertia_trace) inertia_trace->push_back(inertia);
    if (!changed && it > 0) break;

    // Update pass: means of the assigned points.
    std::fill(cv.begin(), cv.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (int64_t i = 0; i < m; ++i) {
      const std::span<const double> x = row_of(features, i);
      const int64_t c = assign[i];
      ++counts[c];
      for (int64_t j = 0; j < f; ++j) cv[c * f + j] += x[j];
    }
    for (int64_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[c]);
      for (int64_t j = 0; j < f; ++j) cv[c * f + j] *= inv;
    }
    // Rescue: an empty cluster jumps to the point farthest from its
    // centroid, which cannot raise the next assignment's inertia.
    for (int64_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      int64_t far = 0;
      double far_d = -1.0;
      for (int64_t i = 0; i < m; ++i) {
        if (point_sq[i] > far_d) {
          far_d = point_sq[i];
          far = i;
        }
      }
      const std::span<const double> src = row_of(features, far);
      std::copy(src.begin(), src.end(),
                cv.begin() + static_cast<int64_t>(c * f));
      point_sq[far] = 0.0;  // claimed; a second empty cluster picks another
    }
  }
  return Codebook{centroids};
}

LabelSequence kmeans_label(const Codebook &cb, const Tensor &features) {
  const int64_t t = features.rows();
  const int64_t f = features.cols();
  if (f != cb.feature_dim()) {
    throw ShapeError("kmeans_label: features have dim " + std::to_string(f) +
                     ", codebook has " + std::to_string(cb.feature_dim()));
  }
  LabelSequence labels(static_cast<size_t>(t), 0);
  for (int64_t i = 0; i < t; ++i) {
    const std::span<const double> x = row_of(features, i);
    int64_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < cb.num_units(); ++c) {
      const double d = sq_dist(x, row_of(cb.centroids, c));
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    labels[static_cast<size_t>(i)] = best;
  }
  return labels;
}

double kmeans_inertia(const Codebook &cb, const Tensor &features) {
  const LabelSequence labels = kmeans_label(cb, features);
  double total = 0.0;
  for (int64_t i = 0; i < features.rows(); ++i) {
    total += sq_dist(row_of(features, i),
                     row_of(cb.centroids, labels[static_cast<size_t>(i)]));
  }
  return total;
}

void save_codebook(const std::string &path, const Codebook &cb) {
  ParamMap named;
  named.emplace("codebook.centroids", cb.centroids);
  save_tensors(path, named);
}

Codebook load_codebook(const std::string &path) {
  ParamMap named = load_tensors(path);
  const auto it = named.find("codebook.centroids");
  if (it == named.end()) {
    throw IoError("codebook file lacks centroids: " + path);
  }
  Codebook cb{it->second};
  if (cb.centroids.shape().size() != 2) {
    throw IoError("codebook centroids are not a matrix: " + path);
  }
  return cb;
}

}  // namespace zssl

// Copyright 2025-2026 The zssl Authors
//
// Streaming manifest reader and the dynamic bucketing sampler: constant
// startup cost in the manifest length, bounded resident-record count, and
// exactly-once batch emission per pass.
//
// Manifest line format (UTF-8, tab-separated):
//   id  duration_seconds  audio_path  sample_offset  sample_count
//     [label_path] [transcript]
// A six-field line carries a label path; use an empty sixth field to attach
// a transcript without labels.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "zssl/tensor.hpp"

namespace zssl {

struct SegmentRecord {
  std::string id;
  double duration = 0.0;  // seconds
  std::string audio_path;
  int64_t sample_offset = 0;
  int64_t sample_count = 0;
  std::string label_path;  // empty = none
  std::string transcript;  // empty = none
};

// Throws ParseError carrying the 1-based line number.
SegmentRecord parse_manifest_line(const std::string &line, int64_t line_no);
std::string format_manifest_line(const SegmentRecord &r);

// Reads one line per next() call; peak resident records O(1).
class ManifestReader {
 public:
  explicit ManifestReader(const std::string &path);
  ~ManifestReader();
  ManifestReader(const ManifestReader &) = delete;
  ManifestReader &operator=(const ManifestReader &) = delete;

  std::optional<SegmentRecord> next();
  uint64_t lines_read() const { return lines_read_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  uint64_t lines_read_ = 0;
};

// Label sidecar files: one line of space-separated integer unit ids per
// utterance, addressed from a manifest's label_path field.
LabelSequence read_label_file(const std::string &path);
void write_label_file(const std::string &path, const LabelSequence &labels);

// Empirical quantiles (linear interpolation between order statistics) at
// k/num_buckets, k = 1..num_buckets-1, deduplicated to strictly ascending.
// Warns on stderr when duplicates collapse the bucket count.
std::vector<double> estimate_boundaries(std::vector<double> durations,
                                        int64_t num_buckets);

struct Batch {
  std::vector<SegmentRecord> records;
  double total_duration = 0.0;
};

struct BucketingConfig {
  int64_t estimate_records = 10000;  // startup sample for boundaries
  int64_t num_buckets = 30;
  int64_t buffer_cap = 20000;        // resident-record bound
  double max_batch_seconds = 600.0;  // per-batch duration cap
  uint64_t seed = 0;
};

// Pull-driven sampler over any record source. Records buffer into
// per-bucket queues; a bucket emits once its content reaches the duration
// cap (adding one more record would exceed it), the largest bucket emits
// when the buffer is full, and stream end drains everything. Every source
// record appears in exactly one emitted batch.
class DynamicBatcher {
 public:
  using Source = std::function<std::optional<SegmentRecord>()>;
  DynamicBatcher(BucketingConfig config, Source source);

  std::optional<Batch> next();

  uint64_t records_consumed() const { return consumed_; }
  int64_t buffered_records() const { return buffered_; }
  const std::vector<double> &boundaries() const { return boundaries_; }
  // Bucket index a duration falls into under the current boundaries.
  int64_t bucket_of(double duration) const;

 private:
  void establish_boundaries();
  bool pump_one();                // read one record into its bucket
  Batch take_batch(size_t bucket);

  BucketingConfig config_;
  Source source_;
  std::mt19937_64 rng_;
  bool source_done_ = false;
  bool boundaries_ready_ = false;
  std::vector<double> boundaries_;
  std::vector<std::deque<SegmentRecord>> buckets_;
  std::vector<double> bucket_seconds_;
  int64_t buffered_ = 0;
  uint64_t consumed_ = 0;
};

}  // namespace zssl

// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include "zssl/datapipe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace zssl {

namespace {

std::vector<std::string> split_tabs(const std::string &line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

double parse_double(const std::string &s, int64_t line_no, const char *what) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw ParseError(std::string("bad ") + what + " '" + s + "'", line_no);
  }
}

int64_t parse_int(const std::string &s, int64_t line_no, const char *what) {
  int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(std::string("bad ") + what + " '" + s + "'", line_no);
  }
  return v;
}

}  // namespace

SegmentRecord parse_manifest_line(const std::string &line, int64_t line_no) {
  const std::vector<std::string> f = split_tabs(line);
  if (f.size() < 5 || f.size() > 7) {
    throw ParseError("want 5-7 tab-separated fields, got " +
                     std::to_string(f.size()), line_no);
  }
  SegmentRecord r;
  r.id = f[0];
  r.duration = parse_double(f[1], line_no, "duration");
  r.audio_path = f[2];
  r.sample_offset = parse_int(f[3], line_no, "sample_offset");
  r.sample_count = parse_int(f[4], line_no, "sample_count");
  if (f.size() >= 6) r.label_path = f[5];
  if (f.size() == 7) r.transcript = f[6];
  if (r.id.empty()) throw ParseError("empty id", line_no);
  if (r.duration <= 0.0) {
    throw ParseError("non-positive duration " + f[1], line_no);
  }
  if (r.sample_offset < 0 || r.sample_count < 1) {
    throw ParseError("bad sample range", line_no);
  }
  // Duration must agree with the sample count at 16 kHz within one 20 ms
  // frame.
  const double implied = static_cast<double>(r.sample_count) / 16000.0;
  if (std::fabs(implied - r.duration) > 0.02 + 1e-9) {
    throw ParseError("duration " + f[1] + " disagrees with sample_count " +
                     f[4] + " at 16 kHz", line_no);
  }
  return r;
}

std::string format_manifest_line(const SegmentRecord &r) {
  std::ostringstream os;
  char dur[32];
  std::snprintf(dur, sizeof(dur), "%.7f", r.duration);
  os << r.id << '\t' << dur << '\t' << r.audio_path << '\t' << r.sample_offset
     << '\t' << r.sample_count;
  if (!r.label_path.empty() || !r.transcript.empty()) os << '\t' << r.label_path;
  if (!r.transcript.empty()) os << '\t' << r.transcript;
  return os.str();
}

// ---------------------------------------------------------------------------
// ManifestReader

struct ManifestReader::Impl {
  std::ifstream file;
  std::string path;
};

ManifestReader::ManifestReader(const std::string &path)
    : impl_(std::make_unique<Impl>()) {
  impl_->file.open(path);
  if (!impl_->file) throw IoError("cannot open manifest: " + path);
  impl_->path = path;
}

ManifestReader::~ManifestReader() = default;

std::optional<SegmentRecord> ManifestReader::next() {
  std::string line;
  while (std::getline(impl_->file, line)) {
    ++lines_read_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    return parse_manifest_line(line, static_cast<int64_t>(lines_read_));
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Label sidecar files

LabelSequence read_label_file(const std::string &path) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open label file: " + path);
  LabelSequence labels;
  std::string tok;
  while (file >> tok) {
    labels.push_back(parse_int(tok, -1, "label"));
  }
  return labels;
}

void write_label_file(const std::string &path, const LabelSequence &labels) {
  std::ofstream file(path);
  if (!file) throw IoError("cannot write label file: " + path);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (i) file << ' ';
    file << labels[i];
  }
  file << '\n';
  if (!file) throw IoError("short write to label file: " + path);
}

// ---------------------------------------------------------------------------
// Bucket boundaries

std::vector<double> estimate_boundaries(std::vector<double> durations,
                                        int64_t num_buckets) {
  if (num_buckets < 1) {
    throw ContractError("estimate_boundaries: want num_buckets >= 1");
  }
  if (static_cast<int64_t>(durations.size()) < num_buckets) {
    throw ContractError("estimate_boundaries: " +
                        std::to_string(durations.size()) +
                        " samples for " + std::to_string(num_buckets) +
                        " buckets");
  }
  std::sort(durations.begin(), durations.end());
  const size_t n = durations.size();
  std::vector<double> bounds;
  for (int64_t k = 1; k < num_buckets; ++k) {
    const double h = static_cast<double>(n - 1) * static_cast<double>(k) /
                     static_cast<double>(num_buckets);
    const size_t lo = static_cast<size_t>(h);
    const double frac = h - static_cast<double>(lo);
    const double q = lo + 1 < n
                         ? durations[lo] + frac * (durations[lo + 1] - durations[lo])
                         : durations[lo];
    bounds.push_back(q);
  }
  // Keep strictly ascending boundaries that actually separate records: a
  // cut at or below the minimum duration leaves its lower bucket empty.
  std::vector<double> unique;
  for (double b : bounds) {
    if (b <= durations.front()) continue;
    if (unique.empty() || b > unique.back()) unique.push_back(b);
  }
  if (unique.size() + 1 < static_cast<size_t>(num_buckets)) {
    std::cerr << "estimate_boundaries: durations support only "
              << unique.size() + 1 << " of " << num_buckets
              << " requested buckets\n";
  }
  return unique;
}

// ---------------------------------------------------------------------------
// DynamicBatcher

DynamicBatcher::DynamicBatcher(BucketingConfig config, Source source)
    : config_(config), source_(std::move(source)), rng_(config.seed) {
  if (config_.num_buckets < 1 || config_.buffer_cap < 1 ||
      config_.max_batch_seconds <= 0.0) {
    throw ContractError("DynamicBatcher: non-positive configuration");
  }
  // The startup sample is itself resident, so it cannot exceed the cap.
  config_.estimate_records =
      std::min(config_.estimate_records, config_.buffer_cap);
}

int64_t DynamicBatcher::bucket_of(double duration) const {
  const auto it =
      std::upper_bound(boundaries_.begin(), boundaries_.end(), duration);
  return static_cast<int64_t>(it - boundaries_.begin());
}

void DynamicBatcher::establish_boundaries() {
  std::vector<SegmentRecord> sample;
  while (static_cast<int64_t>(sample.size()) < config_.estimate_records) {
    std::optional<SegmentRecord> r = source_();
    if (!r) {
      source_done_ = true;
      break;
    }
    ++consumed_;
    sample.push_back(std::move(*r));
  }
  std::vector<double> durations;
  durations.reserve(sample.size());
  for (const SegmentRecord &r : sample) durations.push_back(r.duration);
  if (durations.empty()) {
    boundaries_.clear();
  } else {
    const int64_t usable = std::min<int64_t>(
        config_.num_buckets, static_cast<int64_t>(durations.size()));
    boundaries_ = estimate_boundaries(std::move(durations), usable);
  }
  buckets_.assign(boundaries_.size() + 1, {});
  bucket_seconds_.assign(boundaries_.size() + 1, 0.0);
  boundaries_ready_ = true;
  // The sampled records are ordinary input: route them into their buckets.
  for (SegmentRecord &r : sample) {
    const size_t b = static_cast<size_t>(bucket_of(r.duration));
    bucket_seconds_[b] += r.duration;
    buckets_[b].push_back(std::move(r));
    ++buffered_;
  }
}

bool DynamicBatcher::pump_one() {
  if (source_done_) return false;
  std::optional<SegmentRecord> r = source_();
  if (!r) {
    source_done_ = true;
    return false;
  }
  ++consumed_;
  const size_t b = static_cast<size_t>(bucket_of(r->duration));
  bucket_seconds_[b] += r->duration;
  buckets_[b].push_back(std::move(*r));
  ++buffered_;
  return true;
}

Batch DynamicBatcher::take_batch(size_t bucket) {
  std::deque<SegmentRecord> &q = buckets_[bucket];
  // Bounded shuffle: randomize this bucket's order before drawing.
  std::vector<SegmentRecord> pool(q.begin(), q.end());
  for (size_t i = pool.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng_() % i);
    std::swap(pool[i - 1], pool[j]);
  }
  Batch batch;
  size_t taken = 0;
  for (; taken < pool.size(); ++taken) {
    const double d = pool[taken].duration;
    if (!batch.records.empty() &&
        batch.total_duration + d > config_.max_batch_seconds) {
      break;
    }
    if (batch.records.empty() && d > config_.max_batch_seconds) {
      std::cerr << "DynamicBatcher: record '" << pool[taken].id
                << "' alone exceeds the batch cap; emitting a singleton\n";
    }
    batch.total_duration += d;
    batch.records.push_back(std::move(pool[taken]));
  }
  q.assign(std::make_move_iterator(pool.begin() + static_cast<int64_t>(taken)),
           std::make_move_iterator(pool.end()));
  bucket_seconds_[bucket] -= batch.total_duration;
  if (q.empty()) bucket_seconds_[bucket] = 0.0;  // shed rounding dust
  buffered_ -= static_cast<int64_t>(batch.records.size());
  return batch;
}

std::optional<Batch> DynamicBatcher::next() {
  if (!boundaries_ready_) establish_boundaries();
  while (true) {
    // A bucket is ready once its content alone can fill a batch.
    for (size_t b = 0; b < buckets_.size(); ++b) {
      if (bucket_seconds_[b] >= config_.max_batch_seconds) {
        return take_batch(b);
      }
    }
    if (buffered_ >= config_.buffer_cap) {
      // Buffer full with no ready bucket: relieve the largest one.
      size_t largest = 0;
      for (size_t b = 1; b < buckets_.size(); ++b) {
        if (bucket_seconds_[b] > bucket_seconds_[largest]) largest = b;
      }
      return take_batch(largest);
    }
    if (!pump_one()) break;
  }
  // Drain after stream end, lowest bucket first.
  for (size_t b = 0; b < buckets_.size(); ++b) {
    if (!buckets_[b].empty()) return take_batch(b);
  }
  return std::nullopt;
}

}  // namespace zssl

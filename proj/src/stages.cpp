// Copyright 2025-2026 The zssl Authors
//
// Non-gradient pipeline stages: discrete-target generation via k-means,
// beam decoding with shallow fusion, and the encoder geometry benchmark.
//
// Licensed under the Apache License, Version 2.0

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>

#include "json.hpp"
#include "zssl/asr.hpp"
#include "zssl/checkpoint.hpp"
#include "zssl/corpus.hpp"
#include "zssl/datapipe.hpp"
#include "zssl/error.hpp"
#include "zssl/kmeans.hpp"
#include "zssl/trainer.hpp"

namespace zssl {
namespace {

using nlohmann::json;

std::vector<SegmentRecord> read_all_records(const std::string &manifest) {
  ManifestReader reader(manifest);
  std::vector<SegmentRecord> records;
  while (auto rec = reader.next()) records.push_back(std::move(*rec));
  return records;
}

// Every other cepstral frame, matching the frontend's 50 Hz grid.
Tensor decimate_rows(const Tensor &x) {
  const int64_t rows = (x.rows() + 1) / 2;
  const int64_t cols = x.cols();
  std::vector<double> out(static_cast<size_t>(rows * cols));
  for (int64_t r = 0; r < rows; ++r) {
    const double *src = x.data() + 2 * r * cols;
    std::copy(src, src + cols, out.data() + r * cols);
  }
  return Tensor::from({rows, cols}, std::move(out));
}

}  // namespace

LabelingResult run_make_labels(const RunConfig &config) {
  if (config.manifest.empty()) throw ContractError("manifest path is empty");
  if (config.num_units < 1) throw ContractError("num_units must be >= 1");
  if (config.kmeans_max_frames < config.num_units) {
    throw ContractError("kmeans_max_frames must be >= num_units");
  }
  std::vector<SegmentRecord> records = read_all_records(config.manifest);

  // Per-utterance feature matrices, cached so the fit and the labeling pass
  // see identical values.
  std::optional<ModelBundle> model;
  if (config.feature_stack >= 0) {
    if (config.checkpoint_in.empty()) {
      throw ContractError(
          "feature_stack >= 0 re-extracts from a trained encoder and needs "
          "checkpoint_in");
    }
    model = init_pretrain_model(config);
    load_matching_params(model->params, load_tensors(config.checkpoint_in));
    const int64_t stacks =
        static_cast<int64_t>(model->encoder.stacks.size());
    if (config.feature_stack >= stacks) {
      throw ContractError("feature_stack " +
                          std::to_string(config.feature_stack) +
                          " out of range; encoder has " +
                          std::to_string(stacks) + " stacks");
    }
  }

  std::vector<Tensor> features;
  features.reserve(records.size());
  int64_t total_frames = 0;
  for (const SegmentRecord &rec : records) {
    Tensor wave = load_wave(rec);
    Tensor f;
    if (config.feature_stack < 0) {
      f = decimate_rows(
          mfcc_like(wave, config.mfcc_mels, config.mfcc_ceps));
    } else {
      Tape tape;
      tape.set_grad_enabled(false);
      std::vector<Tensor> taps;
      backbone_forward(tape, *model, wave, nullptr, &taps);
      f = taps[static_cast<size_t>(config.feature_stack)];
    }
    if (f.rows() == 0) {
      throw ContractError("utterance '" + rec.id +
                          "' is too short to produce any feature frames");
    }
    total_frames += f.rows();
    features.push_back(f);
  }
  if (total_frames < config.num_units) {
    throw ContractError("corpus yields " + std::to_string(total_frames) +
                        " frames, fewer than num_units");
  }

  // Evenly strided subsample for the fit, capped at kmeans_max_frames.
  const int64_t feat_dim = features.front().cols();
  const int64_t stride =
      (total_frames + config.kmeans_max_frames - 1) / config.kmeans_max_frames;
  std::vector<double> fit_values;
  int64_t fit_rows = 0;
  int64_t global_row = 0;
  for (const Tensor &f : features) {
    for (int64_t r = 0; r < f.rows(); ++r, ++global_row) {
      if (global_row % stride != 0) continue;
      const double *src = f.data() + r * feat_dim;
      fit_values.insert(fit_values.end(), src, src + feat_dim);
      ++fit_rows;
    }
  }
  Tensor fit = Tensor::from({fit_rows, feat_dim}, std::move(fit_values));
  std::vector<double> trace;
  Codebook codebook =
      kmeans_fit(fit, config.num_units, config.kmeans_iters,
                 mix_seed(config.seed, hash_string("kmeans")), &trace);
  save_codebook(config.codebook_path, codebook);

  std::filesystem::create_directories(config.labels_dir);
  std::ofstream manifest_out(config.manifest_out, std::ios::trunc);
  if (!manifest_out.is_open()) {
    throw IoError("cannot write manifest: " + config.manifest_out);
  }
  for (size_t i = 0; i < records.size(); ++i) {
    LabelSequence labels = kmeans_label(codebook, features[i]);
    SegmentRecord rec = records[i];
    rec.label_path = config.labels_dir + "/" + rec.id + ".labels";
    write_label_file(rec.label_path, labels);
    manifest_out << format_manifest_line(rec) << "\n";
  }
  if (!manifest_out.good()) {
    throw IoError("short write to manifest: " + config.manifest_out);
  }

  LabelingResult result;
  result.codebook_path = config.codebook_path;
  result.manifest_out = config.manifest_out;
  result.utterances = static_cast<int64_t>(records.size());
  result.frames = total_frames;
  result.inertia = trace.empty() ? 0.0 : trace.back();
  return result;
}

DecodeSummary run_decode(const RunConfig &config) {
  if (config.manifest.empty()) throw ContractError("manifest path is empty");
  if (config.checkpoint_in.empty()) {
    throw ContractError("decode needs checkpoint_in");
  }
  ModelBundle model = init_finetune_model(config);
  load_matching_params(model.params, load_tensors(config.checkpoint_in));

  std::vector<SegmentRecord> records = read_all_records(config.manifest);

  NGramLM lm;
  if (!config.lm_path.empty()) {
    lm = NGramLM::load(config.lm_path);
  } else {
    std::string corpus;
    for (const SegmentRecord &rec : records) {
      if (rec.transcript.empty()) continue;
      if (!corpus.empty()) corpus += '\n';
      corpus += rec.transcript;
    }
    // Without any text to fit, scoring falls back to the uniform model.
    if (!corpus.empty()) lm = NGramLM::train(corpus, config.lm_order);
  }

  BeamConfig beam;
  beam.beam = config.beam;
  beam.lm_weight = config.lm_weight;
  beam.length_weight = config.length_weight;
  beam.length_in_words = config.length_in_words;

  std::ofstream out(config.decode_out, std::ios::trunc);
  if (!out.is_open()) {
    throw IoError("cannot write decodes: " + config.decode_out);
  }
  DecodeSummary summary;
  summary.out_path = config.decode_out;
  for (const SegmentRecord &rec : records) {
    Tape tape;
    tape.set_grad_enabled(false);
    Tensor wave = load_wave(rec);
    Tensor o = backbone_forward(tape, model, wave);
    Tensor logits = tape.add_bias(tape.matmul(o, model.params.at("ctc.w")),
                                  model.params.at("ctc.b"));
    Tensor log_probs = tape.log_softmax(logits);
    const std::string text = labels_to_text(ctc_beam_lm(log_probs, lm, beam));
    out << rec.id << "\t" << text << "\n";
    ++summary.utterances;
    if (!rec.transcript.empty()) {
      const std::vector<std::string> ref = split_words(rec.transcript);
      summary.word_errors += wer(split_words(text), ref).errors();
      summary.ref_words += static_cast<int64_t>(ref.size());
    }
  }
  if (!out.good()) {
    throw IoError("short write to " + config.decode_out);
  }
  return summary;
}

BenchPoint run_bench_point(const RunConfig &config, int64_t t) {
  if (t < 1) throw ContractError("bench sequence length must be >= 1");
  const EncoderConfig multi = encoder_from_config(config);
  // Equal depth and width, but every block at the full frame rate and the
  // widest dimension — the geometry the multi-rate profile is measured
  // against.
  EncoderConfig single;
  StackConfig stack;
  stack.downsample_factor = 1;
  stack.embed_dim = multi.output_dim();
  stack.num_blocks = 0;
  for (const StackConfig &s : multi.stacks) stack.num_blocks += s.num_blocks;
  stack.attention_heads = multi.stacks.front().attention_heads;
  stack.feedforward_dim = 2 * stack.embed_dim;
  single.stacks = {stack};
  single.pos_range = multi.pos_range;
  single.conv_kernel = multi.conv_kernel;

  const int64_t reps = std::max<int64_t>(1, config.bench_reps);
  auto measure = [&](const EncoderConfig &cfg) {
    std::mt19937_64 rng(mix_seed(config.seed, hash_string("bench-params")));
    ParamMap params = encoder_init_params(cfg, rng);
    std::mt19937_64 in_rng(mix_seed(config.seed, hash_string("bench-input")));
    Tensor x = Tensor::randn({t, cfg.input_dim()}, in_rng, 0.1);
    uint64_t flops = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int64_t rep = 0; rep < reps; ++rep) {
      Tape tape;
      tape.set_grad_enabled(false);
      const auto t0 = std::chrono::steady_clock::now();
      encoder_forward(tape, cfg, params, x);
      const double sec =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      best = std::min(best, sec);
      flops = tape.flops_in("attention");
    }
    return std::pair<uint64_t, double>{flops, best};
  };

  const auto [multi_flops, multi_sec] = measure(multi);
  const auto [single_flops, single_sec] = measure(single);
  BenchPoint point;
  point.t = t;
  point.multi_rate_attention_flops = multi_flops;
  point.single_rate_attention_flops = single_flops;
  point.flop_ratio = single_flops > 0 ? static_cast<double>(multi_flops) /
                                            static_cast<double>(single_flops)
                                      : 0.0;
  point.multi_rate_seconds = multi_sec;
  point.single_rate_seconds = single_sec;
  point.wall_ratio = single_sec > 0 ? multi_sec / single_sec : 0.0;
  return point;
}

BenchPoint run_bench(const RunConfig &config) {
  const BenchPoint point = run_bench_point(config, config.bench_t);
  json line;
  line["t"] = point.t;
  line["multi_rate_attention_flops"] = point.multi_rate_attention_flops;
  line["single_rate_attention_flops"] = point.single_rate_attention_flops;
  line["flop_ratio"] = point.flop_ratio;
  line["multi_rate_seconds"] = point.multi_rate_seconds;
  line["single_rate_seconds"] = point.single_rate_seconds;
  line["wall_ratio"] = point.wall_ratio;
  line["batches_per_s"] =
      point.multi_rate_seconds > 0 ? 1.0 / point.multi_rate_seconds : 0.0;
  if (config.bench_out.empty()) {
    std::cout << line.dump() << "\n";
  } else {
    std::ofstream out(config.bench_out, std::ios::app);
    if (!out.is_open()) throw IoError("cannot write " + config.bench_out);
    out << line.dump() << "\n";
  }
  return point;
}

}  // namespace zssl

// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include "zssl/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "zssl/checkpoint.hpp"
#include "zssl/corpus.hpp"
#include "zssl/datapipe.hpp"
#include "zssl/error.hpp"
#include "zssl/kmeans.hpp"

using namespace zssl;
namespace fs = std::filesystem;

namespace {

// One tiny corpus with k-means labels and a short pre-training checkpoint,
// built once and shared by the cases below.
struct Pipeline {
  std::string root;
  RunConfig base;              // manifest -> labeled manifest
  std::string corpus_manifest;
  std::string pretrain_ckpt;
};

const Pipeline &pipeline() {
  static const Pipeline p = [] {
    Pipeline p;
    const fs::path root = fs::temp_directory_path() / "zssl_trainer_fixture";
    fs::remove_all(root);
    fs::create_directories(root);
    p.root = root.string();

    RunConfig c;
    c.seed = 5;
    c.data_dir = p.root + "/data";
    c.num_utts = 12;
    c.min_utt_seconds = 1.0;
    c.max_utt_seconds = 1.6;
    c.lexicon_size = 6;
    c.frontend_channels = 8;
    c.encoder_profile = "tiny";
    c.num_units = 5;
    c.kmeans_iters = 10;
    c.codebook_path = p.root + "/codebook.zssl";
    c.labels_dir = p.root + "/labels";
    c.manifest_out = p.root + "/manifest_labeled.tsv";
    c.estimate_records = 12;
    c.num_buckets = 2;
    c.buffer_cap = 50;
    c.max_batch_seconds = 6.0;
    c.checkpoint_every = 0;

    CorpusSpec spec;
    spec.dir = c.data_dir;
    spec.num_utts = c.num_utts;
    spec.min_seconds = c.min_utt_seconds;
    spec.max_seconds = c.max_utt_seconds;
    spec.lexicon_size = c.lexicon_size;
    spec.seed = c.seed;
    const CorpusInfo info = make_corpus(spec);
    p.corpus_manifest = info.manifest_path;

    c.manifest = info.manifest_path;
    run_make_labels(c);
    c.manifest = c.manifest_out;
    p.base = c;

    RunConfig pre = c;
    pre.steps = 6;
    pre.checkpoint_out = p.root + "/pretrain.zssl";
    const TrainResult r = run_pretrain(pre);
    REQUIRE(!r.nan_abort);
    p.pretrain_ckpt = pre.checkpoint_out;
    return p;
  }();
  return p;
}

std::string slurp(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.is_open());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

bool tensors_equal(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(),
                     sizeof(double) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace

TEST_CASE("labeling stage writes aligned label files and a codebook") {
  const Pipeline &p = pipeline();
  const FrontendConfig frontend = frontend_from_config(p.base);

  ManifestReader reader(p.base.manifest_out);
  int64_t count = 0;
  while (auto rec = reader.next()) {
    ++count;
    REQUIRE(!rec->label_path.empty());
    const LabelSequence labels = read_label_file(rec->label_path);
    for (int64_t v : labels) {
      CHECK(v >= 0);
      CHECK(v < p.base.num_units);
    }
    // Cepstral-grid labels land within the alignment slack of the
    // frontend's 50 Hz frame count.
    const int64_t frames = frontend.output_length(rec->sample_count);
    CHECK(std::abs(static_cast<int64_t>(labels.size()) - frames) <= 2);
  }
  CHECK(count == 12);

  const Codebook cb = load_codebook(p.base.codebook_path);
  CHECK(cb.num_units() == 5);
  CHECK(cb.feature_dim() == 39);
}

TEST_CASE("pre-training starts near the uniform loss and improves") {
  const Pipeline &p = pipeline();
  RunConfig c = p.base;
  c.steps = 12;
  c.checkpoint_out = p.root + "/pretrain_improve.zssl";
  const TrainResult r = run_pretrain(c);
  CHECK(!r.nan_abort);
  CHECK(r.steps_done == 12);
  // A fresh head scores all units evenly, so the first loss sits near ln K.
  CHECK(r.initial_loss == doctest::Approx(std::log(5.0)).epsilon(0.25));
  CHECK(r.final_loss < r.initial_loss);
  CHECK(fs::exists(c.checkpoint_out));

  const ParamMap saved = load_tensors(c.checkpoint_out);
  CHECK(get_scalar(saved, "meta.step") == 12.0);
  CHECK(get_scalar(saved, "meta.stage") == 0.0);
  CHECK(saved.count("objective.proj") == 1);
  CHECK(saved.count("opt.step"));
  fs::remove(c.checkpoint_out);
}

TEST_CASE("interrupted and uninterrupted pre-training agree bit for bit") {
  const Pipeline &p = pipeline();

  RunConfig straight = p.base;
  straight.steps = 8;
  straight.checkpoint_out = p.root + "/straight.zssl";
  run_pretrain(straight);

  RunConfig half = p.base;
  half.steps = 4;
  half.checkpoint_out = p.root + "/resumed.zssl";
  run_pretrain(half);
  RunConfig resumed = half;
  resumed.steps = 8;
  resumed.checkpoint_in = half.checkpoint_out;
  run_pretrain(resumed);

  CHECK(slurp(straight.checkpoint_out) == slurp(resumed.checkpoint_out));
  fs::remove(straight.checkpoint_out);
  fs::remove(resumed.checkpoint_out);
}

TEST_CASE("repeated runs under one seed produce identical checkpoints") {
  const Pipeline &p = pipeline();
  RunConfig c = p.base;
  c.steps = 3;
  c.grad_accum = 2;
  c.checkpoint_out = p.root + "/repeat_a.zssl";
  const TrainResult a = run_pretrain(c);
  CHECK(a.steps_done == 3);
  const std::string bytes_a = slurp(c.checkpoint_out);
  c.checkpoint_out = p.root + "/repeat_b.zssl";
  run_pretrain(c);
  CHECK(slurp(c.checkpoint_out) == bytes_a);
  fs::remove(p.root + "/repeat_a.zssl");
  fs::remove(c.checkpoint_out);
}

TEST_CASE("non-finite values abort without writing a checkpoint") {
  const Pipeline &p = pipeline();

  // Poison one weight of the saved model, then try to keep training.
  ParamMap poisoned = load_tensors(p.pretrain_ckpt);
  poisoned.at("in_proj.w").value()[0] = INFINITY;
  const std::string poison_path = p.root + "/poisoned.zssl";
  save_tensors(poison_path, poisoned);

  RunConfig c = p.base;
  c.steps = 10;
  c.checkpoint_in = poison_path;
  c.checkpoint_out = p.root + "/should_not_exist.zssl";
  const TrainResult r = run_pretrain(c);
  CHECK(r.nan_abort);
  CHECK(r.steps_done == 6);  // restored step count, no progress
  CHECK_FALSE(fs::exists(c.checkpoint_out));
  fs::remove(poison_path);
}

TEST_CASE("metrics log records one JSON line per optimizer step") {
  const Pipeline &p = pipeline();
  RunConfig c = p.base;
  c.steps = 5;
  c.checkpoint_out = p.root + "/metrics_run.zssl";
  c.metrics_path = p.root + "/metrics.jsonl";
  fs::remove(c.metrics_path);
  run_pretrain(c);

  std::ifstream in(c.metrics_path);
  REQUIRE(in.is_open());
  std::string line;
  int64_t expected_step = 1;
  while (std::getline(in, line)) {
    const nlohmann::json rec = nlohmann::json::parse(line);
    CHECK(rec.at("step").get<int64_t>() == expected_step);
    CHECK(rec.at("epoch").get<int64_t>() >= 0);
    CHECK(rec.at("lr").get<double>() > 0.0);
    CHECK(std::isfinite(rec.at("loss").get<double>()));
    const double acc = rec.at("accuracy").get<double>();
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    CHECK(rec.at("wall_s").get<double>() >= 0.0);
    CHECK(rec.at("batches_per_s").get<double>() > 0.0);
    CHECK(rec.at("ops").is_object());
    CHECK(rec.at("ops").at("matmul").get<uint64_t>() > 0);
    ++expected_step;
  }
  CHECK(expected_step == 6);  // exactly steps 1..5
  fs::remove(c.metrics_path);
  fs::remove(c.checkpoint_out);
}

TEST_CASE("metrics writer rejects non-increasing steps") {
  const std::string path =
      (fs::temp_directory_path() / "zssl_metrics_order.jsonl").string();
  fs::remove(path);
  MetricsLog log(path);
  log.log_step(1, 0, 0.1, 1.0, 0.0, 0.0, 1.0, {});
  CHECK_THROWS_WITH_AS(log.log_step(1, 0, 0.1, 1.0, 0.0, 0.0, 1.0, {}),
                       doctest::Contains("strictly increase"), ContractError);
  MetricsLog off("");
  CHECK_FALSE(off.enabled());
  off.log_step(1, 0, 0.1, 1.0, 0.0, 0.0, 1.0, {});  // disabled: no-op
  fs::remove(path);
}

TEST_CASE("fine-tuning from the pre-trained backbone reduces the CTC loss") {
  const Pipeline &p = pipeline();
  RunConfig c = p.base;
  c.steps = 25;
  c.finetune_lr = 0.003;
  c.checkpoint_in = p.pretrain_ckpt;
  c.checkpoint_out = p.root + "/finetune.zssl";
  const TrainResult r = run_finetune(c);
  CHECK(!r.nan_abort);
  CHECK(r.steps_done == 25);
  CHECK(r.final_loss < r.initial_loss);

  const ParamMap saved = load_tensors(c.checkpoint_out);
  CHECK(get_scalar(saved, "meta.stage") == 1.0);
  CHECK(saved.count("ctc.w") == 1);
  // Pre-training head tensors never enter fine-tune checkpoints.
  for (const auto &[name, tensor] : saved) {
    CHECK(!name.starts_with("objective."));
  }
}

TEST_CASE("frozen frontend steps leave frontend weights untouched") {
  const Pipeline &p = pipeline();
  RunConfig c = p.base;
  c.steps = 5;
  c.freeze_frontend_steps = 5;
  c.checkpoint_in = p.pretrain_ckpt;
  c.checkpoint_out = p.root + "/frozen.zssl";
  run_finetune(c);

  const ParamMap before = load_tensors(p.pretrain_ckpt);
  const ParamMap after = load_tensors(c.checkpoint_out);
  bool saw_frontend = false;
  for (const auto &[name, tensor] : after) {
    if (name.starts_with("frontend.")) {
      saw_frontend = true;
      CHECK(tensors_equal(tensor, before.at(name)));
    }
  }
  CHECK(saw_frontend);
  // The projection right behind the frontend did train.
  CHECK_FALSE(tensors_equal(after.at("in_proj.w"), before.at("in_proj.w")));
  fs::remove(c.checkpoint_out);
}

TEST_CASE("checkpoint shape mismatches name the parameter and both shapes") {
  const Pipeline &p = pipeline();
  RunConfig c = p.base;
  c.frontend_channels = 12;  // disagrees with the 8-channel checkpoint
  c.steps = 1;
  c.checkpoint_in = p.pretrain_ckpt;
  c.checkpoint_out = p.root + "/mismatch.zssl";
  CHECK_THROWS_WITH_AS(run_finetune(c),
                       doctest::Contains("does not match model shape"),
                       ShapeError);
}

TEST_CASE("load_matching_params skips bookkeeping and foreign names") {
  ParamMap model;
  model.emplace("w", Tensor::zeros({2, 2}, true));
  ParamMap ckpt;
  ckpt.emplace("w", Tensor::full({2, 2}, 3.0));
  ckpt.emplace("opt.w.m", Tensor::full({2, 2}, 9.0));
  put_scalar(ckpt, "meta.step", 7.0);
  ckpt.emplace("other", Tensor::full({4}, 1.0));
  CHECK(load_matching_params(model, ckpt) == 1);
  CHECK(model.at("w").value()[0] == 3.0);

  ParamMap bad;
  bad.emplace("w", Tensor::full({3}, 1.0));
  CHECK_THROWS_WITH_AS(load_matching_params(model, bad),
                       doctest::Contains("'w'"), ShapeError);
}

TEST_CASE("decoding writes one line per utterance and aggregates errors") {
  const Pipeline &p = pipeline();
  RunConfig c = p.base;
  c.steps = 25;
  c.finetune_lr = 0.003;
  c.checkpoint_in = p.pretrain_ckpt;
  c.checkpoint_out = p.root + "/decode_model.zssl";
  run_finetune(c);

  c.checkpoint_in = c.checkpoint_out;
  c.beam = 4;
  c.decode_out = p.root + "/decoded.tsv";
  const DecodeSummary summary = run_decode(c);
  CHECK(summary.utterances == 12);
  CHECK(summary.ref_words > 0);
  CHECK(summary.wer() >= 0.0);

  std::ifstream in(c.decode_out);
  REQUIRE(in.is_open());
  std::string line;
  int64_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    CHECK(line.find('\t') != std::string::npos);
    CHECK(line.compare(0, 3, "utt") == 0);
  }
  CHECK(lines == 12);
  fs::remove(c.checkpoint_out);
  fs::remove(c.decode_out);
}

TEST_CASE("encoder-depth targets use the tapped stack's width") {
  const Pipeline &p = pipeline();
  RunConfig c = p.base;
  c.manifest = p.corpus_manifest;
  c.feature_stack = 1;  // the tiny profile's second stack, 16 wide
  c.checkpoint_in = p.pretrain_ckpt;
  c.codebook_path = p.root + "/codebook_stack.zssl";
  c.labels_dir = p.root + "/labels_stack";
  c.manifest_out = p.root + "/manifest_stack.tsv";
  const LabelingResult r = run_make_labels(c);
  CHECK(r.utterances == 12);

  const Codebook cb = load_codebook(c.codebook_path);
  CHECK(cb.num_units() == 5);
  CHECK(cb.feature_dim() == 16);

  ManifestReader reader(c.manifest_out);
  const FrontendConfig frontend = frontend_from_config(c);
  while (auto rec = reader.next()) {
    const LabelSequence labels = read_label_file(rec->label_path);
    CHECK(static_cast<int64_t>(labels.size()) ==
          frontend.output_length(rec->sample_count));
  }
  fs::remove_all(c.labels_dir);
}

TEST_CASE("geometry benchmark favors the multi-rate encoder") {
  const Pipeline &p = pipeline();
  RunConfig c = p.base;
  c.bench_reps = 2;
  const BenchPoint point = run_bench_point(c, 64);
  CHECK(point.t == 64);
  CHECK(point.multi_rate_attention_flops ==
        attention_flops_oracle(encoder_from_config(c), 64));
  CHECK(point.single_rate_attention_flops ==
        transformer_attention_flops_oracle(encoder_from_config(c), 64));
  CHECK(point.flop_ratio < 1.0);
  CHECK(point.multi_rate_seconds > 0.0);
  CHECK(point.single_rate_seconds > 0.0);

  c.bench_t = 64;
  c.bench_out = p.root + "/bench.jsonl";
  fs::remove(c.bench_out);
  run_bench(c);
  std::ifstream in(c.bench_out);
  REQUIRE(in.is_open());
  std::string line;
  REQUIRE(std::getline(in, line));
  const nlohmann::json rec = nlohmann::json::parse(line);
  CHECK(rec.at("t").get<int64_t>() == 64);
  CHECK(rec.at("flop_ratio").get<double>() < 1.0);
  CHECK(rec.at("wall_ratio").get<double>() > 0.0);
  CHECK(rec.at("batches_per_s").get<double>() > 0.0);
  fs::remove(c.bench_out);
}

TEST_CASE("stage validation rejects unusable configurations") {
  RunConfig c;
  c.manifest = "";
  CHECK_THROWS_AS(run_pretrain(c), ContractError);

  const Pipeline &p = pipeline();
  c = p.base;
  c.grad_accum = 0;
  CHECK_THROWS_AS(run_pretrain(c), ContractError);

  c = p.base;
  c.encoder_profile = "huge";
  CHECK_THROWS_WITH_AS(run_pretrain(c), doctest::Contains("encoder_profile"),
                       ContractError);

  c = p.base;
  c.loss = "l2";
  CHECK_THROWS_WITH_AS(run_pretrain(c), doctest::Contains("loss"),
                       ContractError);

  // A manifest with no records cannot make progress.
  const std::string empty =
      (fs::temp_directory_path() / "zssl_empty_manifest.tsv").string();
  std::ofstream(empty, std::ios::trunc).close();
  c = p.base;
  c.manifest = empty;
  c.steps = 1;
  c.checkpoint_out = "";
  CHECK_THROWS_WITH_AS(run_pretrain(c), doctest::Contains("no batches"),
                       ContractError);
  fs::remove(empty);

  c = p.base;
  c.feature_stack = 0;
  c.checkpoint_in = "";
  CHECK_THROWS_WITH_AS(run_make_labels(c), doctest::Contains("checkpoint_in"),
                       ContractError);

  c = p.base;
  c.feature_stack = 7;
  c.checkpoint_in = p.pretrain_ckpt;
  CHECK_THROWS_WITH_AS(run_make_labels(c), doctest::Contains("out of range"),
                       ContractError);
}

// Copyright 2025-2026 The zssl Authors
//
// Command-line driver for the pipeline stages. Exit codes: 0 on success,
// 2 when training stops on non-finite values, 1 on config or IO errors.
//
// Licensed under the Apache License, Version 2.0

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "zssl/config.hpp"
#include "zssl/corpus.hpp"
#include "zssl/error.hpp"
#include "zssl/trainer.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

zssl::RunConfig resolve_config(const CommonArgs &args) {
  bool saw_seed = false;
  zssl::RunConfig config;
  if (!args.config_path.empty()) {
    config = zssl::load_run_config(args.config_path, &saw_seed);
  }
  for (const std::string &kv : args.overrides) {
    bool saw = false;
    zssl::apply_override(config, kv, &saw);
    saw_seed = saw_seed || saw;
  }
  zssl::apply_env_seed(config, saw_seed);
  return config;
}

int run_stage(const std::string &stage, const CommonArgs &args) {
  zssl::RunConfig config = resolve_config(args);
  if (stage == "make-data") {
    zssl::CorpusSpec spec;
    spec.dir = config.data_dir;
    spec.num_utts = config.num_utts;
    spec.min_seconds = config.min_utt_seconds;
    spec.max_seconds = config.max_utt_seconds;
    spec.lexicon_size = config.lexicon_size;
    spec.noise_level = config.noise_level;
    spec.seed = config.seed;
    zssl::CorpusInfo info = zssl::make_corpus(spec);
    std::cout << "wrote " << info.manifest_path << ": " << config.num_utts
              << " utterances, "
              << static_cast<double>(info.total_samples) /
                     zssl::kCorpusSampleRate
              << " s of audio, lexicon " << info.lexicon.size() << " words\n";
  } else if (stage == "kmeans") {
    zssl::LabelingResult r = zssl::run_make_labels(config);
    std::cout << "wrote " << r.manifest_out << ": " << r.utterances
              << " utterances, " << r.frames << " frames, codebook "
              << r.codebook_path << ", fit inertia " << r.inertia << "\n";
  } else if (stage == "pretrain") {
    zssl::TrainResult r = zssl::run_pretrain(config);
    std::cout << "pretrain: " << r.steps_done << " steps, loss "
              << r.initial_loss << " -> " << r.final_loss
              << ", masked accuracy " << r.final_accuracy << "\n";
    if (r.nan_abort) return 2;
  } else if (stage == "finetune") {
    zssl::TrainResult r = zssl::run_finetune(config);
    std::cout << "finetune: " << r.steps_done << " steps, loss "
              << r.initial_loss << " -> " << r.final_loss
              << ", exact-match rate " << r.final_accuracy << "\n";
    if (r.nan_abort) return 2;
  } else if (stage == "decode") {
    zssl::DecodeSummary r = zssl::run_decode(config);
    std::cout << "decoded " << r.utterances << " utterances to " << r.out_path;
    if (r.ref_words > 0) {
      std::cout << ", WER " << r.wer() << " (" << r.word_errors << "/"
                << r.ref_words << ")";
    }
    std::cout << "\n";
  } else if (stage == "bench") {
    zssl::run_bench(config);
  }
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{
      "Self-supervised speech pipeline: synthetic data, discrete targets, "
      "masked pre-training, letter fine-tuning, beam decoding, and encoder "
      "geometry benchmarks."};
  app.require_subcommand(1);

  CommonArgs args;
  std::string stage;
  auto add_stage = [&](const std::string &name, const std::string &help) {
    CLI::App *cmd = app.add_subcommand(name, help);
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--set", args.overrides,
                    "key=value config override (repeatable)");
    cmd->callback([&stage, name]() { stage = name; });
  };
  add_stage("make-data", "Generate the synthetic corpus and its manifest");
  add_stage("kmeans", "Cluster frame features into discrete training targets");
  add_stage("pretrain", "Masked-prediction pre-training");
  add_stage("finetune", "Letter-level CTC fine-tuning");
  add_stage("decode", "Beam decoding with shallow LM fusion");
  add_stage("bench", "Compare multi-rate and single-rate encoder geometries");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    return run_stage(stage, args);
  } catch (const zssl::Error &err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const std::exception &err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
}

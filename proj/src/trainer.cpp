// Copyright 2025-2026 The zssl Authors
//
// Model assembly and the two training loops (masked prediction, letter
// CTC), with deterministic resume, gradient accumulation, and the per-step
// metrics log.
//
// Licensed under the Apache License, Version 2.0

#include "zssl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "zssl/asr.hpp"
#include "zssl/checkpoint.hpp"
#include "zssl/corpus.hpp"
#include "zssl/datapipe.hpp"
#include "zssl/error.hpp"
#include "zssl/optimizer.hpp"

namespace zssl {
namespace {

using nlohmann::json;

std::string shape_text(const Shape &shape) {
  std::string out = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

double seconds_since(const std::chrono::steady_clock::time_point &t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

// ---------------------------------------------------------------------------
// MetricsLog

struct MetricsLog::Impl {
  std::ofstream out;
  std::string path;
  int64_t last_step = -1;
};

MetricsLog::MetricsLog(const std::string &path) {
  if (path.empty()) return;
  impl_ = std::make_unique<Impl>();
  impl_->path = path;
  impl_->out.open(path, std::ios::app);
  if (!impl_->out.is_open()) {
    throw IoError("cannot open metrics log for append: " + path);
  }
}

MetricsLog::~MetricsLog() = default;
MetricsLog::MetricsLog(MetricsLog &&) noexcept = default;
MetricsLog &MetricsLog::operator=(MetricsLog &&) noexcept = default;

bool MetricsLog::enabled() const { return impl_ != nullptr; }

void MetricsLog::log_step(
    int64_t step, int64_t epoch, double lr, double loss, double accuracy,
    double wall_seconds, double batches_per_sec,
    const std::vector<std::pair<std::string, uint64_t>> &op_counts) {
  if (impl_ == nullptr) return;
  if (step <= impl_->last_step) {
    throw ContractError("metrics steps must strictly increase (" +
                        std::to_string(step) + " after " +
                        std::to_string(impl_->last_step) + ")");
  }
  json record;
  record["step"] = step;
  record["epoch"] = epoch;
  record["lr"] = lr;
  record["loss"] = loss;
  record["accuracy"] = accuracy;
  record["wall_s"] = wall_seconds;
  record["batches_per_s"] = batches_per_sec;
  json ops = json::object();
  for (const auto &[name, count] : op_counts) ops[name] = count;
  record["ops"] = ops;
  impl_->out << record.dump() << "\n";
  impl_->out.flush();
  impl_->last_step = step;
}

// ---------------------------------------------------------------------------
// Model assembly

FrontendConfig frontend_from_config(const RunConfig &config) {
  if (config.frontend_channels < 1) {
    throw ContractError("frontend_channels must be >= 1");
  }
  // Per-layer normalization keeps activation magnitudes near unit scale
  // through the whole conv stack. Without it the small-signal slope of the
  // activation (~0.19) compounds across the six un-normalized layers and a
  // freshly initialized stack emits features ~1e-5 in magnitude, which the
  // encoder cannot recover from at these training budgets.
  return FrontendConfig::make_layer_norm_everywhere(config.frontend_channels);
}

EncoderConfig encoder_from_config(const RunConfig &config) {
  if (config.encoder_profile == "tiny") return EncoderConfig::make_tiny();
  if (config.encoder_profile == "small") {
    if (config.encoder_dim < 2) throw ContractError("encoder_dim must be >= 2");
    return EncoderConfig::make_small(config.encoder_dim);
  }
  if (config.encoder_profile == "base") return EncoderConfig::make_base();
  throw ContractError("unknown encoder_profile '" + config.encoder_profile +
                      "' (want tiny, small, or base)");
}

namespace {

ModelBundle init_backbone(const RunConfig &config, std::mt19937_64 &rng) {
  ModelBundle model;
  model.frontend = frontend_from_config(config);
  model.encoder = encoder_from_config(config);
  model.params = frontend_init_params(model.frontend, rng);
  const int64_t feat_dim = model.frontend.output_channels();
  const int64_t enc_in = model.encoder.input_dim();
  model.params.emplace(
      "in_proj.w",
      Tensor::randn({feat_dim, enc_in}, rng,
                    1.0 / std::sqrt(static_cast<double>(feat_dim)), true));
  model.params.emplace("in_proj.b", Tensor::zeros({enc_in}, true));
  ParamMap enc = encoder_init_params(model.encoder, rng);
  model.params.insert(enc.begin(), enc.end());
  return model;
}

}  // namespace

ModelBundle init_pretrain_model(const RunConfig &config) {
  if (config.num_units < 2) throw ContractError("num_units must be >= 2");
  if (config.loss != "ce" && config.loss != "cosine") {
    throw ContractError("loss must be 'ce' or 'cosine', got '" + config.loss +
                        "'");
  }
  if (config.loss == "cosine" && config.codebook_width < 1) {
    throw ContractError("codebook_width must be >= 1 for the cosine loss");
  }
  std::mt19937_64 rng(mix_seed(config.seed, hash_string("model-init")));
  ModelBundle model = init_backbone(config, rng);
  ParamMap head = objective_init_params(
      model.encoder.output_dim(), config.num_units, rng,
      config.loss == "cosine" ? config.codebook_width : 0);
  // Masking substitutes frontend feature rows, so the embedding lives in the
  // frontend width, not the encoder width the head init assumes.
  head.erase("objective.mask_embed");
  head.emplace("objective.mask_embed",
               Tensor::randn({model.frontend.output_channels()}, rng, 0.02,
                             true));
  model.params.insert(head.begin(), head.end());
  return model;
}

ModelBundle init_finetune_model(const RunConfig &config) {
  std::mt19937_64 rng(mix_seed(config.seed, hash_string("model-init")));
  ModelBundle model = init_backbone(config, rng);
  const int64_t d = model.encoder.output_dim();
  model.params.emplace(
      "ctc.w", Tensor::randn({d, kVocabSize}, rng,
                             1.0 / std::sqrt(static_cast<double>(d)), true));
  model.params.emplace("ctc.b", Tensor::zeros({kVocabSize}, true));
  return model;
}

int64_t load_matching_params(ParamMap &model, const ParamMap &checkpoint) {
  int64_t restored = 0;
  for (const auto &[name, tensor] : checkpoint) {
    if (name.starts_with("opt.") || name.starts_with("meta.")) continue;
    auto it = model.find(name);
    if (it == model.end()) continue;
    if (it->second.shape() != tensor.shape()) {
      throw ShapeError("parameter '" + name + "': checkpoint shape " +
                       shape_text(tensor.shape()) + " does not match model shape " +
                       shape_text(it->second.shape()));
    }
    std::copy(tensor.value().begin(), tensor.value().end(),
              it->second.value().begin());
    ++restored;
  }
  return restored;
}

Tensor backbone_forward(Tape &tape, const ModelBundle &model,
                        const Tensor &wave, const MaskSet *mask,
                        std::vector<Tensor> *stack_taps) {
  Tensor feats = frontend_extract(tape, model.frontend, model.params, wave);
  if (mask != nullptr) {
    feats = apply_mask(tape, feats, *mask,
                       model.params.at("objective.mask_embed"));
  }
  Tensor x = tape.add_bias(tape.matmul(feats, model.params.at("in_proj.w")),
                           model.params.at("in_proj.b"));
  return encoder_forward(tape, model.encoder, model.params, x, "encoder.",
                         stack_taps);
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

struct EpochStream {
  std::shared_ptr<ManifestReader> reader;
  std::unique_ptr<DynamicBatcher> batcher;
};

EpochStream open_epoch(const RunConfig &config, int64_t epoch) {
  EpochStream stream;
  stream.reader = std::make_shared<ManifestReader>(config.manifest);
  BucketingConfig bc;
  bc.estimate_records = config.estimate_records;
  bc.num_buckets = config.num_buckets;
  bc.buffer_cap = config.buffer_cap;
  bc.max_batch_seconds = config.max_batch_seconds;
  bc.seed = mix_seed(config.seed,
                     mix_seed(hash_string("epoch"), static_cast<uint64_t>(epoch)));
  auto reader = stream.reader;
  stream.batcher = std::make_unique<DynamicBatcher>(
      bc, [reader]() { return reader->next(); });
  return stream;
}

void zero_all_grads(ParamMap &params) {
  for (auto &[name, tensor] : params) tensor.clear_grad();
}

void validate_training(const RunConfig &config) {
  if (config.manifest.empty()) throw ContractError("manifest path is empty");
  if (config.steps < 0) throw ContractError("steps must be >= 0");
  if (config.grad_accum < 1) throw ContractError("grad_accum must be >= 1");
  if (config.checkpoint_every < 0) {
    throw ContractError("checkpoint_every must be >= 0");
  }
  if (config.freeze_frontend_steps < 0) {
    throw ContractError("freeze_frontend_steps must be >= 0");
  }
}

ParamMap checkpoint_payload(const ParamMap &params, const ScaledAdam &opt,
                            int64_t step, int64_t epoch, int64_t stage) {
  ParamMap out = params;
  opt.save_state(out);
  put_scalar(out, "meta.step", static_cast<double>(step));
  put_scalar(out, "meta.epoch", static_cast<double>(epoch));
  put_scalar(out, "meta.stage", static_cast<double>(stage));
  return out;
}

uint64_t utterance_seed(const RunConfig &config, int64_t epoch,
                        const std::string &id) {
  return mix_seed(mix_seed(config.seed, static_cast<uint64_t>(epoch)),
                  hash_string(id));
}

std::vector<std::pair<std::string, uint64_t>> tape_op_summary(const Tape &tape) {
  return {{"matmul", tape.op_count("matmul")},
          {"conv1d", tape.op_count("conv1d")},
          {"flops", tape.flops()},
          {"attention_flops", tape.flops_in("attention")}};
}

// One training loop driving either objective; `step_fn` consumes a batch on
// a fresh tape and returns the mean loss tensor (or nothing usable) plus an
// accuracy fraction for the log.
struct BatchOutcome {
  std::optional<Tensor> loss;
  double correct = 0.0;
  double total = 0.0;
};

struct LoopHooks {
  std::function<BatchOutcome(Tape &, const Batch &, int64_t epoch)> process;
  std::function<ParamMap &(int64_t opt_step)> trainable;
  int64_t stage = 0;
};

TrainResult run_training_loop(const RunConfig &config, ModelBundle &model,
                              ScaledAdam &opt, int64_t start_step,
                              double base_lr, const LoopHooks &hooks) {
  MetricsLog metrics(config.metrics_path);
  EdenSchedule sched{base_lr, config.step_warmup, config.epoch_warmup};
  TrainResult result;
  result.checkpoint_path = config.checkpoint_out;
  result.steps_done = start_step;

  const auto t0 = std::chrono::steady_clock::now();
  int64_t opt_step = start_step;
  int64_t skip = start_step * config.grad_accum;  // deterministic fast-forward
  int64_t micro = 0;
  int64_t batches_done = 0;
  int64_t epoch = 0;
  bool saved_at = false;  // checkpoint already written at current opt_step
  double last_loss = 0.0;
  double last_accuracy = 0.0;
  bool first_loss_seen = false;

  zero_all_grads(model.params);
  try {
    while (opt_step < config.steps) {
      EpochStream stream = open_epoch(config, epoch);
      int64_t batches_in_epoch = 0;
      while (opt_step < config.steps) {
        std::optional<Batch> batch = stream.batcher->next();
        if (!batch.has_value()) break;
        ++batches_in_epoch;
        if (skip > 0) {
          --skip;
          continue;
        }
        Tape tape;
        BatchOutcome out = hooks.process(tape, *batch, epoch);
        ++batches_done;
        ++micro;
        if (out.loss.has_value()) {
          const double loss_val = out.loss->item();
          if (!std::isfinite(loss_val)) {
            throw NumericError("batch loss is not finite");
          }
          // Scale so the accumulated gradient is the mean over the window.
          Tensor scaled =
              config.grad_accum == 1
                  ? *out.loss
                  : tape.scale(*out.loss,
                               1.0 / static_cast<double>(config.grad_accum));
          tape.backward(scaled);
          last_loss = loss_val;
          last_accuracy = out.total > 0 ? out.correct / out.total : 0.0;
          if (!first_loss_seen) {
            result.initial_loss = loss_val;
            first_loss_seen = true;
          }
        }
        if (micro < config.grad_accum) continue;
        micro = 0;
        const double lr = eden_lr(sched, static_cast<double>(opt_step),
                                  static_cast<double>(epoch));
        opt.step(hooks.trainable(opt_step), lr);
        zero_all_grads(model.params);
        ++opt_step;
        saved_at = false;
        const double elapsed = seconds_since(t0);
        metrics.log_step(opt_step, epoch, lr, last_loss, last_accuracy,
                         elapsed,
                         elapsed > 0 ? batches_done / elapsed : 0.0,
                         tape_op_summary(tape));
        if (!config.checkpoint_out.empty() && config.checkpoint_every > 0 &&
            opt_step % config.checkpoint_every == 0) {
          save_tensors(config.checkpoint_out,
                       checkpoint_payload(model.params, opt, opt_step, epoch,
                                          hooks.stage));
          saved_at = true;
        }
      }
      if (batches_in_epoch == 0) {
        throw ContractError("manifest produced no batches: " + config.manifest);
      }
      ++epoch;
    }
  } catch (const NumericError &err) {
    std::cerr << "stopping on non-finite values after step "
              << opt_step << ": " << err.what() << "\n";
    result.nan_abort = true;
  }

  result.steps_done = opt_step;
  result.final_loss = last_loss;
  result.final_accuracy = last_accuracy;
  if (!result.nan_abort && !config.checkpoint_out.empty() && !saved_at) {
    save_tensors(
        config.checkpoint_out,
        checkpoint_payload(model.params, opt, opt_step, epoch, hooks.stage));
  }
  return result;
}

}  // namespace

TrainResult run_pretrain(const RunConfig &config) {
  validate_training(config);
  ModelBundle model = init_pretrain_model(config);
  ScaledAdam opt;
  int64_t start_step = 0;
  if (!config.checkpoint_in.empty()) {
    ParamMap ckpt = load_tensors(config.checkpoint_in);
    load_matching_params(model.params, ckpt);
    // Deterministic resume only applies to a checkpoint from this stage;
    // a bare parameter bundle just warm-starts the weights.
    if (has_scalar(ckpt, "meta.stage") &&
        get_scalar(ckpt, "meta.stage") == 0.0 && has_scalar(ckpt, "meta.step")) {
      opt.load_state(ckpt);
      start_step = static_cast<int64_t>(get_scalar(ckpt, "meta.step"));
    }
  }

  const bool cosine = (config.loss == "cosine");
  const MaskSpec mask_base{config.mask_start_prob, config.mask_span,
                           config.mask_min, 0};

  LoopHooks hooks;
  hooks.stage = 0;
  hooks.trainable = [&model](int64_t) -> ParamMap & { return model.params; };
  hooks.process = [&](Tape &tape, const Batch &batch,
                      int64_t epoch) -> BatchOutcome {
    BatchOutcome out;
    std::vector<Tensor> parts;
    for (const SegmentRecord &rec : batch.records) {
      if (rec.label_path.empty()) {
        throw ContractError("record '" + rec.id +
                            "' has no label file; run the kmeans stage first");
      }
      const int64_t frames = model.frontend.output_length(rec.sample_count);
      if (frames < 2) {
        std::cerr << "skipping '" << rec.id << "': too short for the frontend\n";
        continue;
      }
      LabelSequence labels = read_label_file(rec.label_path);
      MaskSpec spec = mask_base;
      spec.seed = utterance_seed(config, epoch, rec.id);
      MaskSet mask = sample_masks(spec, frames);
      Tensor wave = load_wave(rec);
      Tensor o = backbone_forward(tape, model, wave, &mask);
      AlignedBatch aligned = align_to_labels(tape, o, labels, mask);
      if (aligned.mask.empty()) continue;
      Tensor loss_u;
      if (cosine) {
        PredictionHead head{model.params.at("objective.proj"),
                            model.params.at("objective.codebook"), config.tau};
        loss_u = hubert_loss(tape, head, aligned.features, aligned.labels,
                             aligned.mask);
      } else {
        loss_u = ce_loss(tape, model.params.at("objective.proj"),
                         aligned.features, aligned.labels, aligned.mask);
      }
      parts.push_back(loss_u);

      // Masked-frame accuracy, measured off-graph.
      Tape probe;
      probe.set_grad_enabled(false);
      Tensor scores =
          cosine ? probe.cosine_scores(
                       probe.matmul(aligned.features,
                                    model.params.at("objective.proj")),
                       model.params.at("objective.codebook"))
                 : probe.matmul(aligned.features,
                                model.params.at("objective.proj"));
      const int64_t classes = scores.cols();
      for (int64_t row : aligned.mask) {
        const double *r = scores.data() + row * classes;
        int64_t best = 0;
        for (int64_t k = 1; k < classes; ++k) {
          if (r[k] > r[best]) best = k;
        }
        out.total += 1.0;
        if (best == aligned.labels[static_cast<size_t>(row)]) {
          out.correct += 1.0;
        }
      }
    }
    if (parts.empty()) return out;
    Tensor total = parts.front();
    for (size_t i = 1; i < parts.size(); ++i) total = tape.add(total, parts[i]);
    out.loss = tape.scale(total, 1.0 / static_cast<double>(parts.size()));
    return out;
  };

  return run_training_loop(config, model, opt, start_step, config.base_lr,
                           hooks);
}

TrainResult run_finetune(const RunConfig &config) {
  validate_training(config);
  ModelBundle model = init_finetune_model(config);
  ScaledAdam opt;
  int64_t start_step = 0;
  if (!config.checkpoint_in.empty()) {
    ParamMap ckpt = load_tensors(config.checkpoint_in);
    load_matching_params(model.params, ckpt);
    if (has_scalar(ckpt, "meta.stage") &&
        get_scalar(ckpt, "meta.stage") == 1.0 && has_scalar(ckpt, "meta.step")) {
      opt.load_state(ckpt);
      start_step = static_cast<int64_t>(get_scalar(ckpt, "meta.step"));
    }
  }

  // Frozen-phase updates exclude the frontend; the map aliases the same
  // tensors, so unfrozen steps keep training the originals.
  ParamMap without_frontend;
  for (const auto &[name, tensor] : model.params) {
    if (!name.starts_with("frontend.")) without_frontend.emplace(name, tensor);
  }

  LoopHooks hooks;
  hooks.stage = 1;
  hooks.trainable = [&model, &without_frontend,
                     &config](int64_t opt_step) -> ParamMap & {
    return opt_step < config.freeze_frontend_steps ? without_frontend
                                                   : model.params;
  };
  hooks.process = [&](Tape &tape, const Batch &batch,
                      int64_t) -> BatchOutcome {
    BatchOutcome out;
    std::vector<Tensor> parts;
    for (const SegmentRecord &rec : batch.records) {
      if (rec.transcript.empty()) {
        std::cerr << "skipping '" << rec.id << "': no transcript\n";
        continue;
      }
      const int64_t frames = model.frontend.output_length(rec.sample_count);
      if (frames < 1) continue;
      LabelSequence target = text_to_labels(rec.transcript);
      Tensor wave = load_wave(rec);
      Tensor o = backbone_forward(tape, model, wave);
      Tensor logits = tape.add_bias(tape.matmul(o, model.params.at("ctc.w")),
                                    model.params.at("ctc.b"));
      Tensor log_probs = tape.log_softmax(logits);
      CtcResult res = ctc_loss(tape, log_probs, target);
      if (!res.feasible) {
        std::cerr << "skipping '" << rec.id
                  << "': transcript longer than the frame budget\n";
        continue;
      }
      parts.push_back(res.loss);
      out.total += 1.0;
      const std::string greedy = labels_to_text(ctc_greedy(log_probs));
      if (wer(split_words(greedy), split_words(rec.transcript)).errors() == 0) {
        out.correct += 1.0;
      }
    }
    if (parts.empty()) return out;
    Tensor total = parts.front();
    for (size_t i = 1; i < parts.size(); ++i) total = tape.add(total, parts[i]);
    out.loss = tape.scale(total, 1.0 / static_cast<double>(parts.size()));
    return out;
  };

  return run_training_loop(config, model, opt, start_step, config.finetune_lr,
                           hooks);
}

}  // namespace zssl

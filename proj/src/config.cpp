// Copyright 2025-2026 The zssl Authors
//
// RunConfig JSON (de)serialization, command-line overrides, and the
// environment seed fallback.
//
// Licensed under the Apache License, Version 2.0

#include "zssl/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "zssl/error.hpp"

namespace zssl {
namespace {

using nlohmann::json;

// Visits every (name, member) pair once; the single source of truth for the
// field list, shared by parse, serialize, and override handling.
template <typename Config, typename Fn>
void for_each_field(Config &c, Fn &&fn) {
  fn("seed", c.seed);
  fn("metrics_path", c.metrics_path);
  fn("data_dir", c.data_dir);
  fn("num_utts", c.num_utts);
  fn("min_utt_seconds", c.min_utt_seconds);
  fn("max_utt_seconds", c.max_utt_seconds);
  fn("lexicon_size", c.lexicon_size);
  fn("noise_level", c.noise_level);
  fn("frontend_channels", c.frontend_channels);
  fn("mfcc_mels", c.mfcc_mels);
  fn("mfcc_ceps", c.mfcc_ceps);
  fn("encoder_profile", c.encoder_profile);
  fn("encoder_dim", c.encoder_dim);
  fn("loss", c.loss);
  fn("codebook_width", c.codebook_width);
  fn("mask_start_prob", c.mask_start_prob);
  fn("mask_span", c.mask_span);
  fn("mask_min", c.mask_min);
  fn("tau", c.tau);
  fn("num_units", c.num_units);
  fn("kmeans_iters", c.kmeans_iters);
  fn("kmeans_max_frames", c.kmeans_max_frames);
  fn("feature_stack", c.feature_stack);
  fn("codebook_path", c.codebook_path);
  fn("labels_dir", c.labels_dir);
  fn("manifest_out", c.manifest_out);
  fn("manifest", c.manifest);
  fn("estimate_records", c.estimate_records);
  fn("num_buckets", c.num_buckets);
  fn("buffer_cap", c.buffer_cap);
  fn("max_batch_seconds", c.max_batch_seconds);
  fn("steps", c.steps);
  fn("grad_accum", c.grad_accum);
  fn("base_lr", c.base_lr);
  fn("finetune_lr", c.finetune_lr);
  fn("step_warmup", c.step_warmup);
  fn("epoch_warmup", c.epoch_warmup);
  fn("checkpoint_every", c.checkpoint_every);
  fn("checkpoint_in", c.checkpoint_in);
  fn("checkpoint_out", c.checkpoint_out);
  fn("freeze_frontend_steps", c.freeze_frontend_steps);
  fn("beam", c.beam);
  fn("lm_weight", c.lm_weight);
  fn("length_weight", c.length_weight);
  fn("length_in_words", c.length_in_words);
  fn("lm_order", c.lm_order);
  fn("lm_path", c.lm_path);
  fn("decode_out", c.decode_out);
  fn("bench_t", c.bench_t);
  fn("bench_reps", c.bench_reps);
  fn("bench_out", c.bench_out);
}

const char *type_name(const json &v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_string()) return "string";
  if (v.is_number()) return "number";
  if (v.is_null()) return "null";
  if (v.is_array()) return "array";
  return "object";
}

template <typename T>
void assign_field(const std::string &key, const json &value, T &member) {
  if constexpr (std::is_same_v<T, std::string>) {
    if (!value.is_string()) {
      throw ParseError("config key '" + key + "' expects a string, got " +
                       type_name(value));
    }
    member = value.get<std::string>();
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!value.is_boolean()) {
      throw ParseError("config key '" + key + "' expects a boolean, got " +
                       type_name(value));
    }
    member = value.get<bool>();
  } else {
    if (!value.is_number()) {
      throw ParseError("config key '" + key + "' expects a number, got " +
                       type_name(value));
    }
    member = value.get<T>();
  }
}

// Assigns every key in `object` to its RunConfig field; rejects unknowns.
void apply_json_object(RunConfig &config, const json &object, bool *saw_seed) {
  if (!object.is_object()) {
    throw ParseError("config root must be a JSON object");
  }
  for (const auto &[key, value] : object.items()) {
    bool found = false;
    for_each_field(config, [&](const char *name, auto &member) {
      if (!found && key == name) {
        found = true;
        assign_field(key, value, member);
      }
    });
    if (!found) {
      throw ParseError("unknown config key '" + key + "'");
    }
    if (saw_seed != nullptr && key == "seed") *saw_seed = true;
  }
}

}  // namespace

RunConfig parse_run_config(const std::string &json_text, bool *saw_seed) {
  if (saw_seed != nullptr) *saw_seed = false;
  json object = json::parse(json_text, nullptr, false);
  if (object.is_discarded()) {
    throw ParseError("config is not valid JSON");
  }
  RunConfig config;
  apply_json_object(config, object, saw_seed);
  return config;
}

RunConfig load_run_config(const std::string &path, bool *saw_seed) {
  std::ifstream in(path);
  if (!in.is_open()) {
    throw IoError("cannot open config file: " + path);
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), saw_seed);
}

std::string serialize_run_config(const RunConfig &config) {
  json object;
  for_each_field(const_cast<RunConfig &>(config),
                 [&](const char *name, auto &member) { object[name] = member; });
  return object.dump(2);
}

void apply_override(RunConfig &config, std::string_view key_eq_value,
                    bool *saw_seed) {
  const size_t eq = key_eq_value.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ParseError("override must look like key=value, got '" +
                     std::string(key_eq_value) + "'");
  }
  const std::string key(key_eq_value.substr(0, eq));
  const std::string raw(key_eq_value.substr(eq + 1));

  bool known = false;
  for_each_field(config, [&](const char *name, auto &) {
    if (key == name) known = true;
  });
  if (!known) {
    throw ParseError("unknown config key '" + key + "'");
  }

  // Prefer the JSON reading of the value (numbers, booleans); fall back to a
  // plain string so paths need no extra quoting on the command line.
  json parsed = json::parse(raw, nullptr, false);
  if (!parsed.is_discarded() && !parsed.is_structured() && !parsed.is_null()) {
    json object;
    object[key] = parsed;
    try {
      apply_json_object(config, object, saw_seed);
      return;
    } catch (const ParseError &) {
      // Typed reading mismatched the field; retry below as a string.
    }
  }
  json object;
  object[key] = raw;
  apply_json_object(config, object, saw_seed);
}

bool apply_env_seed(RunConfig &config, bool seed_explicit) {
  if (seed_explicit) return false;
  const char *env = std::getenv("ZSSL_SEED");
  if (env == nullptr || *env == '\0') return false;
  uint64_t value = 0;
  const char *end = env + std::string_view(env).size();
  auto [ptr, ec] = std::from_chars(env, end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(std::string("ZSSL_SEED is not a non-negative integer: ") +
                     env);
  }
  config.seed = value;
  return true;
}

}  // namespace zssl
